#include <doctest.h>

#include <cmath>

#include "support/metric_oracles.hpp"
#include "support/toy.hpp"
#include "toe/metrics.hpp"

using namespace toe;
using namespace toe::testing;

TEST_CASE("auroc hand examples") {
  CHECK(auroc(std::vector<int>{1, 0, 1, 0}, std::vector<Real>{0.9, 0.8, 0.4, 0.1}) == 0.75);
  CHECK(auroc(std::vector<int>{0, 0, 1, 1}, std::vector<Real>{0.1, 0.2, 0.3, 0.4}) == 1.0);
  CHECK(auroc(std::vector<int>{0, 1, 0, 1}, std::vector<Real>{0.5, 0.5, 0.5, 0.5}) == 0.5);
  CHECK_THROWS_AS(auroc(std::vector<int>{1, 1}, std::vector<Real>{0.1, 0.2}), ValidationError);
  CHECK_THROWS_AS(auroc(std::vector<int>{1, 0}, std::vector<Real>{0.1}), ValidationError);
}

TEST_CASE("auprc hand examples") {
  CHECK(auprc(std::vector<int>{0, 0, 1, 1}, std::vector<Real>{0.1, 0.2, 0.3, 0.4}) == 1.0);
  CHECK(auprc(std::vector<int>{1, 0}, std::vector<Real>{0.1, 0.9}) == 0.5);
  CHECK_THROWS_AS(auprc(std::vector<int>{0, 0}, std::vector<Real>{0.1, 0.2}), ValidationError);
}

TEST_CASE("ece hand examples") {
  CHECK(ece(std::vector<int>{0, 1, 0, 1}, std::vector<Real>{0.5, 0.5, 0.5, 0.5}) == 0.0);
  CHECK(ece(std::vector<int>{0, 0, 0}, std::vector<Real>{1.0, 1.0, 1.0}) == 1.0);
  // bin [0.2, 0.3): conf 0.2, acc 0; bin [0.9, 1]: conf 0.9, acc 1; equal weight.
  CHECK(ece(std::vector<int>{0, 0, 1, 1}, std::vector<Real>{0.2, 0.2, 0.9, 0.9}) == doctest::Approx(0.15).epsilon(1e-15));
  CHECK_THROWS_AS(ece(std::vector<int>{0}, std::vector<Real>{1.5}), ValidationError);
}

TEST_CASE("fidelity_mae examples") {
  CHECK(fidelity_mae(std::vector<Real>{0.3, 0.4}, std::vector<Real>{0.3, 0.4}) == 0.0);
  CHECK(fidelity_mae(std::vector<Real>{0.8}, std::vector<Real>{0.6}) == doctest::Approx(0.2).epsilon(1e-15));
  CHECK_THROWS_AS(fidelity_mae(std::vector<Real>{0.8}, std::vector<Real>{}), ValidationError);
}

TEST_CASE("metrics agree with brute-force re-implementations") {
  Rng rng(1);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 1000;
    std::vector<int> y(n);
    std::vector<Real> s(n), q(n);
    for (int i = 0; i < n; ++i) {
      y[static_cast<std::size_t>(i)] = rng.bernoulli(0.3) ? 1 : 0;
      // coarse grid on half the trials to force ties
      const Real u = rng.uniform();
      s[static_cast<std::size_t>(i)] = trial % 2 ? std::round(u * 20) / 20 : u;
      q[static_cast<std::size_t>(i)] = rng.uniform();
    }
    y[0] = 1;
    y[1] = 0;
    CHECK(std::abs(auroc(y, s) - brute_auroc(y, s)) <= 1e-12);
    CHECK(std::abs(auprc(y, s) - brute_ap(y, s)) <= 1e-12);
    CHECK(std::abs(ece(y, s, 10) - brute_ece(y, s, 10)) <= 1e-12);
    Real mae = 0;
    for (int i = 0; i < n; ++i) mae += std::abs(s[static_cast<std::size_t>(i)] - q[static_cast<std::size_t>(i)]);
    CHECK(std::abs(fidelity_mae(s, q) - mae / n) <= 1e-12);
  }
}

TEST_CASE("auroc invariants") {
  Rng rng(2);
  for (int trial = 0; trial < 50; ++trial) {
    const int n = 50;
    std::vector<int> y(n);
    std::vector<Real> s(n), neg(n), mono(n);
    for (int i = 0; i < n; ++i) {
      const auto k = static_cast<std::size_t>(i);
      y[k] = i < 2 ? i : (rng.bernoulli(0.4) ? 1 : 0);
      s[k] = std::round(rng.uniform(-3, 3) * 4) / 4;
      neg[k] = -s[k];
      mono[k] = std::exp(2 * s[k]) + 5;
    }
    CHECK(auroc(y, s) + auroc(y, neg) == doctest::Approx(1.0).epsilon(1e-14));
    CHECK(auroc(y, mono) == auroc(y, s));
  }
}

TEST_CASE("auprc on random scores is near the prevalence") {
  Rng rng(3);
  const int n = 10000;
  std::vector<int> y(n);
  std::vector<Real> s(n);
  Real pos = 0;
  for (int i = 0; i < n; ++i) {
    y[static_cast<std::size_t>(i)] = rng.bernoulli(0.2) ? 1 : 0;
    pos += y[static_cast<std::size_t>(i)];
    s[static_cast<std::size_t>(i)] = rng.uniform();
  }
  CHECK(std::abs(auprc(y, s) - pos / n) <= 0.02);
}

TEST_CASE("one-bin ece is the calibration-in-the-large gap") {
  Rng rng(4);
  std::vector<int> y(200);
  std::vector<Real> p(200);
  Real acc = 0, conf = 0;
  for (std::size_t i = 0; i < 200; ++i) {
    p[i] = rng.uniform();
    y[i] = rng.bernoulli(0.6) ? 1 : 0;
    acc += y[i];
    conf += p[i];
  }
  CHECK(ece(y, p, 1) == doctest::Approx(std::abs(acc - conf) / 200).epsilon(1e-13));
}

TEST_CASE("sufficiency and comprehensiveness on a toy model") {
  const Dims d = toy_dims(5, 4);
  const ModelBundle b = toy_bundle(d, 5, 2.0);
  Rng rng(6);
  std::vector<Instance> insts;
  for (int i = 0; i < 40; ++i) insts.push_back(toy_instance(d, rng, -1, i % 2));
  std::vector<const Instance*> ptrs;
  for (const auto& i : insts) ptrs.push_back(&i);

  std::vector<MaskPair> full, empty, random;
  std::vector<int> y;
  std::vector<Real> pf;
  for (const auto& i : insts) {
    full.push_back(MaskPair::full(d, i.presence));
    empty.push_back(MaskPair::empty(d));
    random.push_back(random_valid_mask(i, rng));
    y.push_back(i.label);
    pf.push_back(full_input_decision(b, i).p_full);
  }
  const SufficiencyResult sf = sufficiency_eval(b, ptrs, full);
  CHECK(sf.auroc == auroc(y, pf));
  CHECK(sf.fidelity_mae == 0.0);

  CHECK(comprehensiveness(b, ptrs, empty) == 0.0);

  // Direct computation from the definition.
  Real want = 0, want_full = 0;
  for (std::size_t i = 0; i < insts.size(); ++i) {
    const Real p = pf[i];
    const int yh = p >= 0.5;
    const Real rem = evaluate_masked(b, insts[i], complement(random[i], insts[i].presence));
    want += (yh ? p : 1 - p) - (yh ? rem : 1 - rem);
    const Real pe = evaluate_masked(b, insts[i], MaskPair::empty(d));
    want_full += yh ? p - pe : pe - p;
  }
  CHECK(comprehensiveness(b, ptrs, random) == doctest::Approx(want / 40).epsilon(1e-13));
  CHECK(comprehensiveness(b, ptrs, full) == doctest::Approx(want_full / 40).epsilon(1e-13));

  const MetricsReport r = summarize("x", 3, 7, b, ptrs, random, 0.25);
  const SufficiencyResult sr = sufficiency_eval(b, ptrs, random);
  CHECK(r.auroc == sr.auroc);
  CHECK(r.auprc == sr.auprc);
  CHECK(r.fidelity_mae == sr.fidelity_mae);
  CHECK(r.comprehensiveness == doctest::Approx(want / 40).epsilon(1e-13));
  Real ev = 0;
  for (const auto& m : random) ev += m.size();
  CHECK(r.mean_evidence_size == ev / 40);
  CHECK(r.n == 40);
  CHECK(r.exhaustion_rate == 0.25);
}

TEST_CASE("empty masks without context give a constant score") {
  const Dims d = toy_dims(4, 3);
  const ModelBundle b = toy_bundle(d, 8);
  Rng rng(9);
  std::vector<Instance> insts;
  for (int i = 0; i < 20; ++i) {
    Instance inst = toy_instance(d, rng, -1, i % 2);
    inst.context.has_cxr = inst.context.has_ecg = false;
    inst.context.cxr.setZero();
    inst.context.ecg.setZero();
    insts.push_back(inst);
  }
  std::vector<const Instance*> ptrs;
  for (const auto& i : insts) ptrs.push_back(&i);
  std::vector<MaskPair> empty(insts.size(), MaskPair::empty(d));
  CHECK(sufficiency_eval(b, ptrs, empty).auroc == 0.5);
}

TEST_CASE("csv formatting") {
  CHECK(format_real(0.5) == "0.5");
  CHECK(format_real(1.0 / 3) == "0.3333333333");
  CHECK(format_real(std::nan("")) == "nan");
  CHECK(format_real(INFINITY) == "inf");
  MetricsReport r;
  r.method = "toe";
  r.k = 5;
  r.auroc = 0.9;
  r.n = 10;
  r.seed = 2;
  r.exhaustion_rate = std::nan("");
  CHECK(to_csv_row(r) == "toe,5,0.9,0,0,0,0,0,nan,10,2");
  int commas = 0;
  for (char c : std::string(kSuiteCsvHeader)) commas += c == ',';
  CHECK(commas == 10);
}
