#include <doctest.h>

#include <cmath>
#include <numeric>
#include <set>

#include "support/toy.hpp"
#include "toe/baselines.hpp"
#include "toe/search.hpp"
#include "toe/synth.hpp"

using namespace toe;
using namespace toe::testing;

namespace {

SearchConfig no_thresholds(int budget) {
  SearchConfig c;
  c.tau_conf = 2.0;
  c.tau_suff = 2.0;
  c.budget = budget;
  return c;
}

Trace fake(int y_hat, Termination term, int steps = 1) {
  Trace t;
  t.y_hat_full = y_hat;
  t.termination = term;
  t.final_mask = MaskPair::empty(toy_dims());
  for (int i = 0; i < steps; ++i) {
    t.steps.push_back({{Modality::ts, i}, 0, 0, i + 1, 0, 0});
    t.final_mask.set({Modality::ts, i});
  }
  return t;
}

}  // namespace

TEST_CASE("stability in both spaces") {
  CHECK(stability(0.861, 0.833, StabilitySpace::probability) == doctest::Approx(0.972).epsilon(1e-12));
  CHECK(stability(0.7, 0.7, StabilitySpace::probability) == 1.0);
  CHECK(stability(0.7, 0.7, StabilitySpace::logit) == 1.0);
  const Real d = std::abs(logit(0.9) - logit(0.6));
  CHECK(stability(0.9, 0.6, StabilitySpace::logit) == doctest::Approx(1 - d / (1 + d)).epsilon(1e-14));
  Rng rng(1);
  for (int i = 0; i < 200; ++i) {
    const Real a = rng.uniform(0.01, 0.99), b = rng.uniform(0.01, 0.99);
    for (auto sp : {StabilitySpace::probability, StabilitySpace::logit}) {
      const Real s = stability(a, b, sp);
      CHECK(s >= 0.0);
      CHECK(s <= 1.0);
      CHECK(s == stability(b, a, sp));
    }
  }
  CHECK(stability_space_from_string("logit") == StabilitySpace::logit);
  CHECK_THROWS_AS(stability_space_from_string("odds"), UsageError);
}

TEST_CASE("search config validation") {
  SearchConfig c;
  CHECK_NOTHROW(c.validate());
  c.beam_width = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SearchConfig{};
  c.budget = 0;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SearchConfig{};
  c.lambda = -1;
  CHECK_THROWS_AS(c.validate(), UsageError);
  c = SearchConfig{};
  c.budget = 3;
  CHECK(c.step_limit() == 3);
  CHECK(c.to_json()["budget"] == 3);
}

TEST_CASE("score_state follows the objective") {
  const Dims d = toy_dims(5, 3);
  const ModelBundle b = toy_bundle(d, 2, 2.0);
  Rng rng(3);
  SearchConfig cfg;
  for (int trial = 0; trial < 30; ++trial) {
    const Instance inst = toy_instance(d, rng);
    const EvalCache cache(b, inst);
    const Real pf = cache.probability(MaskPair::full(d, inst.presence));
    const int yh = decide(pf);
    const MaskPair m = random_valid_mask(inst, rng);
    const SearchState s = score_state(b, cache, pf, yh, m, cfg);
    CHECK(s.p == evaluate_masked(b, inst, m));
    CHECK(s.C == (yh ? s.p : 1 - s.p));
    CHECK(s.S == stability(pf, s.p, cfg.stability_space));
    CHECK(s.K == m.size());
    CHECK(s.objective == s.C + cfg.lambda * s.S);
    CHECK(s.score == s.objective - cfg.mu * s.K);
    // Full mask reproduces the full-input decision exactly.
    const SearchState f = score_state(b, cache, pf, yh, MaskPair::full(d, inst.presence), cfg);
    CHECK(f.S == 1.0);
    CHECK(f.C == (yh ? pf : 1 - pf));
    // lambda = mu = 0 leaves only confidence.
    SearchConfig c0 = cfg;
    c0.lambda = c0.mu = 0;
    CHECK(score_state(b, cache, pf, yh, m, c0).score == s.C);
  }
  // 0.8 + 1 * 0.9 - 0.05 * 4
  SearchState h;
  h.C = 0.8;
  h.S = 0.9;
  h.K = 4;
  CHECK(h.C + cfg.lambda * h.S - cfg.mu * h.K == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("beam ordering tie rules") {
  const Dims d = toy_dims();
  auto state = [&](std::vector<UnitRef> units, Real objective) {
    SearchState s;
    s.mask = MaskPair::empty(d);
    for (auto u : units) s.mask.set(u);
    s.K = s.mask.size();
    s.objective = objective;
    s.score = objective - 0.05 * s.K;
    return s;
  };
  const UnitRef h0{Modality::ts, 0}, h1{Modality::ts, 1}, h2{Modality::ts, 2}, c0{Modality::note, 0};
  CHECK(beam_before(state({h0}, 1.0), state({h1}, 0.5)));
  CHECK_FALSE(beam_before(state({h1}, 0.5), state({h0}, 1.0)));
  // Equal score: fewer units first.
  SearchState one = state({h0}, 1.0), two = state({h1, h2}, 1.05);
  two.score = one.score;
  CHECK(beam_before(one, two));
  CHECK_FALSE(beam_before(two, one));
  // Equal size and objective: hours before chunks.
  CHECK(beam_before(state({h0}, 1.0), state({c0}, 1.0)));
  CHECK_FALSE(beam_before(state({c0}, 1.0), state({h0}, 1.0)));
  CHECK_FALSE(beam_before(state({h0}, 1.0), state({h0}, 1.0)));
  // Equal size: the objective decides even when the penalized scores round equal.
  SearchState a = state({h1}, 1.0 + 2e-16), b = state({h0}, 1.0);
  a.score = b.score;
  CHECK(beam_before(a, b));
}

TEST_CASE("candidate lists match a re-sort of the selector scores") {
  const Dims d = toy_dims(8, 5);
  const ModelBundle b = toy_bundle(d, 4);
  Rng rng(5);
  SearchConfig cfg;
  cfg.n_ts_candidates = 3;
  cfg.n_note_candidates = 2;
  for (int trial = 0; trial < 30; ++trial) {
    const Instance inst = toy_instance(d, rng);
    const auto cand = candidate_units(b, inst, cfg);
    auto expect = [&](const Vector& s, Modality m, int limit) {
      std::vector<UnitRef> v;
      for (int i = 0; i < s.size(); ++i)
        if (std::isfinite(s(i))) v.push_back({m, i});
      std::sort(v.begin(), v.end(), [&](UnitRef x, UnitRef y) {
        return s(x.index) != s(y.index) ? s(x.index) > s(y.index) : x.index < y.index;
      });
      v.resize(std::min<std::size_t>(v.size(), static_cast<std::size_t>(limit)));
      return v;
    };
    auto want = expect(score_ts_units(b, inst), Modality::ts, 3);
    const auto notes = expect(score_note_units(b, inst), Modality::note, 2);
    want.insert(want.end(), notes.begin(), notes.end());
    CHECK(cand == want);
  }
  SearchConfig wide;
  Instance three = toy_instance(d, rng, 3);
  const auto c3 = candidate_units(b, three, wide);
  CHECK(std::count_if(c3.begin(), c3.end(), [](UnitRef u) { return u.modality == Modality::note; }) == 3);
}

TEST_CASE("trace structure invariants") {
  const Dims d = toy_dims(6, 4);
  const ModelBundle b = toy_bundle(d, 6, 2.0);
  Rng rng(7);
  for (int trial = 0; trial < 60; ++trial) {
    const Instance inst = toy_instance(d, rng);
    SearchConfig cfg;
    cfg.beam_width = 1 + trial % 4;
    cfg.max_steps = 1 + trial % 5;
    cfg.tau_conf = trial % 2 ? 0.6 : 0.9;
    cfg.stability_space = trial % 3 ? StabilitySpace::probability : StabilitySpace::logit;
    const Trace t = beam_search(b, inst, cfg);
    const auto cand = candidate_units(b, inst, cfg);
    std::set<UnitRef> seen;
    MaskPair prefix = MaskPair::empty(d);
    const EvalCache cache(b, inst);
    for (std::size_t i = 0; i < t.steps.size(); ++i) {
      const auto& s = t.steps[i];
      CHECK(s.K == static_cast<int>(i) + 1);
      CHECK(seen.insert(s.unit).second);
      CHECK(std::find(cand.begin(), cand.end(), s.unit) != cand.end());
      prefix.set(s.unit);
      const SearchState ref = score_state(b, cache, t.p_full, t.y_hat_full, prefix, cfg);
      CHECK(s.score == ref.score);
      CHECK(s.p == ref.p);
    }
    CHECK(prefix == t.final_mask);
    CHECK(static_cast<int>(t.steps.size()) <= cfg.step_limit());
    CHECK(t.p_full == full_input_decision(b, inst).p_full);
    if (t.termination == Termination::thresholds_met) {
      CHECK(t.steps.back().C >= cfg.tau_conf);
      CHECK(t.steps.back().S >= cfg.tau_suff);
    } else {
      CHECK(static_cast<int>(t.steps.size()) == std::min<int>(cfg.step_limit(), static_cast<int>(cand.size())));
    }
  }
}

TEST_CASE("beam search is deterministic and builds one cache") {
  const Dims d = toy_dims(6, 4);
  const ModelBundle b = toy_bundle(d, 8, 2.0);
  Rng rng(9);
  const Instance inst = toy_instance(d, rng, 4);
  SearchConfig cfg;
  EvalCache::reset_build_count();
  const Trace a = beam_search(b, inst, cfg);
  CHECK(EvalCache::build_count() == 1);
  const Trace c = beam_search(b, inst, cfg);
  CHECK(trace_to_json(a).dump() == trace_to_json(c).dump());
}

TEST_CASE("empty candidate set exhausts immediately") {
  const Dims d = toy_dims();
  const ModelBundle b = toy_bundle(d, 10);
  Rng rng(11);
  const Instance inst = toy_instance(d, rng);
  SearchConfig cfg;
  cfg.n_ts_candidates = 0;
  cfg.n_note_candidates = 0;
  const Trace t = beam_search(b, inst, cfg);
  CHECK(t.termination == Termination::budget_exhausted);
  CHECK(t.steps.empty());
  CHECK(t.final_mask.size() == 0);
  CHECK(t.candidate_count == 0);
}

TEST_CASE("one step equals the best singleton") {
  const Dims d = toy_dims(6, 4);
  const ModelBundle b = toy_bundle(d, 12, 2.0);
  Rng rng(13);
  for (int trial = 0; trial < 50; ++trial) {
    const Instance inst = toy_instance(d, rng);
    SearchConfig cfg = no_thresholds(1);
    cfg.beam_width = 1 + trial % 3;
    const Trace t = beam_search(b, inst, cfg);
    const OracleResult o = exhaustive_best(b, inst, 1, cfg);
    CHECK(t.final_mask == o.mask);
  }
}

TEST_CASE("wide beam at depth two equals exhaustive pairs") {
  const Dims d = toy_dims(5, 3);
  const ModelBundle b = toy_bundle(d, 14, 2.0);
  Rng rng(15);
  for (int trial = 0; trial < 50; ++trial) {
    const Instance inst = toy_instance(d, rng);
    SearchConfig cfg = no_thresholds(2);
    cfg.beam_width = 64;
    const Trace t = beam_search(b, inst, cfg);
    const OracleResult o = exhaustive_best(b, inst, 2, cfg, 2);
    CHECK(t.final_mask == o.mask);
  }
}

TEST_CASE("size penalty is inert under a fixed budget") {
  const Dims d = toy_dims(6, 4);
  const ModelBundle b = toy_bundle(d, 16, 2.0);
  Rng rng(17);
  for (int trial = 0; trial < 100; ++trial) {
    const Instance inst = toy_instance(d, rng);
    SearchConfig c0 = no_thresholds(3), c1 = no_thresholds(3);
    if (trial % 2) {
      c0.tau_conf = c1.tau_conf = 0.6;
      c0.tau_suff = c1.tau_suff = 0.9;
    }
    c0.mu = 0;
    c1.mu = 0.05;
    const Trace a = beam_search(b, inst, c0), e = beam_search(b, inst, c1);
    REQUIRE(a.steps.size() == e.steps.size());
    for (std::size_t i = 0; i < a.steps.size(); ++i) CHECK(a.steps[i].unit == e.steps[i].unit);
  }
}

TEST_CASE("exhaustion statistics on a hand-built set") {
  std::vector<Trace> tr;
  std::vector<int> y;
  for (int i = 0; i < 10; ++i) {
    tr.push_back(fake(1, i == 0 ? Termination::budget_exhausted : Termination::thresholds_met));
    y.push_back(1);
  }
  for (int i = 0; i < 4; ++i) {
    tr.push_back(fake(1, i < 2 ? Termination::budget_exhausted : Termination::thresholds_met));
    y.push_back(0);
  }
  tr.push_back(fake(0, Termination::budget_exhausted));
  y.push_back(1);
  const ExhaustionStats s = exhaustion_stats(tr, y);
  CHECK(s.n_tp == 10);
  CHECK(s.n_fp == 4);
  CHECK(s.tp_rate == doctest::Approx(0.1));
  CHECK(s.fp_rate == doctest::Approx(0.5));
  CHECK(s.ratio == doctest::Approx(5.0));
  const AbstentionResult a = selective_abstention(tr, y);
  CHECK(a.fp_caught == doctest::Approx(0.5));
  CHECK(a.tp_lost == doctest::Approx(0.1));
  CHECK(a.abstain.size() == tr.size());
  CHECK(a.abstain[0]);
  CHECK_FALSE(a.abstain[1]);
  CHECK_FALSE(a.abstain.back());  // negative predictions never abstain
  CHECK(exhaustion_rate(tr) == doctest::Approx(4.0 / 15));

  std::vector<Trace> met(3, fake(1, Termination::thresholds_met));
  CHECK(std::isnan(exhaustion_stats(met, {1, 0, 1}).ratio));
  std::vector<Trace> fp_only{fake(1, Termination::thresholds_met), fake(1, Termination::budget_exhausted)};
  CHECK(std::isinf(exhaustion_stats(fp_only, {1, 0}).ratio));
  std::vector<Trace> neg{fake(0, Termination::thresholds_met)};
  CHECK_THROWS_AS(exhaustion_stats(neg, {1}), ValidationError);
  CHECK_THROWS_AS(exhaustion_stats(neg, {1, 0}), ValidationError);
}

TEST_CASE("histograms and convergence summaries") {
  std::vector<Trace> tr{fake(1, Termination::thresholds_met, 2), fake(1, Termination::budget_exhausted, 4),
                        fake(0, Termination::thresholds_met, 1), fake(0, Termination::budget_exhausted, 4)};
  const std::vector<int> y{1, 0, 0, 1};
  const EvidenceHistograms h = evidence_histograms(tr, y, 4);
  auto sum = [](const std::vector<int>& v) { return std::accumulate(v.begin(), v.end(), 0); };
  CHECK(sum(h.thresholds_met) + sum(h.budget_exhausted) == 4);
  CHECK(sum(h.correct) + sum(h.incorrect) == 4);
  CHECK(h.thresholds_met[2] == 1);
  CHECK(h.budget_exhausted[4] == 2);
  CHECK(h.correct[2] == 1);
  CHECK(h.incorrect[4] == 2);

  const ConvergenceSummary c = convergence_summary(tr, 4);
  CHECK(c.n == 4);
  CHECK(c.convergence_rate == 0.5);
  CHECK(c.mean_evidence == doctest::Approx((2 + 4 + 1 + 4) / 4.0));
  CHECK(convergence_summary({}, 4).n == 0);
}

TEST_CASE("spurious experiment on identical inputs gives unit ratios") {
  SynthConfig sc;
  sc.dims = toy_dims(6, 3);
  sc.n_train = 0;
  sc.n_val = 0;
  sc.n_test = 40;
  sc.seed = 3;
  const Cohort clean = generate_cohort(sc);
  const Cohort spur = inject_spurious(clean, SpuriousConfig{}, 4);
  const ModelBundle b = toy_bundle(sc.dims, 18, 2.0);
  SearchConfig cfg;
  cfg.max_steps = 4;
  cfg.tau_conf = 0.6;
  const SpuriousReport same = spurious_experiment(b, clean, b, clean, cfg);
  CHECK(same.evidence_ratio == 1.0);
  CHECK(same.convergence_ratio == 1.0);
  CHECK(same.feature_index == -1);
  CHECK(same.clean.n == 40);

  const SpuriousReport r = spurious_experiment(b, clean, b, spur, cfg);
  CHECK(r.feature_index == sc.dims.D - 1);
  CHECK(r.flag_consistent.n + r.flag_inconsistent.n == 40);
  CHECK(r.flag_on.n + r.flag_off.n == 40);
  const Json j = r.to_json();
  CHECK(j.contains("by_flag"));
  CHECK(j["clean"]["n"] == 40);
}

TEST_CASE("search suite reports match the traces") {
  const Dims d = toy_dims(5, 3);
  const ModelBundle b = toy_bundle(d, 19, 2.0);
  Rng rng(20);
  std::vector<Instance> insts;
  for (int i = 0; i < 12; ++i) insts.push_back(toy_instance(d, rng, -1, i % 2));
  std::vector<const Instance*> ptrs;
  for (const auto& i : insts) ptrs.push_back(&i);
  SearchConfig cfg;
  const auto suite = run_search_suite(b, ptrs, cfg, {1, 3}, 7);
  REQUIRE(suite.size() == 2);
  for (const auto& sb : suite) {
    CHECK(sb.report.k == sb.k);
    CHECK(sb.report.method == "toe");
    CHECK(sb.report.seed == 7);
    CHECK(sb.report.exhaustion_rate == exhaustion_rate(sb.traces));
    for (const auto& t : sb.traces) CHECK(t.final_mask.size() <= sb.k);
  }
}
