#include "toe/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace toe {

namespace {

void check_lengths(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw ValidationError(std::string(what) + ": length mismatch");
}

}  // namespace

Real auroc(std::span<const int> labels, std::span<const Real> scores) {
  check_lengths(labels.size(), scores.size(), "auroc");
  const std::size_t n = labels.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] < scores[b]; });
  // Midranks over tie groups, 1-based.
  Real pos_rank_sum = 0;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    while (j < n && scores[order[j]] == scores[order[i]]) ++j;
    const Real midrank = 0.5 * static_cast<Real>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]]) {
        pos_rank_sum += midrank;
        ++n_pos;
      }
    }
    i = j;
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) throw ValidationError("auroc: both classes required");
  const Real np = static_cast<Real>(n_pos);
  return (pos_rank_sum - np * (np + 1) / 2) / (np * static_cast<Real>(n_neg));
}

Real auprc(std::span<const int> labels, std::span<const Real> scores) {
  check_lengths(labels.size(), scores.size(), "auprc");
  const std::size_t n = labels.size();
  const auto n_pos = static_cast<std::size_t>(std::count(labels.begin(), labels.end(), 1));
  if (n_pos == 0) throw ValidationError("auprc: no positives");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](auto a, auto b) { return scores[a] > scores[b]; });
  Real ap = 0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < n;) {
    std::size_t j = i;
    std::size_t group_tp = 0;
    while (j < n && scores[order[j]] == scores[order[i]]) {
      group_tp += labels[order[j]] ? 1 : 0;
      ++j;
    }
    tp += group_tp;
    seen = j;
    if (group_tp) {
      const Real precision = static_cast<Real>(tp) / static_cast<Real>(seen);
      ap += precision * static_cast<Real>(group_tp) / static_cast<Real>(n_pos);
    }
    i = j;
  }
  return ap;
}

Real ece(std::span<const int> labels, std::span<const Real> probs, int n_bins) {
  check_lengths(labels.size(), probs.size(), "ece");
  if (n_bins < 1) throw ValidationError("ece: need at least one bin");
  if (labels.empty()) return 0;
  std::vector<Real> conf(static_cast<std::size_t>(n_bins), 0), acc(static_cast<std::size_t>(n_bins), 0);
  std::vector<std::size_t> count(static_cast<std::size_t>(n_bins), 0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const Real p = probs[i];
    if (!(p >= 0 && p <= 1)) throw ValidationError("ece: probabilities must be in [0, 1]");
    auto b = static_cast<std::size_t>(p * n_bins);
    b = std::min(b, static_cast<std::size_t>(n_bins - 1));
    conf[b] += p;
    acc[b] += labels[i] ? 1.0 : 0.0;
    ++count[b];
  }
  Real total = 0;
  const auto n = static_cast<Real>(labels.size());
  for (std::size_t b = 0; b < count.size(); ++b) {
    if (!count[b]) continue;
    const auto c = static_cast<Real>(count[b]);
    total += (c / n) * std::abs(acc[b] / c - conf[b] / c);
  }
  return total;
}

Real fidelity_mae(std::span<const Real> p_full, std::span<const Real> p_masked) {
  check_lengths(p_full.size(), p_masked.size(), "fidelity_mae");
  if (p_full.empty()) return 0;
  Real s = 0;
  for (std::size_t i = 0; i < p_full.size(); ++i) s += std::abs(p_full[i] - p_masked[i]);
  return s / static_cast<Real>(p_full.size());
}

SufficiencyResult sufficiency_eval(const ModelBundle& b, std::span<const Instance* const> instances,
                                   std::span<const MaskPair> masks) {
  check_lengths(instances.size(), masks.size(), "sufficiency_eval");
  std::vector<int> labels;
  std::vector<Real> p_full, p_masked;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = *instances[i];
    const EvalCache cache(b, inst);
    labels.push_back(inst.label);
    p_full.push_back(cache.probability(MaskPair::full(b.dims, inst.presence)));
    p_masked.push_back(cache.probability(masks[i]));
  }
  return {auroc(labels, p_masked), auprc(labels, p_masked), fidelity_mae(p_full, p_masked)};
}

Real comprehensiveness(const ModelBundle& b, std::span<const Instance* const> instances,
                       std::span<const MaskPair> masks) {
  check_lengths(instances.size(), masks.size(), "comprehensiveness");
  if (instances.empty()) return 0;
  Real total = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = *instances[i];
    const EvalCache cache(b, inst);
    const Real p_full = cache.probability(MaskPair::full(b.dims, inst.presence));
    const int y_hat = decide(p_full);
    const Real p_rem = cache.probability(complement(masks[i], inst.presence));
    total += class_probability(p_full, y_hat) - class_probability(p_rem, y_hat);
  }
  return total / static_cast<Real>(instances.size());
}

std::string format_real(Real v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.10g", v);
  return buf;
}

std::string to_csv_row(const MetricsReport& r) {
  std::string s = r.method + "," + std::to_string(r.k);
  for (Real v : {r.auroc, r.auprc, r.fidelity_mae, r.ece, r.comprehensiveness, r.mean_evidence_size,
                 r.exhaustion_rate}) {
    s += "," + format_real(v);
  }
  s += "," + std::to_string(r.n) + "," + std::to_string(r.seed);
  return s;
}

MetricsReport summarize(const std::string& method, int k, std::uint64_t seed, const ModelBundle& b,
                        std::span<const Instance* const> instances, std::span<const MaskPair> masks,
                        Real exhaustion_rate) {
  check_lengths(instances.size(), masks.size(), "summarize");
  if (instances.empty()) throw ValidationError("summarize: no instances");
  std::vector<int> labels;
  std::vector<Real> p_full, p_masked;
  Real comp = 0, evidence = 0;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const Instance& inst = *instances[i];
    const EvalCache cache(b, inst);
    const Real pf = cache.probability(MaskPair::full(b.dims, inst.presence));
    const Real pm = cache.probability(masks[i]);
    const int y_hat = decide(pf);
    const Real p_rem = cache.probability(complement(masks[i], inst.presence));
    comp += class_probability(pf, y_hat) - class_probability(p_rem, y_hat);
    evidence += masks[i].size();
    labels.push_back(inst.label);
    p_full.push_back(pf);
    p_masked.push_back(pm);
  }
  const auto n = static_cast<Real>(instances.size());
  MetricsReport r;
  r.method = method;
  r.k = k;
  r.auroc = auroc(labels, p_masked);
  r.auprc = auprc(labels, p_masked);
  r.fidelity_mae = fidelity_mae(p_full, p_masked);
  r.ece = ece(labels, p_masked, 10);
  r.comprehensiveness = comp / n;
  r.mean_evidence_size = evidence / n;
  r.exhaustion_rate = exhaustion_rate;
  r.n = static_cast<int>(instances.size());
  r.seed = seed;
  return r;
}

}  // namespace toe
