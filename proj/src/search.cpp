#include "toe/search.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <unordered_set>

#include "toe/synth.hpp"

namespace toe {

const char* to_string(StabilitySpace s) { return s == StabilitySpace::probability ? "probability" : "logit"; }

StabilitySpace stability_space_from_string(const std::string& s) {
  if (s == "probability") return StabilitySpace::probability;
  if (s == "logit") return StabilitySpace::logit;
  throw UsageError("unknown stability space '" + s + "' (expected probability or logit)");
}

void SearchConfig::validate() const {
  if (beam_width < 1) throw UsageError("search: beam_width must be >= 1");
  if (max_steps < 1) throw UsageError("search: max_steps must be >= 1");
  if (budget && *budget < 1) throw UsageError("search: budget must be >= 1");
  if (n_ts_candidates < 0 || n_note_candidates < 0) throw UsageError("search: candidate counts must be >= 0");
  if (lambda < 0 || mu < 0) throw UsageError("search: lambda and mu must be >= 0");
}

Json SearchConfig::to_json() const {
  Json j;
  j["beam_width"] = beam_width;
  j["max_steps"] = max_steps;
  j["n_ts_candidates"] = n_ts_candidates;
  j["n_note_candidates"] = n_note_candidates;
  j["lambda"] = lambda;
  j["mu"] = mu;
  j["tau_conf"] = tau_conf;
  j["tau_suff"] = tau_suff;
  j["stability_space"] = to_string(stability_space);
  j["budget"] = budget ? Json(*budget) : Json(nullptr);
  return j;
}

namespace {

std::vector<int> ranked(const Vector& scores, int limit) {
  std::vector<int> idx;
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (std::isfinite(scores(i))) idx.push_back(static_cast<int>(i));
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return scores(a) > scores(b); });
  if (static_cast<int>(idx.size()) > limit) idx.resize(static_cast<std::size_t>(limit));
  return idx;
}

}  // namespace

std::vector<UnitRef> candidate_units(const ModelBundle& b, const Instance& inst, const SearchConfig& cfg) {
  std::vector<UnitRef> out;
  for (int t : ranked(score_ts_units(b, inst), cfg.n_ts_candidates)) out.push_back({Modality::ts, t});
  for (int j : ranked(score_note_units(b, inst), cfg.n_note_candidates)) out.push_back({Modality::note, j});
  return out;
}

Real stability(Real p_full, Real p, StabilitySpace space) {
  if (space == StabilitySpace::probability) return 1.0 - std::abs(p_full - p);
  const Real d = std::abs(logit(p_full) - logit(p));
  return 1.0 - d / (1.0 + d);
}

namespace {

SearchState finish_state(MaskPair mask, Real p, Real p_full, int y_hat_full, const SearchConfig& cfg) {
  SearchState s;
  s.mask = std::move(mask);
  s.p = p;
  s.C = y_hat_full ? p : 1.0 - p;
  s.S = stability(p_full, p, cfg.stability_space);
  s.K = s.mask.size();
  s.objective = s.C + cfg.lambda * s.S;
  s.score = s.objective - cfg.mu * s.K;
  return s;
}

}  // namespace

SearchState score_state(const ModelBundle&, const EvalCache& cache, Real p_full, int y_hat_full,
                        const MaskPair& mask, const SearchConfig& cfg) {
  return finish_state(mask, cache.probability(mask), p_full, y_hat_full, cfg);
}

bool beam_before(const SearchState& a, const SearchState& b) {
  if (a.K == b.K) {
    if (a.objective != b.objective) return a.objective > b.objective;
  } else if (a.score != b.score) {
    return a.score > b.score;
  }
  if (a.K != b.K) return a.K < b.K;
  const auto ua = a.mask.units();
  const auto ub = b.mask.units();
  return std::lexicographical_compare(ua.begin(), ua.end(), ub.begin(), ub.end());
}

namespace {

struct Node {
  SearchState state;
  Real l_ts = 0;
  Real l_note = 0;
  std::vector<UnitRef> path;
};

std::string mask_key(const MaskPair& m) {
  std::string key(reinterpret_cast<const char*>(m.ts.data()), static_cast<std::size_t>(m.ts.size()));
  key.append(reinterpret_cast<const char*>(m.note.data()), static_cast<std::size_t>(m.note.size()));
  return key;
}

bool meets_thresholds(const SearchState& s, const SearchConfig& cfg) {
  return s.C >= cfg.tau_conf && s.S >= cfg.tau_suff;
}

}  // namespace

Trace beam_search(const ModelBundle& b, const Instance& inst, const SearchConfig& cfg) {
  cfg.validate();
  const EvalCache cache(b, inst);
  const MaskPair full = MaskPair::full(b.dims, inst.presence);
  const Real p_full = cache.probability(full);
  const int y_hat = decide(p_full);
  const auto candidates = candidate_units(b, inst, cfg);

  Trace trace;
  trace.id = inst.id;
  trace.p_full = p_full;
  trace.y_hat_full = y_hat;
  trace.candidate_count = static_cast<int>(candidates.size());
  trace.final_mask = MaskPair::empty(b.dims);
  trace.termination = Termination::budget_exhausted;
  if (candidates.empty()) return trace;

  Node root;
  root.state.mask = MaskPair::empty(b.dims);
  root.l_ts = cache.ts_logit(root.state.mask.ts);
  root.l_note = cache.note_logit(root.state.mask.note);
  std::vector<Node> beam{root};
  bool met = false;

  for (int step = 1; step <= cfg.step_limit(); ++step) {
    std::vector<Node> expanded;
    std::unordered_set<std::string> seen;
    for (const Node& parent : beam) {
      for (const UnitRef& u : candidates) {
        if (parent.state.mask.contains(u)) continue;
        Node child;
        child.state.mask = parent.state.mask;
        child.state.mask.set(u);
        if (!seen.insert(mask_key(child.state.mask)).second) continue;
        child.l_ts = u.modality == Modality::ts ? cache.ts_logit(child.state.mask.ts) : parent.l_ts;
        child.l_note = u.modality == Modality::note ? cache.note_logit(child.state.mask.note) : parent.l_note;
        child.state = finish_state(std::move(child.state.mask), fuse(child.l_ts, child.l_note), p_full, y_hat, cfg);
        child.path = parent.path;
        child.path.push_back(u);
        expanded.push_back(std::move(child));
      }
    }
    if (expanded.empty()) break;  // every candidate already selected
    std::stable_sort(expanded.begin(), expanded.end(),
                     [](const Node& x, const Node& y) { return beam_before(x.state, y.state); });
    if (static_cast<int>(expanded.size()) > cfg.beam_width) expanded.resize(static_cast<std::size_t>(cfg.beam_width));
    beam = std::move(expanded);
    if (meets_thresholds(beam.front().state, cfg)) {
      met = true;
      break;
    }
  }

  const Node& best = beam.front();
  trace.final_mask = best.state.mask;
  trace.termination = met ? Termination::thresholds_met : Termination::budget_exhausted;
  MaskPair prefix = MaskPair::empty(b.dims);
  for (std::size_t i = 0; i < best.path.size(); ++i) {
    prefix.set(best.path[i]);
    const SearchState s = score_state(b, cache, p_full, y_hat, prefix, cfg);
    trace.steps.push_back({best.path[i], s.C, s.S, s.K, s.score, s.p});
  }
  return trace;
}

std::vector<MaskPair> final_masks(const std::vector<Trace>& traces) {
  std::vector<MaskPair> out;
  out.reserve(traces.size());
  for (const auto& t : traces) out.push_back(t.final_mask);
  return out;
}

Real exhaustion_rate(const std::vector<Trace>& traces) {
  if (traces.empty()) return 0;
  const auto n = std::count_if(traces.begin(), traces.end(),
                               [](const Trace& t) { return t.termination == Termination::budget_exhausted; });
  return static_cast<Real>(n) / static_cast<Real>(traces.size());
}

std::vector<SuiteBudget> run_search_suite(const ModelBundle& b, const std::vector<const Instance*>& instances,
                                          const SearchConfig& cfg, const std::vector<int>& budgets,
                                          std::uint64_t seed, const std::string& method) {
  std::vector<SuiteBudget> out;
  for (int k : budgets) {
    SearchConfig c = cfg;
    c.budget = k;
    SuiteBudget sb;
    sb.k = k;
    for (const auto* inst : instances) sb.traces.push_back(beam_search(b, *inst, c));
    const auto masks = final_masks(sb.traces);
    sb.report = summarize(method, k, seed, b, instances, masks, exhaustion_rate(sb.traces));
    out.push_back(std::move(sb));
  }
  return out;
}

ExhaustionStats exhaustion_stats(const std::vector<Trace>& traces, const std::vector<int>& labels) {
  if (traces.size() != labels.size()) throw ValidationError("exhaustion_stats: length mismatch");
  ExhaustionStats s;
  int tp_ex = 0, fp_ex = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    if (!traces[i].y_hat_full) continue;
    const bool ex = traces[i].termination == Termination::budget_exhausted;
    if (labels[i]) {
      ++s.n_tp;
      tp_ex += ex;
    } else {
      ++s.n_fp;
      fp_ex += ex;
    }
  }
  if (s.n_tp + s.n_fp == 0) throw ValidationError("exhaustion_stats: no positive predictions");
  s.tp_rate = s.n_tp ? static_cast<Real>(tp_ex) / s.n_tp : 0;
  s.fp_rate = s.n_fp ? static_cast<Real>(fp_ex) / s.n_fp : 0;
  if (s.tp_rate > 0) s.ratio = s.fp_rate / s.tp_rate;
  else s.ratio = s.fp_rate > 0 ? std::numeric_limits<Real>::infinity() : std::numeric_limits<Real>::quiet_NaN();
  return s;
}

AbstentionResult selective_abstention(const std::vector<Trace>& traces, const std::vector<int>& labels) {
  if (traces.size() != labels.size()) throw ValidationError("selective_abstention: length mismatch");
  AbstentionResult r;
  int n_tp = 0, n_fp = 0, tp_flag = 0, fp_flag = 0;
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const bool flag = traces[i].y_hat_full && traces[i].termination == Termination::budget_exhausted;
    r.abstain.push_back(flag);
    if (!traces[i].y_hat_full) continue;
    if (labels[i]) {
      ++n_tp;
      tp_flag += flag;
    } else {
      ++n_fp;
      fp_flag += flag;
    }
  }
  r.fp_caught = n_fp ? static_cast<Real>(fp_flag) / n_fp : 0;
  r.tp_lost = n_tp ? static_cast<Real>(tp_flag) / n_tp : 0;
  return r;
}

EvidenceHistograms evidence_histograms(const std::vector<Trace>& traces, const std::vector<int>& labels, int max_k) {
  if (traces.size() != labels.size()) throw ValidationError("evidence_histograms: length mismatch");
  EvidenceHistograms h;
  const auto bins = static_cast<std::size_t>(max_k + 1);
  h.thresholds_met.assign(bins, 0);
  h.budget_exhausted.assign(bins, 0);
  h.correct.assign(bins, 0);
  h.incorrect.assign(bins, 0);
  for (std::size_t i = 0; i < traces.size(); ++i) {
    const auto k = static_cast<std::size_t>(std::clamp(traces[i].final_mask.size(), 0, max_k));
    (traces[i].termination == Termination::thresholds_met ? h.thresholds_met : h.budget_exhausted)[k]++;
    (traces[i].y_hat_full == labels[i] ? h.correct : h.incorrect)[k]++;
  }
  return h;
}

ConvergenceSummary convergence_summary(const std::vector<Trace>& traces, int step_limit) {
  ConvergenceSummary s;
  s.n = static_cast<int>(traces.size());
  if (traces.empty()) return s;
  Real evidence = 0;
  int met = 0;
  for (const auto& t : traces) {
    if (t.termination == Termination::thresholds_met) {
      ++met;
      evidence += static_cast<Real>(t.steps.size());
    } else {
      evidence += step_limit;
    }
  }
  s.mean_evidence = evidence / s.n;
  s.convergence_rate = static_cast<Real>(met) / s.n;
  return s;
}

namespace {

Json summary_json(const ConvergenceSummary& s) {
  return {{"n", s.n}, {"mean_evidence", s.mean_evidence}, {"convergence_rate", s.convergence_rate}};
}

Real safe_ratio(Real a, Real b) {
  if (b == 0) return a == 0 ? 1.0 : std::numeric_limits<Real>::infinity();
  return a / b;
}

}  // namespace

Json SpuriousReport::to_json() const {
  Json j;
  j["clean"] = summary_json(clean);
  j["spurious"] = summary_json(spurious);
  j["evidence_ratio"] = evidence_ratio;
  j["convergence_ratio"] = convergence_ratio;
  j["feature_index"] = feature_index;
  j["by_flag"] = {{"consistent", summary_json(flag_consistent)},
                  {"inconsistent", summary_json(flag_inconsistent)},
                  {"flag_on", summary_json(flag_on)},
                  {"flag_off", summary_json(flag_off)}};
  return j;
}

SpuriousReport spurious_experiment(const ModelBundle& clean_model, const Cohort& clean,
                                   const ModelBundle& spurious_model, const Cohort& spurious,
                                   const SearchConfig& cfg) {
  SpuriousReport r;
  const int limit = cfg.step_limit();
  auto search_all = [&](const ModelBundle& m, const std::vector<const Instance*>& insts) {
    std::vector<Trace> traces;
    for (const auto* inst : insts) traces.push_back(beam_search(m, *inst, cfg));
    return traces;
  };
  const auto clean_test = clean.split(Split::test);
  const auto spur_test = spurious.split(Split::test);
  const auto clean_traces = search_all(clean_model, clean_test);
  const auto spur_traces = search_all(spurious_model, spur_test);
  r.clean = convergence_summary(clean_traces, limit);
  r.spurious = convergence_summary(spur_traces, limit);
  r.evidence_ratio = safe_ratio(r.spurious.mean_evidence, r.clean.mean_evidence);
  r.convergence_ratio = safe_ratio(r.spurious.convergence_rate, r.clean.convergence_rate);

  if (spurious.meta.contains("spurious")) {
    r.feature_index = spurious_feature_index(spurious);
    std::vector<Trace> consistent, inconsistent, on, off;
    for (std::size_t i = 0; i < spur_test.size(); ++i) {
      const int flag = spurious_flag(*spur_test[i], r.feature_index);
      (flag == spur_test[i]->label ? consistent : inconsistent).push_back(spur_traces[i]);
      (flag ? on : off).push_back(spur_traces[i]);
    }
    r.flag_consistent = convergence_summary(consistent, limit);
    r.flag_inconsistent = convergence_summary(inconsistent, limit);
    r.flag_on = convergence_summary(on, limit);
    r.flag_off = convergence_summary(off, limit);
  } else {
    r.feature_index = -1;
  }
  return r;
}

}  // namespace toe
