#pragma once

// Tree-of-Evidence beam search over evidence masks, and the diagnostics built
// on its traces (exhaustion, abstention, spurious-feature comparison).

#include <optional>
#include <string>
#include <vector>

#include "toe/metrics.hpp"

namespace toe {

enum class StabilitySpace { probability, logit };
const char* to_string(StabilitySpace s);
StabilitySpace stability_space_from_string(const std::string& s);

struct SearchConfig {
  int beam_width = 8;
  int max_steps = 10;
  int n_ts_candidates = 24;
  int n_note_candidates = 20;
  Real lambda = 1.0;
  Real mu = 0.05;
  Real tau_conf = 0.9;
  Real tau_suff = 0.9;
  StabilitySpace stability_space = StabilitySpace::probability;
  /// Fixed evidence budget; overrides max_steps when set.
  std::optional<int> budget;

  int step_limit() const { return budget ? *budget : max_steps; }
  void validate() const;
  Json to_json() const;
};

struct SearchState {
  MaskPair mask;
  Real C = 0;
  Real S = 0;
  int K = 0;
  Real objective = 0;  // C + lambda * S
  Real score = 0;      // objective - mu * K
  Real p = 0;
};

/// Top n_ts_candidates hours and top n_note_candidates present chunks by
/// selector score, each list descending with ties to the lower index; hours
/// first.
std::vector<UnitRef> candidate_units(const ModelBundle& b, const Instance& inst, const SearchConfig& cfg);

/// S in [0, 1]: 1 - |dp| in probability space, 1 - d / (1 + d) with d the
/// absolute logit gap in logit space.
Real stability(Real p_full, Real p, StabilitySpace space);

SearchState score_state(const ModelBundle& b, const EvalCache& cache, Real p_full, int y_hat_full,
                        const MaskPair& mask, const SearchConfig& cfg);

/// Beam order: score descending, then fewer units, then the sorted unit
/// lists compared lexicographically (hours before chunks, then index).
/// States of equal size are compared on the objective before the size
/// penalty, so the constant -mu * K cannot reorder them through rounding.
bool beam_before(const SearchState& a, const SearchState& b);

Trace beam_search(const ModelBundle& b, const Instance& inst, const SearchConfig& cfg);

struct SuiteBudget {
  int k = 0;
  std::vector<Trace> traces;
  MetricsReport report;
};

/// Budgeted beam search on every instance for each k.
std::vector<SuiteBudget> run_search_suite(const ModelBundle& b, const std::vector<const Instance*>& instances,
                                          const SearchConfig& cfg, const std::vector<int>& budgets,
                                          std::uint64_t seed = 0, const std::string& method = "toe");

std::vector<MaskPair> final_masks(const std::vector<Trace>& traces);
Real exhaustion_rate(const std::vector<Trace>& traces);

struct ExhaustionStats {
  Real tp_rate = 0;
  Real fp_rate = 0;
  /// fp_rate / tp_rate; +inf when only false positives exhaust, NaN
  /// ("undefined") when neither does.
  Real ratio = 0;
  int n_tp = 0;
  int n_fp = 0;
};

/// Over positive predictions only. Throws ValidationError without any.
ExhaustionStats exhaustion_stats(const std::vector<Trace>& traces, const std::vector<int>& labels);

struct AbstentionResult {
  std::vector<bool> abstain;  // exhausted positive predictions
  Real fp_caught = 0;         // flagged share of false positives
  Real tp_lost = 0;           // flagged share of true positives
};

AbstentionResult selective_abstention(const std::vector<Trace>& traces, const std::vector<int>& labels);

/// Final evidence sizes K in [0, max_k], split two ways.
struct EvidenceHistograms {
  std::vector<int> thresholds_met, budget_exhausted;
  std::vector<int> correct, incorrect;
};

EvidenceHistograms evidence_histograms(const std::vector<Trace>& traces, const std::vector<int>& labels, int max_k);

struct ConvergenceSummary {
  int n = 0;
  Real mean_evidence = 0;     // steps to thresholds_met; exhausted searches count as S_max
  Real convergence_rate = 0;  // share of thresholds_met
};

ConvergenceSummary convergence_summary(const std::vector<Trace>& traces, int step_limit);

struct SpuriousReport {
  ConvergenceSummary clean;
  ConvergenceSummary spurious;
  Real evidence_ratio = 0;     // spurious / clean
  Real convergence_ratio = 0;  // spurious / clean
  int feature_index = 0;
  ConvergenceSummary flag_consistent;    // spurious model, flag == label
  ConvergenceSummary flag_inconsistent;  // spurious model, flag != label
  ConvergenceSummary flag_on, flag_off;

  Json to_json() const;
};

/// Searches the test split of each cohort with its own model.
SpuriousReport spurious_experiment(const ModelBundle& clean_model, const Cohort& clean,
                                   const ModelBundle& spurious_model, const Cohort& spurious, const SearchConfig& cfg);

}  // namespace toe
