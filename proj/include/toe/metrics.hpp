#pragma once

#include <span>
#include <string>
#include <vector>

#include "toe/streams.hpp"

namespace toe {

/// Mann-Whitney AUROC with midranks (ties count 1/2). Needs both classes.
Real auroc(std::span<const int> labels, std::span<const Real> scores);

/// Average precision: sum over distinct score thresholds of
/// (recall increment) x (precision at that threshold). Needs a positive.
Real auprc(std::span<const int> labels, std::span<const Real> scores);

/// Expected calibration error over `n_bins` equal-width bins on [0, 1];
/// empty bins are skipped.
Real ece(std::span<const int> labels, std::span<const Real> probs, int n_bins = 10);

Real fidelity_mae(std::span<const Real> p_full, std::span<const Real> p_masked);

/// Probability of the class `y_hat` given p = Pr(y = 1).
inline Real class_probability(Real p, int y_hat) { return y_hat ? p : 1.0 - p; }

struct SufficiencyResult {
  Real auroc = 0;
  Real auprc = 0;
  Real fidelity_mae = 0;
};

SufficiencyResult sufficiency_eval(const ModelBundle& b, std::span<const Instance* const> instances,
                                   std::span<const MaskPair> masks);

/// Mean drop in the probability of the full-input class when the selection
/// is removed (evaluated on the complement mask).
Real comprehensiveness(const ModelBundle& b, std::span<const Instance* const> instances,
                       std::span<const MaskPair> masks);

struct MetricsReport {
  std::string method;
  int k = 0;
  Real auroc = 0;
  Real auprc = 0;
  Real fidelity_mae = 0;
  Real ece = 0;
  Real comprehensiveness = 0;
  Real mean_evidence_size = 0;
  Real exhaustion_rate = 0;
  int n = 0;
  std::uint64_t seed = 0;
};

/// Column order of suite CSV files.
inline constexpr const char* kSuiteCsvHeader =
    "method,k,auroc,auprc,fidelity_mae,ece,comprehensiveness,mean_evidence,exhaustion_rate,n,seed";

std::string to_csv_row(const MetricsReport& r);
std::string format_real(Real v);

/// Evaluates `masks` and reduces them to one report row.
MetricsReport summarize(const std::string& method, int k, std::uint64_t seed, const ModelBundle& b,
                        std::span<const Instance* const> instances, std::span<const MaskPair> masks,
                        Real exhaustion_rate);

}  // namespace toe
