#pragma once

// Synthetic cohorts with planted ground-truth evidence.
//
// Positive instances receive `signal_strength` on a fixed subset of "signal
// channels" (the first half of the D features) in `planted_ts` random hours,
// and `planted_note` present chunks drawn around a label direction in
// embedding space. A fraction of positives carry signal only in notes.
// Context priors of positives are shifted by context_coefficient *
// signal_strength. Everything else is N(0, noise_sd^2).

#include <cstdint>

#include "toe/datamodel.hpp"

namespace toe {

struct SynthConfig {
  int n_train = 2000;
  int n_val = 400;
  int n_test = 400;
  Dims dims;
  Real prevalence = 0.12;
  int planted_ts = 3;
  int planted_note = 2;
  Real signal_strength = 2.5;
  Real noise_sd = 1.0;
  Real notes_only_fraction = 0.3;
  Real context_coefficient = 0.2;
  Real context_present_prob = 0.8;
  /// Probability that a recorded label is flipped after planting.
  Real label_noise = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
  Json to_json() const;
};

struct SpuriousConfig {
  Real train_correlation = 0.8;
  Real test_correlation = 0.0;
  /// Feature column to overwrite; -1 selects the last column.
  int feature_index = -1;

  void validate(const Dims& dims) const;
  Json to_json(const Dims& dims) const;
};

/// Signal channels are columns [0, D/2) (at least one).
int signal_channel_count(const Dims& dims);

Cohort generate_cohort(const SynthConfig& cfg);

/// Overwrites one ts feature with a binary flag, 1.0 in every hour when on.
/// Train and val: the flag agrees with the label with probability
/// train_correlation. Test: the flag copies the label with probability
/// test_correlation and is otherwise an independent fair coin, so 0 makes it
/// independent of the label.
Cohort inject_spurious(const Cohort& cohort, const SpuriousConfig& scfg, std::uint64_t seed);

/// Reads back the injected flag (requires meta.spurious in the cohort).
int spurious_feature_index(const Cohort& cohort);
int spurious_flag(const Instance& inst, int feature_index);

}  // namespace toe
