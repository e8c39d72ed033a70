#pragma once

// Two-phase training. Phase I fits each stream's predictor on full evidence;
// Phase II freezes the predictors and fits only the selectors through the
// straight-through top-k mask.

#include <string>
#include <vector>

#include "toe/streams.hpp"

namespace toe {

struct TrainConfig {
  int epochs_phase1 = 30;
  int epochs_phase2 = 15;
  Real lr = 0.05;
  int batch_size = 32;
  int k_train = 5;
  Real ste_temperature = 1.0;
  std::uint64_t seed = 0;
  ModelShape shape;

  void validate(const Dims& dims) const;
  Json to_json() const;
};

struct BceResult {
  Real loss = 0;
  Real dlogit = 0;
};

/// -w_y [y log p + (1-y) log(1-p)] with p = sigmoid(logit), w_1 = pos_weight,
/// w_0 = 1, evaluated through softplus so large |logit| stays finite.
/// dlogit = w_y (p - y).
BceResult class_balanced_bce(Real logit, int y, Real pos_weight);

struct TrainLogRow {
  std::string phase;   // "phase1" | "phase2"
  std::string stream;  // "ts" | "note"
  int epoch = 0;
  std::string split;   // "train" | "val"
  Real loss = 0;
  Real auroc = 0;
};

struct TrainResult {
  ModelBundle bundle;
  std::vector<TrainLogRow> log;
  Real pos_weight = 1;
};

inline constexpr const char* kTrainLogHeader = "phase,stream,epoch,split,loss,auroc";
std::string train_log_csv(const std::vector<TrainLogRow>& log);

/// n_neg / n_pos over the train split; throws ValidationError when a class is missing.
Real train_pos_weight(const Cohort& cohort);

/// Fresh bundle; each stream's predictor trained on full masks. The epoch
/// with the best val AUROC is kept per stream.
TrainResult train_phase1(const Cohort& cohort, const TrainConfig& cfg);

/// Selector-only training on the frozen predictors of `bundle`.
TrainResult train_phase2(const Cohort& cohort, const ModelBundle& bundle, const TrainConfig& cfg);

/// Phase I followed by Phase II; the log concatenates both.
TrainResult train_full(const Cohort& cohort, const TrainConfig& cfg);

/// One instance's Phase-I gradient (full mask, predictor parts) times
/// `scale`, added to `grads`. Returns the loss.
Real phase1_accumulate(const ModelBundle& b, const Instance& inst, Modality stream, Real pos_weight, Real scale,
                       StreamGrads& grads);

/// One instance's Phase-II selector gradient times `scale`: the loss of the
/// logit under the composite top-k mask, carried back through the softmax
/// surrogate at the bundle's temperature. Returns the loss.
Real phase2_accumulate(const ModelBundle& b, const Instance& inst, Modality stream, int k, Real pos_weight, Real scale,
                       StreamGrads& grads);

/// Stream logit under the hard selector top-k mask (the Phase-II forward value).
Real selector_masked_logit(const ModelBundle& b, const Instance& inst, Modality stream, int k);

/// Hard top-k selector mask for one stream.
Mask selector_topk(const ModelBundle& b, const Instance& inst, Modality stream, int k);

}  // namespace toe
