#pragma once

// The two evidence-bottleneck streams. Each stream scores its units with a
// selector MLP, pools projected units under a (possibly relaxed) mask,
// appends projected context priors and classifies to a logit. Streams are
// fused by logit summation.

#include <atomic>
#include <filesystem>

#include "toe/datamodel.hpp"
#include "toe/mlp.hpp"

namespace toe {

struct FrozenFlags {
  bool selector = false;
  bool unit_proj = false;
  bool ctx_cxr = false;
  bool ctx_ecg = false;
  bool classifier = false;

  void freeze_predictor() { unit_proj = ctx_cxr = ctx_ecg = classifier = true; }
};

struct StreamModel {
  Mlp selector;    // unit features -> scalar relevance score
  Mlp unit_proj;   // per-unit projection (ts rows carry a one-hot hour suffix)
  Mlp ctx_cxr;     // [x_cxr; has_cxr] -> context features
  Mlp ctx_ecg;     // [x_ecg; has_ecg] -> context features
  Mlp classifier;  // [pooled; ctx_cxr; ctx_ecg] -> logit
  FrozenFlags frozen;

  /// Selector, projection and classifier widths chain correctly.
  void check_shapes() const;
  bool predictor_equals(const StreamModel& o) const {
    return unit_proj == o.unit_proj && ctx_cxr == o.ctx_cxr && ctx_ecg == o.ctx_ecg && classifier == o.classifier;
  }
};

/// Gradient accumulator shaped like a StreamModel.
struct StreamGrads {
  Mlp selector, unit_proj, ctx_cxr, ctx_ecg, classifier;

  static StreamGrads zeros_like(const StreamModel& m);
};

struct ModelShape {
  int selector_hidden = 16;
  int unit_hidden = 16;
  int ctx_width = 4;
  int classifier_hidden = 16;
};

inline constexpr int kModelFormatVersion = 1;

struct ModelBundle {
  Dims dims;
  StreamModel ts_stream;
  StreamModel note_stream;
  Real ste_temperature = 1.0;
  Real epsilon = 1e-8;
};

ModelBundle make_bundle(const Dims& dims, const ModelShape& shape, Rng& rng);

/// SGD update of the unfrozen parts. Throws InternalError if a frozen part
/// carries a non-zero gradient.
void apply_update(StreamModel& model, const StreamGrads& grads, Real lr);

Json bundle_to_json(const ModelBundle& b);
ModelBundle bundle_from_json(const Json& j);
void save_bundle(const ModelBundle& b, const std::filesystem::path& path);
ModelBundle load_bundle(const std::filesystem::path& path);

/// Selector scores; entries with presence 0 are -inf.
Vector score_units(const StreamModel& stream, const Matrix& units, const Mask& presence);
Vector score_ts_units(const ModelBundle& b, const Instance& inst);
Vector score_note_units(const ModelBundle& b, const Instance& inst);

struct SteTopK {
  Mask hard;          // top min(k, #finite) scores, ties to the lower index
  Vector surrogate;   // softmax(scores / tau)
  /// Forward value of hard - stop_grad(surrogate) + surrogate.
  Vector composite() const { return hard.cast<Real>(); }
};

SteTopK ste_topk(const Vector& scores, int k, Real tau);
/// Gradient of the composite mask w.r.t. the scores: only the surrogate path
/// carries gradient.
Vector ste_topk_backward(const SteTopK& st, const Vector& upstream, Real tau);

/// Forward record of one stream under a real-valued mask.
struct StreamPass {
  Vector mask;
  Vector presence;     // 1 for every hour; the chunk presence mask for notes
  Vector weights;      // mask .* presence
  Matrix raw;          // unmasked unit features
  bool masked_inputs;  // ts multiplies raw features by the mask before projection
  Matrix proj_in;
  MlpCache unit_cache;
  Matrix projected;    // one row per unit
  Vector pooled;
  Real denom = 0;
  MlpCache cxr_cache, ecg_cache, cls_cache;
  Real logit = 0;
};

StreamPass ts_forward(const ModelBundle& b, const Instance& inst, const Vector& mask);
StreamPass note_forward(const ModelBundle& b, const Instance& inst, const Vector& mask);

/// Back-propagates d(loss)/d(logit). Accumulates parameter gradients into
/// `grads` when non-null (predictor parts only when `predictor_grads`), and
/// returns d(loss)/d(mask).
Vector stream_backward(const StreamModel& model, const StreamPass& pass, Real dlogit, StreamGrads* grads,
                       bool predictor_grads);

Real ts_logit(const ModelBundle& b, const Instance& inst, const Vector& mask);
Real ts_logit(const ModelBundle& b, const Instance& inst, const Mask& mask);
/// Throws ValidationError("padding selected") if the mask selects padding.
Real note_logit(const ModelBundle& b, const Instance& inst, const Mask& mask);

inline Real fuse(Real l_ts, Real l_note) { return sigmoid(l_ts + l_note); }

struct Decision {
  Real p_full = 0.5;
  int y_hat = 1;
};

/// Threshold 0.5; p exactly 0.5 is classified positive.
inline int decide(Real p) { return p >= 0.5 ? 1 : 0; }

Decision full_input_decision(const ModelBundle& b, const Instance& inst);

/// Per-instance precomputation for mask evaluation: projected units and
/// context projections, so a masked evaluation is one pooling plus one
/// classifier pass per stream.
class EvalCache {
 public:
  EvalCache(const ModelBundle& b, const Instance& inst);

  Real ts_logit(const Mask& mask) const;
  Real note_logit(const Mask& mask) const;
  Real probability(const MaskPair& mask) const { return fuse(ts_logit(mask.ts), note_logit(mask.note)); }

  const Instance& instance() const { return *inst_; }

  static long build_count() { return builds_.load(); }
  static void reset_build_count() { builds_.store(0); }

 private:
  Real classify(const StreamModel& s, const Matrix& projected, const Mask& mask, const Vector& ctx) const;

  const ModelBundle* bundle_;
  const Instance* inst_;
  Matrix ts_projected_;
  Matrix note_projected_;
  Vector ts_ctx_;
  Vector note_ctx_;
  static inline std::atomic<long> builds_{0};
};

EvalCache build_eval_cache(const ModelBundle& b, const Instance& inst);

/// p(m) using the cache.
Real evaluate_masked(const EvalCache& cache, const MaskPair& mask);
/// p(m) recomputed from raw inputs, no cache.
Real evaluate_masked(const ModelBundle& b, const Instance& inst, const MaskPair& mask);

}  // namespace toe
