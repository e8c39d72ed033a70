#include "toe/training.hpp"

#include <cmath>
#include <numeric>
#include <sstream>

#include "toe/metrics.hpp"

namespace toe {

void TrainConfig::validate(const Dims& dims) const {
  if (epochs_phase1 < 0 || epochs_phase2 < 0) throw UsageError("train: epoch counts must be non-negative");
  if (!(lr > 0)) throw UsageError("train: lr must be positive");
  if (batch_size < 1) throw UsageError("train: batch_size must be >= 1");
  if (k_train < 1 || k_train > dims.T) throw UsageError("train: k_train must be in [1, T]");
  if (!(ste_temperature > 0)) throw UsageError("train: ste_temperature must be positive");
  if (shape.selector_hidden < 1 || shape.unit_hidden < 1 || shape.ctx_width < 1 || shape.classifier_hidden < 1)
    throw UsageError("train: layer widths must be >= 1");
}

Json TrainConfig::to_json() const {
  Json j;
  j["epochs_phase1"] = epochs_phase1;
  j["epochs_phase2"] = epochs_phase2;
  j["lr"] = lr;
  j["batch_size"] = batch_size;
  j["k_train"] = k_train;
  j["ste_temperature"] = ste_temperature;
  j["seed"] = seed;
  return j;
}

namespace {

Real softplus(Real x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

}  // namespace

BceResult class_balanced_bce(Real logit, int y, Real pos_weight) {
  const Real w = y ? pos_weight : 1.0;
  // -log sigmoid(l) = softplus(-l); -log(1 - sigmoid(l)) = softplus(l).
  const Real loss = w * (y ? softplus(-logit) : softplus(logit));
  return {loss, w * (sigmoid(logit) - (y ? 1.0 : 0.0))};
}

std::string train_log_csv(const std::vector<TrainLogRow>& log) {
  std::ostringstream os;
  os << kTrainLogHeader << "\n";
  for (const auto& r : log)
    os << r.phase << "," << r.stream << "," << r.epoch << "," << r.split << "," << format_real(r.loss) << ","
       << format_real(r.auroc) << "\n";
  return os.str();
}

Real train_pos_weight(const Cohort& cohort) {
  std::size_t pos = 0, neg = 0;
  for (const auto* inst : cohort.split(Split::train)) (inst->label ? pos : neg)++;
  if (pos == 0 || neg == 0) throw ValidationError("degenerate cohort: train split has a single class");
  return static_cast<Real>(neg) / static_cast<Real>(pos);
}

namespace {

const char* stream_name(Modality m) { return m == Modality::ts ? "ts" : "note"; }

StreamModel& stream_of(ModelBundle& b, Modality m) { return m == Modality::ts ? b.ts_stream : b.note_stream; }
const StreamModel& stream_of(const ModelBundle& b, Modality m) {
  return m == Modality::ts ? b.ts_stream : b.note_stream;
}

StreamPass forward(const ModelBundle& b, const Instance& inst, Modality m, const Vector& mask) {
  return m == Modality::ts ? ts_forward(b, inst, mask) : note_forward(b, inst, mask);
}

Vector full_mask(const Instance& inst, Modality m) {
  return m == Modality::ts ? Vector(Vector::Ones(inst.ts.rows())) : Vector(inst.presence.cast<Real>());
}

const Matrix& units_of(const Instance& inst, Modality m) { return m == Modality::ts ? inst.ts : inst.note_emb; }

Mask presence_of(const Instance& inst, Modality m) {
  return m == Modality::ts ? Mask(Mask::Ones(inst.ts.rows())) : inst.presence;
}

struct EpochEval {
  Real loss = 0;
  Real auroc = 0;
};

template <class LogitFn>
EpochEval evaluate_split(const std::vector<const Instance*>& split, Real pos_weight, LogitFn logit_fn) {
  std::vector<int> labels;
  std::vector<Real> logits;
  Real loss = 0;
  for (const auto* inst : split) {
    const Real l = logit_fn(*inst);
    loss += class_balanced_bce(l, inst->label, pos_weight).loss;
    labels.push_back(inst->label);
    logits.push_back(l);
  }
  EpochEval e;
  e.loss = split.empty() ? 0 : loss / static_cast<Real>(split.size());
  const bool both = std::find(labels.begin(), labels.end(), 0) != labels.end() &&
                    std::find(labels.begin(), labels.end(), 1) != labels.end();
  e.auroc = both ? auroc(labels, logits) : std::nan("");
  return e;
}

/// Shared epoch loop: `step` accumulates one instance's gradient scaled by
/// 1/batch; the model with the best val AUROC is kept.
template <class StepFn, class LogitFn>
void run_epochs(ModelBundle& b, Modality m, const Cohort& cohort, const TrainConfig& cfg, int epochs,
                const char* phase, Real pos_weight, std::vector<TrainLogRow>& log, StepFn step, LogitFn logit_fn) {
  const auto train = cohort.split(Split::train);
  const auto val = cohort.split(Split::val);
  Rng rng(derive_seed(cfg.seed, std::string("train/") + phase + "/" + stream_name(m)));
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  StreamModel best = stream_of(b, m);
  Real best_auroc = -1;
  for (int epoch = 1; epoch <= epochs; ++epoch) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      StreamModel& model = stream_of(b, m);
      StreamGrads g = StreamGrads::zeros_like(model);
      const Real scale = 1.0 / static_cast<Real>(end - start);
      for (std::size_t i = start; i < end; ++i) step(*train[order[i]], scale, g);
      apply_update(model, g, cfg.lr);
    }
    const auto tr = evaluate_split(train, pos_weight, logit_fn);
    log.push_back({phase, stream_name(m), epoch, "train", tr.loss, tr.auroc});
    if (!val.empty()) {
      const auto va = evaluate_split(val, pos_weight, logit_fn);
      log.push_back({phase, stream_name(m), epoch, "val", va.loss, va.auroc});
      const Real score = std::isnan(va.auroc) ? -tr.loss : va.auroc;
      if (score > best_auroc || best_auroc == -1) {
        best_auroc = score;
        best = stream_of(b, m);
      }
    } else {
      best = stream_of(b, m);
    }
  }
  if (epochs > 0) stream_of(b, m) = best;
}

}  // namespace

Real phase1_accumulate(const ModelBundle& b, const Instance& inst, Modality m, Real pos_weight, Real scale,
                       StreamGrads& grads) {
  const StreamPass pass = forward(b, inst, m, full_mask(inst, m));
  const auto bce = class_balanced_bce(pass.logit, inst.label, pos_weight);
  stream_backward(stream_of(b, m), pass, bce.dlogit * scale, &grads, true);
  return bce.loss;
}

Real phase2_accumulate(const ModelBundle& b, const Instance& inst, Modality m, int k, Real pos_weight, Real scale,
                       StreamGrads& grads) {
  const StreamModel& model = stream_of(b, m);
  const Mask pres = presence_of(inst, m);
  if (pres.cast<int>().sum() == 0) {  // nothing to select
    return class_balanced_bce(forward(b, inst, m, Vector::Zero(pres.size())).logit, inst.label, pos_weight).loss;
  }
  const Real tau = b.ste_temperature;
  MlpCache sel_cache;
  Vector scores = mlp_forward(model.selector, units_of(inst, m), &sel_cache).col(0);
  for (Eigen::Index i = 0; i < pres.size(); ++i)
    if (!pres(i)) scores(i) = kNegInf;
  const SteTopK st = ste_topk(scores, k, tau);
  const StreamPass pass = forward(b, inst, m, st.composite());
  const auto bce = class_balanced_bce(pass.logit, inst.label, pos_weight);
  const Vector dmask = stream_backward(model, pass, bce.dlogit * scale, &grads, false);
  const Vector dscores = ste_topk_backward(st, dmask, tau);
  mlp_backward_accumulate(model.selector, sel_cache, Matrix(dscores), grads.selector);
  return bce.loss;
}

Mask selector_topk(const ModelBundle& b, const Instance& inst, Modality m, int k) {
  const Vector s = score_units(stream_of(b, m), units_of(inst, m), presence_of(inst, m));
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (std::isfinite(s(i))) return ste_topk(s, k, b.ste_temperature).hard;
  return Mask::Zero(s.size());
}

Real selector_masked_logit(const ModelBundle& b, const Instance& inst, Modality m, int k) {
  const Vector mask = selector_topk(b, inst, m, k).cast<Real>();
  return forward(b, inst, m, mask).logit;
}

TrainResult train_phase1(const Cohort& cohort, const TrainConfig& cfg) {
  cfg.validate(cohort.dims);
  TrainResult out;
  out.pos_weight = train_pos_weight(cohort);
  Rng init(derive_seed(cfg.seed, "train/init"));
  out.bundle = make_bundle(cohort.dims, cfg.shape, init);
  out.bundle.ste_temperature = cfg.ste_temperature;
  const Real pw = out.pos_weight;

  for (Modality m : {Modality::ts, Modality::note}) {
    stream_of(out.bundle, m).frozen = FrozenFlags{};
    stream_of(out.bundle, m).frozen.selector = true;
    auto step = [&](const Instance& inst, Real scale, StreamGrads& g) {
      phase1_accumulate(out.bundle, inst, m, pw, scale, g);
    };
    auto logit_fn = [&](const Instance& inst) { return forward(out.bundle, inst, m, full_mask(inst, m)).logit; };
    run_epochs(out.bundle, m, cohort, cfg, cfg.epochs_phase1, "phase1", pw, out.log, step, logit_fn);
    stream_of(out.bundle, m).frozen.selector = false;
  }
  return out;
}

TrainResult train_phase2(const Cohort& cohort, const ModelBundle& bundle, const TrainConfig& cfg) {
  cfg.validate(cohort.dims);
  if (!(bundle.dims == cohort.dims)) throw ValidationError("model dims do not match cohort");
  TrainResult out;
  out.bundle = bundle;
  out.bundle.ste_temperature = cfg.ste_temperature;
  out.pos_weight = train_pos_weight(cohort);
  const Real pw = out.pos_weight;
  const int k = cfg.k_train;

  for (Modality m : {Modality::ts, Modality::note}) {
    StreamModel& sm = stream_of(out.bundle, m);
    sm.frozen = FrozenFlags{};
    sm.frozen.freeze_predictor();
    auto step = [&](const Instance& inst, Real scale, StreamGrads& g) {
      phase2_accumulate(out.bundle, inst, m, k, pw, scale, g);
    };
    auto logit_fn = [&](const Instance& inst) { return selector_masked_logit(out.bundle, inst, m, k); };
    run_epochs(out.bundle, m, cohort, cfg, cfg.epochs_phase2, "phase2", pw, out.log, step, logit_fn);
  }
  return out;
}

TrainResult train_full(const Cohort& cohort, const TrainConfig& cfg) {
  TrainResult p1 = train_phase1(cohort, cfg);
  TrainResult p2 = train_phase2(cohort, p1.bundle, cfg);
  p1.log.insert(p1.log.end(), p2.log.begin(), p2.log.end());
  p2.log = std::move(p1.log);
  return p2;
}

}  // namespace toe
