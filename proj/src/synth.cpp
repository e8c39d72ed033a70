#include "toe/synth.hpp"

#include <algorithm>
#include <numeric>

namespace toe {

void SynthConfig::validate() const {
  if (n_train < 0 || n_val < 0 || n_test < 0) throw UsageError("synth: split sizes must be non-negative");
  if (dims.T < 1 || dims.D < 1 || dims.M_max < 0 || dims.E_dim < 1 || dims.D_cxr < 0 || dims.D_ecg < 0)
    throw UsageError("synth: invalid dims");
  if (!(prevalence > 0 && prevalence < 1)) throw UsageError("synth: prevalence must be in (0, 1)");
  if (planted_ts < 0 || planted_ts > dims.T) throw UsageError("synth: planted_ts must be in [0, T]");
  if (planted_note < 0 || planted_note > dims.M_max) throw UsageError("synth: planted_note must be in [0, M_max]");
  if (noise_sd < 0) throw UsageError("synth: noise_sd must be non-negative");
  if (notes_only_fraction < 0 || notes_only_fraction > 1) throw UsageError("synth: notes_only_fraction must be in [0, 1]");
  if (context_present_prob < 0 || context_present_prob > 1) throw UsageError("synth: context_present_prob must be in [0, 1]");
  if (label_noise < 0 || label_noise > 1) throw UsageError("synth: label_noise must be in [0, 1]");
}

Json SynthConfig::to_json() const {
  Json j;
  j["n_train"] = n_train;
  j["n_val"] = n_val;
  j["n_test"] = n_test;
  j["prevalence"] = prevalence;
  j["planted_ts"] = planted_ts;
  j["planted_note"] = planted_note;
  j["signal_strength"] = signal_strength;
  j["noise_sd"] = noise_sd;
  j["notes_only_fraction"] = notes_only_fraction;
  j["context_coefficient"] = context_coefficient;
  j["context_present_prob"] = context_present_prob;
  j["label_noise"] = label_noise;
  j["seed"] = seed;
  return j;
}

void SpuriousConfig::validate(const Dims& dims) const {
  if (train_correlation < 0 || train_correlation > 1 || test_correlation < 0 || test_correlation > 1)
    throw UsageError("spurious: correlations must be in [0, 1]");
  const int idx = feature_index < 0 ? dims.D - 1 : feature_index;
  if (idx < 0 || idx >= dims.D) throw UsageError("spurious: feature index must be < D");
}

Json SpuriousConfig::to_json(const Dims& dims) const {
  return {{"feature_index", feature_index < 0 ? dims.D - 1 : feature_index},
          {"train_correlation", train_correlation},
          {"test_correlation", test_correlation}};
}

int signal_channel_count(const Dims& dims) { return std::max(1, dims.D / 2); }

namespace {

std::vector<int> choose_distinct(Rng& rng, const std::vector<int>& pool, int count) {
  std::vector<int> v = pool;
  rng.shuffle(v.begin(), v.end());
  v.resize(static_cast<std::size_t>(std::min<int>(count, static_cast<int>(v.size()))));
  std::sort(v.begin(), v.end());
  return v;
}

Vector fill_context(Rng& rng, int dim, int label, const SynthConfig& cfg, bool& has) {
  has = rng.bernoulli(cfg.context_present_prob);
  Vector x = Vector::Zero(dim);
  if (!has) return x;
  const Real shift = label ? cfg.context_coefficient * cfg.signal_strength : 0.0;
  for (int i = 0; i < dim; ++i) x(i) = shift + cfg.noise_sd * rng.normal();
  return x;
}

}  // namespace

Cohort generate_cohort(const SynthConfig& cfg) {
  cfg.validate();
  const Dims& d = cfg.dims;
  Cohort cohort;
  cohort.dims = d;
  cohort.meta["generator"] = cfg.to_json();

  Vector direction(d.E_dim);
  {
    Rng rng(derive_seed(cfg.seed, "synth/label_direction"));
    for (int i = 0; i < d.E_dim; ++i) direction(i) = rng.normal();
    direction /= direction.norm();
  }
  const int channels = signal_channel_count(d);
  std::vector<int> hours(static_cast<std::size_t>(d.T));
  std::iota(hours.begin(), hours.end(), 0);

  const int total = cfg.n_train + cfg.n_val + cfg.n_test;
  cohort.instances.reserve(static_cast<std::size_t>(total));
  for (int i = 0; i < total; ++i) {
    Rng rng(derive_seed(cfg.seed, "synth/instance/" + std::to_string(i)));
    Instance inst;
    inst.id = "s" + std::to_string(i);
    inst.split = i < cfg.n_train ? Split::train : (i < cfg.n_train + cfg.n_val ? Split::val : Split::test);
    const int label = rng.bernoulli(cfg.prevalence) ? 1 : 0;
    const bool notes_only = label && rng.bernoulli(cfg.notes_only_fraction);

    inst.ts.resize(d.T, d.D);
    for (int t = 0; t < d.T; ++t)
      for (int f = 0; f < d.D; ++f) inst.ts(t, f) = cfg.noise_sd * rng.normal();

    const int lo = std::min(cfg.planted_note, d.M_max);
    const int present = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(d.M_max - lo + 1)));
    inst.presence = Mask::Zero(d.M_max);
    inst.presence.head(present).setOnes();
    inst.note_emb = Matrix::Zero(d.M_max, d.E_dim);
    for (int j = 0; j < present; ++j)
      for (int e = 0; e < d.E_dim; ++e) inst.note_emb(j, e) = cfg.noise_sd * rng.normal();

    MaskPair gt = MaskPair::empty(d);
    if (label) {
      if (!notes_only) {
        for (int t : choose_distinct(rng, hours, cfg.planted_ts)) {
          inst.ts.row(t).head(channels).array() += cfg.signal_strength;
          gt.ts(t) = 1;
        }
      }
      std::vector<int> chunks(static_cast<std::size_t>(present));
      std::iota(chunks.begin(), chunks.end(), 0);
      for (int j : choose_distinct(rng, chunks, cfg.planted_note)) {
        inst.note_emb.row(j) += cfg.signal_strength * direction.transpose();
        gt.note(j) = 1;
      }
    }
    inst.ground_truth = gt;
    inst.context.cxr = fill_context(rng, d.D_cxr, label, cfg, inst.context.has_cxr);
    inst.context.ecg = fill_context(rng, d.D_ecg, label, cfg, inst.context.has_ecg);
    inst.label = label;
    if (cfg.label_noise > 0 && rng.bernoulli(cfg.label_noise)) inst.label = 1 - label;
    cohort.instances.push_back(std::move(inst));
  }
  return cohort;
}

Cohort inject_spurious(const Cohort& cohort, const SpuriousConfig& scfg, std::uint64_t seed) {
  scfg.validate(cohort.dims);
  Cohort out = cohort;
  const int idx = scfg.feature_index < 0 ? cohort.dims.D - 1 : scfg.feature_index;
  out.meta["spurious"] = scfg.to_json(cohort.dims);
  out.meta["spurious"]["seed"] = seed;
  for (std::size_t i = 0; i < out.instances.size(); ++i) {
    auto& inst = out.instances[i];
    Rng rng(derive_seed(seed, "spurious/" + inst.id));
    int flag;
    if (inst.split == Split::test) {
      flag = rng.bernoulli(scfg.test_correlation) ? inst.label : (rng.bernoulli(0.5) ? 1 : 0);
    } else {
      flag = rng.bernoulli(scfg.train_correlation) ? inst.label : 1 - inst.label;
    }
    inst.ts.col(idx).setConstant(flag ? 1.0 : 0.0);
  }
  return out;
}

int spurious_feature_index(const Cohort& cohort) {
  if (!cohort.meta.contains("spurious")) throw ValidationError("cohort carries no spurious feature");
  return cohort.meta["spurious"].at("feature_index").get<int>();
}

int spurious_flag(const Instance& inst, int feature_index) { return inst.ts(0, feature_index) == 1.0 ? 1 : 0; }

}  // namespace toe
