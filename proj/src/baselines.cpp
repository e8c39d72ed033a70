#include "toe/baselines.hpp"

#include <algorithm>
#include <bit>
#include <cmath>

namespace toe {

const char* to_string(RankingPool p) {
  switch (p) {
    case RankingPool::global: return "global";
    case RankingPool::znorm: return "znorm";
    case RankingPool::per_modality: return "per_modality";
  }
  return "global";
}

RankingPool ranking_pool_from_string(const std::string& s) {
  if (s == "global") return RankingPool::global;
  if (s == "znorm") return RankingPool::znorm;
  if (s == "per_modality") return RankingPool::per_modality;
  throw UsageError("unknown ranking pool '" + s + "' (expected global, znorm or per_modality)");
}

namespace {

struct Scored {
  UnitRef unit;
  Real score;
};

void append_finite(std::vector<Scored>& out, const Vector& s, Modality m) {
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (std::isfinite(s(i))) out.push_back({{m, static_cast<int>(i)}, s(i)});
}

void sort_desc(std::vector<Scored>& v) {
  std::sort(v.begin(), v.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.unit < b.unit;
  });
}

Vector znormalize(const Vector& s) {
  Real sum = 0, sq = 0;
  int n = 0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    if (!std::isfinite(s(i))) continue;
    sum += s(i);
    ++n;
  }
  if (n == 0) return s;
  const Real mean = sum / n;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (std::isfinite(s(i))) sq += (s(i) - mean) * (s(i) - mean);
  const Real sd = std::sqrt(sq / n);
  Vector out = s;
  for (Eigen::Index i = 0; i < s.size(); ++i)
    if (std::isfinite(s(i))) out(i) = sd > 0 ? (s(i) - mean) / sd : 0.0;
  return out;
}

MaskPair take(const std::vector<Scored>& ranked, std::size_t k, const Dims& dims) {
  MaskPair m = MaskPair::empty(dims);
  for (std::size_t i = 0; i < std::min(k, ranked.size()); ++i) m.set(ranked[i].unit);
  return m;
}

Dims dims_of(const Instance& inst) {
  Dims d;
  d.T = static_cast<int>(inst.ts.rows());
  d.D = static_cast<int>(inst.ts.cols());
  d.M_max = static_cast<int>(inst.presence.size());
  d.E_dim = static_cast<int>(inst.note_emb.cols());
  return d;
}

}  // namespace

MaskPair topk_ranking_mask(const ModelBundle& b, const Instance& inst, int k, RankingPool pool) {
  if (k < 1) throw ValidationError("topk_ranking_mask: k must be >= 1");
  Vector ts = score_ts_units(b, inst);
  Vector note = score_note_units(b, inst);
  if (pool == RankingPool::znorm) {
    ts = znormalize(ts);
    note = znormalize(note);
  }
  if (pool != RankingPool::per_modality) {
    std::vector<Scored> all;
    append_finite(all, ts, Modality::ts);
    append_finite(all, note, Modality::note);
    sort_desc(all);
    return take(all, static_cast<std::size_t>(k), b.dims);
  }
  std::vector<Scored> rt, rn;
  append_finite(rt, ts, Modality::ts);
  append_finite(rn, note, Modality::note);
  sort_desc(rt);
  sort_desc(rn);
  const auto nt = static_cast<long>(rt.size());
  const auto nn = static_cast<long>(rn.size());
  long kt = nt + nn ? std::lround(static_cast<Real>(k) * static_cast<Real>(nt) / static_cast<Real>(nt + nn)) : 0;
  kt = std::min(kt, nt);
  long kn = std::min<long>(k - kt, nn);
  kt = std::min<long>(k - kn, nt);  // spill unused note budget back to hours
  MaskPair m = take(rt, static_cast<std::size_t>(kt), b.dims);
  for (long i = 0; i < kn; ++i) m.set(rn[static_cast<std::size_t>(i)].unit);
  return m;
}

MaskPair random_mask(const Instance& inst, int k, std::uint64_t seed) {
  std::vector<UnitRef> valid;
  for (int t = 0; t < inst.ts.rows(); ++t) valid.push_back({Modality::ts, t});
  for (int j = 0; j < inst.presence.size(); ++j)
    if (inst.presence(j)) valid.push_back({Modality::note, j});
  if (k < 0 || k > static_cast<int>(valid.size()))
    throw ValidationError("random_mask: k exceeds the valid units of instance '" + inst.id + "'");
  Rng rng(seed);
  rng.shuffle(valid.begin(), valid.end());
  MaskPair m = MaskPair::empty(dims_of(inst));
  for (int i = 0; i < k; ++i) m.set(valid[static_cast<std::size_t>(i)]);
  return m;
}

SaliencyScores saliency_scores(const ModelBundle& b, const Instance& inst) {
  const StreamPass ts = ts_forward(b, inst, Vector::Ones(inst.ts.rows()));
  const StreamPass note = note_forward(b, inst, inst.presence.cast<Real>());
  SaliencyScores s;
  s.ts = stream_backward(b.ts_stream, ts, 1.0, nullptr, false).cwiseAbs();
  s.note = stream_backward(b.note_stream, note, 1.0, nullptr, false).cwiseAbs();
  for (Eigen::Index j = 0; j < s.note.size(); ++j)
    if (!inst.presence(j)) s.note(j) = 0;
  return s;
}

std::vector<UnitRef> saliency_rank(const ModelBundle& b, const Instance& inst) {
  const auto s = saliency_scores(b, inst);
  std::vector<Scored> all;
  append_finite(all, s.ts, Modality::ts);
  for (Eigen::Index j = 0; j < s.note.size(); ++j)
    if (inst.presence(j)) all.push_back({{Modality::note, static_cast<int>(j)}, s.note(j)});
  sort_desc(all);
  std::vector<UnitRef> out;
  for (const auto& x : all) out.push_back(x.unit);
  return out;
}

MaskPair saliency_mask(const ModelBundle& b, const Instance& inst, int k) {
  if (k < 1) throw ValidationError("saliency_mask: k must be >= 1");
  const auto order = saliency_rank(b, inst);
  MaskPair m = MaskPair::empty(b.dims);
  for (std::size_t i = 0; i < std::min(order.size(), static_cast<std::size_t>(k)); ++i) m.set(order[i]);
  return m;
}

OracleResult exhaustive_best(const ModelBundle& b, const Instance& inst, int k_max, const SearchConfig& cfg,
                             int k_min) {
  const auto cand = candidate_units(b, inst, cfg);
  if (static_cast<int>(cand.size()) > kOracleMaxCandidates) throw ValidationError("instance too large for oracle");
  if (k_min < 1 || k_max < k_min) throw ValidationError("exhaustive_best: need 1 <= k_min <= k_max");
  const EvalCache cache(b, inst);
  const Real p_full = cache.probability(MaskPair::full(b.dims, inst.presence));
  const int y_hat = decide(p_full);

  OracleResult best;
  bool have = false;
  const int n = static_cast<int>(cand.size());
  for (std::uint32_t bits = 1; bits < (1u << n); ++bits) {
    const int K = std::popcount(bits);
    if (K < k_min || K > k_max) continue;
    MaskPair m = MaskPair::empty(b.dims);
    for (int i = 0; i < n; ++i)
      if (bits & (1u << i)) m.set(cand[static_cast<std::size_t>(i)]);
    SearchState s = score_state(b, cache, p_full, y_hat, m, cfg);
    ++best.enumerated;
    if (!have || beam_before(s, best.state)) {
      best.state = std::move(s);
      have = true;
    }
  }
  best.mask = have ? best.state.mask : MaskPair::empty(b.dims);
  return best;
}

}  // namespace toe
