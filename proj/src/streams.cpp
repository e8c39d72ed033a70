#include "toe/streams.hpp"

#include <algorithm>
#include <numeric>

namespace toe {

namespace {

Matrix context_input(const Vector& x, bool has) {
  Matrix row(1, x.size() + 1);
  row.leftCols(x.size()) = x.transpose();
  row(0, x.size()) = has ? 1.0 : 0.0;
  return row;
}

/// Weighted mean of rows, sum_j w_j H_j / (sum_j w_j + eps). Rows with zero
/// weight are skipped so cached and direct evaluation round identically.
Vector pool_rows(const Matrix& rows, const Vector& weights, Real eps, Real* denom_out) {
  Vector acc = Vector::Zero(rows.cols());
  Real wsum = 0;
  for (Eigen::Index j = 0; j < rows.rows(); ++j) {
    const Real w = weights(j);
    if (w == 0) continue;
    acc += w * rows.row(j).transpose();
    wsum += w;
  }
  const Real denom = wsum + eps;
  if (denom_out) *denom_out = denom;
  return acc / denom;
}

Matrix ts_projection_input(const Matrix& ts, const Vector* mask) {
  const auto T = ts.rows();
  const auto D = ts.cols();
  Matrix in = Matrix::Zero(T, D + T);
  for (Eigen::Index t = 0; t < T; ++t) {
    in.row(t).head(D) = mask ? ((*mask)(t) * ts.row(t)).eval() : ts.row(t);
    in(t, D + t) = 1.0;
  }
  return in;
}

void check_mlp(const Mlp& m, Eigen::Index in, Eigen::Index out, const char* name) {
  if (m.layers.empty()) throw ValidationError(std::string("model: empty network '") + name + "'");
  for (std::size_t i = 1; i < m.layers.size(); ++i) {
    if (m.layers[i].weight.cols() != m.layers[i - 1].weight.rows())
      throw ValidationError(std::string("model: layer widths do not chain in '") + name + "'");
  }
  for (const auto& l : m.layers) {
    if (l.bias.size() != l.weight.rows()) throw ValidationError(std::string("model: bias width mismatch in '") + name + "'");
  }
  if ((in >= 0 && m.in_dim() != in) || (out >= 0 && m.out_dim() != out)) {
    throw ValidationError(std::string("model: unexpected input/output width in '") + name + "'");
  }
}

StreamModel make_stream(int unit_dim, int proj_in, const Dims& dims, const ModelShape& shape, Rng& rng) {
  using A = Activation;
  StreamModel s;
  s.selector = make_mlp({unit_dim, shape.selector_hidden, 1}, {A::relu, A::identity}, rng);
  s.unit_proj = make_mlp({proj_in, shape.unit_hidden}, {A::relu}, rng);
  s.ctx_cxr = make_mlp({dims.D_cxr + 1, shape.ctx_width}, {A::relu}, rng);
  s.ctx_ecg = make_mlp({dims.D_ecg + 1, shape.ctx_width}, {A::relu}, rng);
  s.classifier = make_mlp({shape.unit_hidden + 2 * shape.ctx_width, shape.classifier_hidden, 1},
                          {A::relu, A::identity}, rng);
  return s;
}

}  // namespace

void StreamModel::check_shapes() const {
  check_mlp(selector, -1, 1, "selector");
  check_mlp(unit_proj, -1, -1, "unit_proj");
  check_mlp(ctx_cxr, -1, -1, "ctx_cxr");
  check_mlp(ctx_ecg, -1, -1, "ctx_ecg");
  check_mlp(classifier, unit_proj.out_dim() + ctx_cxr.out_dim() + ctx_ecg.out_dim(), 1, "classifier");
}

StreamGrads StreamGrads::zeros_like(const StreamModel& m) {
  return {m.selector.zeros_like(), m.unit_proj.zeros_like(), m.ctx_cxr.zeros_like(), m.ctx_ecg.zeros_like(),
          m.classifier.zeros_like()};
}

ModelBundle make_bundle(const Dims& dims, const ModelShape& shape, Rng& rng) {
  ModelBundle b;
  b.dims = dims;
  b.ts_stream = make_stream(dims.D, dims.D + dims.T, dims, shape, rng);
  b.note_stream = make_stream(dims.E_dim, dims.E_dim, dims, shape, rng);
  return b;
}

namespace {

bool all_zero(const Mlp& g) {
  for (const auto& l : g.layers)
    if (!l.weight.isZero(0) || !l.bias.isZero(0)) return false;
  return true;
}

void update_part(Mlp& p, const Mlp& g, bool frozen, Real lr, const char* name) {
  if (frozen) {
    TOE_ASSERT(all_zero(g), std::string("gradient reached frozen part '") + name + "'");
    return;
  }
  sgd_step(p, g, lr);
}

}  // namespace

void apply_update(StreamModel& m, const StreamGrads& g, Real lr) {
  update_part(m.selector, g.selector, m.frozen.selector, lr, "selector");
  update_part(m.unit_proj, g.unit_proj, m.frozen.unit_proj, lr, "unit_proj");
  update_part(m.ctx_cxr, g.ctx_cxr, m.frozen.ctx_cxr, lr, "ctx_cxr");
  update_part(m.ctx_ecg, g.ctx_ecg, m.frozen.ctx_ecg, lr, "ctx_ecg");
  update_part(m.classifier, g.classifier, m.frozen.classifier, lr, "classifier");
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

Json mlp_to_json(const Mlp& m) {
  Json layers = Json::array();
  for (const auto& l : m.layers) {
    Json jl;
    jl["in"] = l.weight.cols();
    jl["out"] = l.weight.rows();
    jl["activation"] = to_string(l.activation);
    Json w = Json::array();
    for (Eigen::Index r = 0; r < l.weight.rows(); ++r) {
      Json row = Json::array();
      for (Eigen::Index c = 0; c < l.weight.cols(); ++c) row.push_back(l.weight(r, c));
      w.push_back(std::move(row));
    }
    jl["weight"] = std::move(w);
    Json bias = Json::array();
    for (Eigen::Index r = 0; r < l.bias.size(); ++r) bias.push_back(l.bias(r));
    jl["bias"] = std::move(bias);
    layers.push_back(std::move(jl));
  }
  return layers;
}

Mlp mlp_from_json(const Json& j) {
  Mlp m;
  for (const auto& jl : j) {
    DenseLayer<Real> l;
    const auto in = jl.at("in").get<Eigen::Index>();
    const auto out = jl.at("out").get<Eigen::Index>();
    l.activation = activation_from_string(jl.at("activation").get<std::string>());
    const auto& w = jl.at("weight");
    const auto& bias = jl.at("bias");
    if (static_cast<Eigen::Index>(w.size()) != out || static_cast<Eigen::Index>(bias.size()) != out)
      throw ValidationError("model: layer shape mismatch");
    l.weight.resize(out, in);
    l.bias.resize(out);
    for (Eigen::Index r = 0; r < out; ++r) {
      const auto& row = w[static_cast<std::size_t>(r)];
      if (static_cast<Eigen::Index>(row.size()) != in) throw ValidationError("model: layer shape mismatch");
      for (Eigen::Index c = 0; c < in; ++c) l.weight(r, c) = row[static_cast<std::size_t>(c)].get<Real>();
      l.bias(r) = bias[static_cast<std::size_t>(r)].get<Real>();
    }
    m.layers.push_back(std::move(l));
  }
  return m;
}

Json stream_to_json(const StreamModel& s) {
  Json j;
  j["selector"] = mlp_to_json(s.selector);
  j["unit_proj"] = mlp_to_json(s.unit_proj);
  j["ctx_cxr"] = mlp_to_json(s.ctx_cxr);
  j["ctx_ecg"] = mlp_to_json(s.ctx_ecg);
  j["classifier"] = mlp_to_json(s.classifier);
  j["frozen"] = {{"selector", s.frozen.selector},   {"unit_proj", s.frozen.unit_proj},
                 {"ctx_cxr", s.frozen.ctx_cxr},     {"ctx_ecg", s.frozen.ctx_ecg},
                 {"classifier", s.frozen.classifier}};
  return j;
}

StreamModel stream_from_json(const Json& j) {
  StreamModel s;
  s.selector = mlp_from_json(j.at("selector"));
  s.unit_proj = mlp_from_json(j.at("unit_proj"));
  s.ctx_cxr = mlp_from_json(j.at("ctx_cxr"));
  s.ctx_ecg = mlp_from_json(j.at("ctx_ecg"));
  s.classifier = mlp_from_json(j.at("classifier"));
  if (j.contains("frozen")) {
    const auto& f = j["frozen"];
    s.frozen.selector = f.value("selector", false);
    s.frozen.unit_proj = f.value("unit_proj", false);
    s.frozen.ctx_cxr = f.value("ctx_cxr", false);
    s.frozen.ctx_ecg = f.value("ctx_ecg", false);
    s.frozen.classifier = f.value("classifier", false);
  }
  s.check_shapes();
  return s;
}

}  // namespace

Json bundle_to_json(const ModelBundle& b) {
  Json j;
  j["format"] = "toe-model";
  j["version"] = kModelFormatVersion;
  j["dims"] = {{"T", b.dims.T},         {"D", b.dims.D},         {"M_max", b.dims.M_max},
               {"E_dim", b.dims.E_dim}, {"D_cxr", b.dims.D_cxr}, {"D_ecg", b.dims.D_ecg}};
  j["ste_temperature"] = b.ste_temperature;
  j["epsilon"] = b.epsilon;
  j["ts_stream"] = stream_to_json(b.ts_stream);
  j["note_stream"] = stream_to_json(b.note_stream);
  return j;
}

ModelBundle bundle_from_json(const Json& j) {
  try {
    if (j.value("format", "") != "toe-model") throw ValidationError("not a model file");
    if (j.at("version").get<int>() != kModelFormatVersion) throw ValidationError("unsupported model version");
    ModelBundle b;
    const auto& d = j.at("dims");
    b.dims = Dims{d.at("T").get<int>(),     d.at("D").get<int>(),     d.at("M_max").get<int>(),
                  d.at("E_dim").get<int>(), d.at("D_cxr").get<int>(), d.at("D_ecg").get<int>()};
    b.ste_temperature = j.at("ste_temperature").get<Real>();
    b.epsilon = j.at("epsilon").get<Real>();
    if (!(b.ste_temperature > 0) || !(b.epsilon > 0)) throw ValidationError("model: temperature and epsilon must be positive");
    b.ts_stream = stream_from_json(j.at("ts_stream"));
    b.note_stream = stream_from_json(j.at("note_stream"));
    if (b.ts_stream.selector.in_dim() != b.dims.D || b.ts_stream.unit_proj.in_dim() != b.dims.D + b.dims.T ||
        b.note_stream.selector.in_dim() != b.dims.E_dim || b.note_stream.unit_proj.in_dim() != b.dims.E_dim ||
        b.ts_stream.ctx_cxr.in_dim() != b.dims.D_cxr + 1 || b.ts_stream.ctx_ecg.in_dim() != b.dims.D_ecg + 1 ||
        b.note_stream.ctx_cxr.in_dim() != b.dims.D_cxr + 1 || b.note_stream.ctx_ecg.in_dim() != b.dims.D_ecg + 1) {
      throw ValidationError("model: network widths do not match dims");
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("model: ") + e.what());
  }
}

void save_bundle(const ModelBundle& b, const std::filesystem::path& path) {
  write_file_atomic(path, bundle_to_json(b).dump() + "\n");
}

ModelBundle load_bundle(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(read_file(path));
  } catch (const nlohmann::json::parse_error& e) {
    throw ValidationError("model parse error: " + std::string(e.what()));
  }
  return bundle_from_json(j);
}

// ---------------------------------------------------------------------------
// Selection

Vector score_units(const StreamModel& stream, const Matrix& units, const Mask& presence) {
  if (units.rows() != presence.size()) throw ValidationError("score_units: presence length mismatch");
  Vector scores = mlp_forward(stream.selector, units).col(0);
  for (Eigen::Index i = 0; i < presence.size(); ++i)
    if (!presence(i)) scores(i) = kNegInf;
  return scores;
}

Vector score_ts_units(const ModelBundle& b, const Instance& inst) {
  return score_units(b.ts_stream, inst.ts, Mask::Ones(inst.ts.rows()));
}

Vector score_note_units(const ModelBundle& b, const Instance& inst) {
  return score_units(b.note_stream, inst.note_emb, inst.presence);
}

SteTopK ste_topk(const Vector& scores, int k, Real tau) {
  if (k < 1) throw ValidationError("ste_topk: k must be >= 1");
  SteTopK out;
  out.surrogate = softmax_temp(scores, tau);  // throws "no valid units"
  std::vector<Eigen::Index> order;
  for (Eigen::Index i = 0; i < scores.size(); ++i)
    if (std::isfinite(scores(i))) order.push_back(i);
  std::stable_sort(order.begin(), order.end(), [&](auto a, auto b) { return scores(a) > scores(b); });
  out.hard = Mask::Zero(scores.size());
  const auto take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  for (std::size_t i = 0; i < take; ++i) out.hard(order[i]) = 1;
  return out;
}

Vector ste_topk_backward(const SteTopK& st, const Vector& upstream, Real tau) {
  return softmax_temp_backward(st.surrogate, upstream, tau);
}

// ---------------------------------------------------------------------------
// Stream forward / backward

namespace {

void finish_forward(const StreamModel& s, const Instance& inst, Real eps, StreamPass& p) {
  p.projected = mlp_forward(s.unit_proj, p.proj_in, &p.unit_cache);
  p.pooled = pool_rows(p.projected, p.weights, eps, &p.denom);
  const Matrix c = mlp_forward(s.ctx_cxr, context_input(inst.context.cxr, inst.context.has_cxr), &p.cxr_cache);
  const Matrix e = mlp_forward(s.ctx_ecg, context_input(inst.context.ecg, inst.context.has_ecg), &p.ecg_cache);
  Matrix z(1, p.pooled.size() + c.cols() + e.cols());
  z << p.pooled.transpose(), c, e;
  p.logit = mlp_forward(s.classifier, z, &p.cls_cache)(0, 0);
}

}  // namespace

StreamPass ts_forward(const ModelBundle& b, const Instance& inst, const Vector& mask) {
  if (mask.size() != inst.ts.rows()) throw ValidationError("ts mask length must equal T");
  StreamPass p;
  p.mask = mask;
  p.presence = Vector::Ones(mask.size());
  p.weights = mask;
  p.raw = inst.ts;
  p.masked_inputs = true;
  p.proj_in = ts_projection_input(inst.ts, &mask);
  finish_forward(b.ts_stream, inst, b.epsilon, p);
  return p;
}

StreamPass note_forward(const ModelBundle& b, const Instance& inst, const Vector& mask) {
  if (mask.size() != inst.presence.size()) throw ValidationError("note mask length must equal M_max");
  StreamPass p;
  p.mask = mask;
  p.presence = inst.presence.cast<Real>();
  p.weights = (mask.array() * p.presence.array()).matrix();
  p.raw = inst.note_emb;
  p.masked_inputs = false;
  p.proj_in = inst.note_emb;
  finish_forward(b.note_stream, inst, b.epsilon, p);
  return p;
}

Vector stream_backward(const StreamModel& s, const StreamPass& p, Real dlogit, StreamGrads* grads,
                       bool predictor_grads) {
  const bool acc = grads && predictor_grads;
  StreamGrads scratch;
  StreamGrads& g = acc ? *grads : scratch;
  if (!acc) {
    g.classifier = s.classifier.zeros_like();
    g.unit_proj = s.unit_proj.zeros_like();
    g.ctx_cxr = s.ctx_cxr.zeros_like();
    g.ctx_ecg = s.ctx_ecg.zeros_like();
  }
  Matrix up(1, 1);
  up(0, 0) = dlogit;
  const Matrix dz = mlp_backward_accumulate(s.classifier, p.cls_cache, up, g.classifier);
  const auto hd = p.pooled.size();
  const auto cw = s.ctx_cxr.out_dim();
  const auto ew = s.ctx_ecg.out_dim();
  const Vector dv = dz.row(0).head(hd).transpose();
  if (acc) {
    mlp_backward_accumulate(s.ctx_cxr, p.cxr_cache, Matrix(dz.block(0, hd, 1, cw)), g.ctx_cxr);
    mlp_backward_accumulate(s.ctx_ecg, p.ecg_cache, Matrix(dz.block(0, hd + cw, 1, ew)), g.ctx_ecg);
  }

  // v = sum_j w_j H_j / (sum_j w_j + eps), with w_j = m_j a_j, so
  // dv/dm_j = a_j (H_j - v) / den, plus the input path for masked features.
  const Vector dv_over = dv / p.denom;
  const Vector resid_dot = (p.projected.rowwise() - p.pooled.transpose()) * dv_over;
  Vector dmask = (p.presence.array() * resid_dot.array()).matrix();

  const bool need_unit = acc || p.masked_inputs;
  if (need_unit) {
    Matrix dH = p.weights * dv_over.transpose();
    const Matrix din = mlp_backward_accumulate(s.unit_proj, p.unit_cache, dH, g.unit_proj);
    if (p.masked_inputs) {
      const auto D = p.raw.cols();
      for (Eigen::Index t = 0; t < p.mask.size(); ++t) {
        dmask(t) += din.row(t).head(D).dot(p.raw.row(t));
      }
    }
  }
  return dmask;
}

// ---------------------------------------------------------------------------
// Logits and fusion

Real ts_logit(const ModelBundle& b, const Instance& inst, const Vector& mask) {
  return ts_forward(b, inst, mask).logit;
}

Real ts_logit(const ModelBundle& b, const Instance& inst, const Mask& mask) {
  return ts_logit(b, inst, Vector(mask.cast<Real>()));
}

Real note_logit(const ModelBundle& b, const Instance& inst, const Mask& mask) {
  if (mask.size() != inst.presence.size()) throw ValidationError("note mask length must equal M_max");
  for (Eigen::Index j = 0; j < mask.size(); ++j)
    if (mask(j) && !inst.presence(j)) throw ValidationError("padding selected");
  return note_forward(b, inst, mask.cast<Real>()).logit;
}

Decision full_input_decision(const ModelBundle& b, const Instance& inst) {
  const Real l_ts = ts_logit(b, inst, Mask(Mask::Ones(inst.ts.rows())));
  const Real l_note = note_logit(b, inst, inst.presence);
  const Real p = fuse(l_ts, l_note);
  return {p, decide(p)};
}

// ---------------------------------------------------------------------------
// Cached evaluation

EvalCache::EvalCache(const ModelBundle& b, const Instance& inst) : bundle_(&b), inst_(&inst) {
  ++builds_;
  ts_projected_ = mlp_forward(b.ts_stream.unit_proj, ts_projection_input(inst.ts, nullptr));
  note_projected_ = mlp_forward(b.note_stream.unit_proj, inst.note_emb);
  auto ctx = [&](const StreamModel& s) {
    const Matrix c = mlp_forward(s.ctx_cxr, context_input(inst.context.cxr, inst.context.has_cxr));
    const Matrix e = mlp_forward(s.ctx_ecg, context_input(inst.context.ecg, inst.context.has_ecg));
    Vector out(c.cols() + e.cols());
    out << c.row(0).transpose(), e.row(0).transpose();
    return out;
  };
  ts_ctx_ = ctx(b.ts_stream);
  note_ctx_ = ctx(b.note_stream);
}

Real EvalCache::classify(const StreamModel& s, const Matrix& projected, const Mask& mask, const Vector& ctx) const {
  const Vector pooled = pool_rows(projected, mask.cast<Real>(), bundle_->epsilon, nullptr);
  Matrix z(1, pooled.size() + ctx.size());
  z << pooled.transpose(), ctx.transpose();
  return mlp_forward(s.classifier, z)(0, 0);
}

Real EvalCache::ts_logit(const Mask& mask) const {
  if (mask.size() != ts_projected_.rows()) throw ValidationError("ts mask length must equal T");
  return classify(bundle_->ts_stream, ts_projected_, mask, ts_ctx_);
}

Real EvalCache::note_logit(const Mask& mask) const {
  if (mask.size() != inst_->presence.size()) throw ValidationError("note mask length must equal M_max");
  for (Eigen::Index j = 0; j < mask.size(); ++j)
    if (mask(j) && !inst_->presence(j)) throw ValidationError("padding selected");
  return classify(bundle_->note_stream, note_projected_, mask, note_ctx_);
}

EvalCache build_eval_cache(const ModelBundle& b, const Instance& inst) { return EvalCache(b, inst); }

Real evaluate_masked(const EvalCache& cache, const MaskPair& mask) { return cache.probability(mask); }

Real evaluate_masked(const ModelBundle& b, const Instance& inst, const MaskPair& mask) {
  return fuse(ts_logit(b, inst, mask.ts), note_logit(b, inst, mask.note));
}

}  // namespace toe
