#include "toe/datamodel.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace toe {

const char* to_string(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::val: return "val";
    case Split::test: return "test";
  }
  return "?";
}

Split split_from_string(const std::string& s) {
  if (s == "train") return Split::train;
  if (s == "val") return Split::val;
  if (s == "test") return Split::test;
  throw ValidationError("unknown split '" + s + "'");
}

std::string UnitRef::tag() const {
  return (modality == Modality::ts ? "ts:" : "note:") + std::to_string(index);
}

UnitRef UnitRef::parse(const std::string& tag) {
  const auto colon = tag.find(':');
  if (colon == std::string::npos) throw ValidationError("bad unit tag '" + tag + "'");
  const std::string head = tag.substr(0, colon);
  UnitRef u;
  if (head == "ts") {
    u.modality = Modality::ts;
  } else if (head == "note") {
    u.modality = Modality::note;
  } else {
    throw ValidationError("bad unit tag '" + tag + "'");
  }
  try {
    std::size_t used = 0;
    u.index = std::stoi(tag.substr(colon + 1), &used);
    if (used != tag.size() - colon - 1 || u.index < 0) throw std::invalid_argument("");
  } catch (const std::exception&) {
    throw ValidationError("bad unit tag '" + tag + "'");
  }
  return u;
}

MaskPair MaskPair::empty(const Dims& dims) {
  return {Mask::Zero(dims.T), Mask::Zero(dims.M_max)};
}

MaskPair MaskPair::full(const Dims& dims, const Mask& presence) {
  return {Mask::Ones(dims.T), presence};
}

int MaskPair::size() const { return ts.cast<int>().sum() + note.cast<int>().sum(); }

bool MaskPair::contains(UnitRef u) const {
  return u.modality == Modality::ts ? ts(u.index) != 0 : note(u.index) != 0;
}

void MaskPair::set(UnitRef u, bool on) {
  auto& m = u.modality == Modality::ts ? ts : note;
  m(u.index) = on ? 1 : 0;
}

std::vector<UnitRef> MaskPair::units() const {
  std::vector<UnitRef> out;
  for (Eigen::Index i = 0; i < ts.size(); ++i)
    if (ts(i)) out.push_back({Modality::ts, static_cast<int>(i)});
  for (Eigen::Index i = 0; i < note.size(); ++i)
    if (note(i)) out.push_back({Modality::note, static_cast<int>(i)});
  return out;
}

std::vector<const Instance*> Cohort::split(Split s) const {
  std::vector<const Instance*> out;
  for (const auto& inst : instances)
    if (inst.split == s) out.push_back(&inst);
  return out;
}

MaskPair complement(const MaskPair& mask, const Mask& presence) {
  MaskPair out;
  out.ts = (1 - mask.ts.array()).matrix();
  out.note = Mask::Zero(mask.note.size());
  for (Eigen::Index j = 0; j < mask.note.size(); ++j) out.note(j) = presence(j) && !mask.note(j) ? 1 : 0;
  return out;
}

namespace {

[[noreturn]] void fail(const std::string& id, const std::string& field, const std::string& why) {
  throw ValidationError("instance '" + id + "': field '" + field + "': " + why);
}

bool is_binary(const Mask& m) {
  for (Eigen::Index i = 0; i < m.size(); ++i)
    if (m(i) > 1) return false;
  return true;
}

}  // namespace

void validate_mask(const MaskPair& mask, const Instance& inst, const std::string& what) {
  if (mask.ts.size() != inst.ts.rows()) fail(inst.id, what + "_ts", "length must equal T");
  if (mask.note.size() != inst.presence.size()) fail(inst.id, what + "_note", "length must equal M_max");
  if (!is_binary(mask.ts) || !is_binary(mask.note)) fail(inst.id, what, "mask must be binary");
  for (Eigen::Index j = 0; j < mask.note.size(); ++j) {
    if (mask.note(j) && !inst.presence(j)) fail(inst.id, what + "_note", "selects padding chunk " + std::to_string(j));
  }
}

void validate_instance(const Instance& inst, const Dims& dims) {
  const auto& id = inst.id;
  if (id.empty()) fail(id, "id", "must be non-empty");
  if (inst.label != 0 && inst.label != 1) fail(id, "label", "must be 0 or 1");
  if (inst.ts.rows() != dims.T || inst.ts.cols() != dims.D) fail(id, "ts", "shape must be T x D");
  if (inst.note_emb.rows() != dims.M_max || inst.note_emb.cols() != dims.E_dim)
    fail(id, "note_emb", "shape must be M_max x E_dim");
  if (inst.presence.size() != dims.M_max) fail(id, "presence", "length must be M_max");
  if (!is_binary(inst.presence)) fail(id, "presence", "must be binary");
  if (!inst.ts.allFinite()) fail(id, "ts", "non-finite value");
  if (!inst.note_emb.allFinite()) fail(id, "note_emb", "non-finite value");
  for (Eigen::Index j = 0; j < inst.presence.size(); ++j) {
    if (!inst.presence(j) && !inst.note_emb.row(j).isZero(0)) fail(id, "note_emb", "padded row " + std::to_string(j) + " is not zero");
  }
  const auto& c = inst.context;
  if (c.cxr.size() != dims.D_cxr) fail(id, "cxr", "length must be D_cxr");
  if (c.ecg.size() != dims.D_ecg) fail(id, "ecg", "length must be D_ecg");
  if (!c.cxr.allFinite()) fail(id, "cxr", "non-finite value");
  if (!c.ecg.allFinite()) fail(id, "ecg", "non-finite value");
  if (!c.has_cxr && !c.cxr.isZero(0)) fail(id, "cxr", "must be zero when has_cxr = 0");
  if (!c.has_ecg && !c.ecg.isZero(0)) fail(id, "ecg", "must be zero when has_ecg = 0");
  if (inst.ground_truth) validate_mask(*inst.ground_truth, inst, "gt");
}

namespace {

Json matrix_to_json(const Matrix& m) {
  Json rows = Json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    Json row = Json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
    rows.push_back(std::move(row));
  }
  return rows;
}

Json vector_to_json(const Vector& v) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

Json mask_to_json(const Mask& m) {
  Json out = Json::array();
  for (Eigen::Index i = 0; i < m.size(); ++i) out.push_back(static_cast<int>(m(i)));
  return out;
}

Matrix matrix_from_json(const Json& j, const std::string& id, const std::string& field, int expected_cols) {
  if (!j.is_array()) fail(id, field, "expected array of rows");
  const auto rows = static_cast<Eigen::Index>(j.size());
  const Eigen::Index cols = rows && j[0].is_array() ? static_cast<Eigen::Index>(j[0].size()) : expected_cols;
  Matrix m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (!row.is_array() || static_cast<Eigen::Index>(row.size()) != cols) fail(id, field, "ragged rows");
    for (Eigen::Index c = 0; c < cols; ++c) {
      const auto& v = row[static_cast<std::size_t>(c)];
      if (!v.is_number()) fail(id, field, "non-numeric entry");
      m(r, c) = v.get<Real>();
    }
  }
  return m;
}

Vector vector_from_json(const Json& j, const std::string& id, const std::string& field) {
  if (!j.is_array()) fail(id, field, "expected array");
  Vector v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number()) fail(id, field, "non-numeric entry");
    v(static_cast<Eigen::Index>(i)) = j[i].get<Real>();
  }
  return v;
}

Mask mask_from_json(const Json& j, const std::string& id, const std::string& field) {
  if (!j.is_array()) fail(id, field, "expected array");
  Mask m(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) {
    if (!j[i].is_number_integer()) fail(id, field, "expected 0/1 entries");
    const auto v = j[i].get<long long>();
    if (v != 0 && v != 1) fail(id, field, "expected 0/1 entries");
    m(static_cast<Eigen::Index>(i)) = static_cast<std::uint8_t>(v);
  }
  return m;
}

Json header_json(const Cohort& c) {
  Json h;
  h["format"] = "toe-cohort";
  h["version"] = kCohortFormatVersion;
  h["T"] = c.dims.T;
  h["D"] = c.dims.D;
  h["M_max"] = c.dims.M_max;
  h["E_dim"] = c.dims.E_dim;
  h["D_cxr"] = c.dims.D_cxr;
  h["D_ecg"] = c.dims.D_ecg;
  if (!c.meta.empty()) h["meta"] = c.meta;
  return h;
}

Json instance_json(const Instance& inst) {
  Json r;
  r["id"] = inst.id;
  r["split"] = to_string(inst.split);
  r["label"] = inst.label;
  r["ts"] = matrix_to_json(inst.ts);
  r["note_emb"] = matrix_to_json(inst.note_emb);
  r["presence"] = mask_to_json(inst.presence);
  r["cxr"] = vector_to_json(inst.context.cxr);
  r["has_cxr"] = inst.context.has_cxr ? 1 : 0;
  r["ecg"] = vector_to_json(inst.context.ecg);
  r["has_ecg"] = inst.context.has_ecg ? 1 : 0;
  if (inst.ground_truth) {
    r["gt_ts"] = mask_to_json(inst.ground_truth->ts);
    r["gt_note"] = mask_to_json(inst.ground_truth->note);
  }
  return r;
}

int header_int(const Json& h, const char* key) {
  if (!h.contains(key) || !h[key].is_number_integer()) {
    throw ValidationError(std::string("cohort header: missing integer field '") + key + "'");
  }
  const int v = h[key].get<int>();
  if (v < 0) throw ValidationError(std::string("cohort header: negative '") + key + "'");
  return v;
}

bool flag_from_json(const Json& r, const char* key, const std::string& id) {
  if (!r.contains(key)) fail(id, key, "missing");
  const auto& v = r[key];
  if (v.is_boolean()) return v.get<bool>();
  if (v.is_number_integer() && (v.get<int>() == 0 || v.get<int>() == 1)) return v.get<int>() == 1;
  fail(id, key, "expected 0/1");
}

Instance instance_from_json(const Json& r, const Dims& dims) {
  Instance inst;
  if (!r.is_object()) throw ValidationError("record is not a JSON object");
  if (!r.contains("id") || !r["id"].is_string()) throw ValidationError("record without string 'id'");
  inst.id = r["id"].get<std::string>();
  const auto& id = inst.id;
  auto need = [&](const char* key) -> const Json& {
    if (!r.contains(key)) fail(id, key, "missing");
    return r[key];
  };
  inst.split = r.contains("split") ? split_from_string(r["split"].get<std::string>()) : Split::train;
  if (!need("label").is_number_integer()) fail(id, "label", "must be 0 or 1");
  inst.label = r["label"].get<int>();
  inst.ts = matrix_from_json(need("ts"), id, "ts", dims.D);
  inst.note_emb = matrix_from_json(need("note_emb"), id, "note_emb", dims.E_dim);
  inst.presence = mask_from_json(need("presence"), id, "presence");
  inst.context.cxr = vector_from_json(need("cxr"), id, "cxr");
  inst.context.has_cxr = flag_from_json(r, "has_cxr", id);
  inst.context.ecg = vector_from_json(need("ecg"), id, "ecg");
  inst.context.has_ecg = flag_from_json(r, "has_ecg", id);
  const bool has_gt_ts = r.contains("gt_ts");
  const bool has_gt_note = r.contains("gt_note");
  if (has_gt_ts != has_gt_note) fail(id, has_gt_ts ? "gt_note" : "gt_ts", "ground truth needs both gt_ts and gt_note");
  if (has_gt_ts) {
    inst.ground_truth = MaskPair{mask_from_json(r["gt_ts"], id, "gt_ts"), mask_from_json(r["gt_note"], id, "gt_note")};
  }
  validate_instance(inst, dims);
  return inst;
}

}  // namespace

std::string cohort_to_string(const Cohort& cohort) {
  std::string out = header_json(cohort).dump();
  out += '\n';
  for (const auto& inst : cohort.instances) {
    out += instance_json(inst).dump();
    out += '\n';
  }
  return out;
}

Cohort cohort_from_string(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  Cohort cohort;
  bool have_header = false;
  std::set<std::string> ids;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    Json j;
    try {
      j = Json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ValidationError("cohort parse error at line " + std::to_string(line_no) + ": " + e.what());
    }
    try {
      if (!have_header) {
        if (!j.is_object() || j.value("format", "") != "toe-cohort") {
          throw ValidationError("missing cohort header");
        }
        if (header_int(j, "version") != kCohortFormatVersion) throw ValidationError("unsupported cohort version");
        cohort.dims = Dims{header_int(j, "T"), header_int(j, "D"), header_int(j, "M_max"),
                           header_int(j, "E_dim"), header_int(j, "D_cxr"), header_int(j, "D_ecg")};
        if (j.contains("meta")) cohort.meta = j["meta"];
        have_header = true;
        continue;
      }
      Instance inst = instance_from_json(j, cohort.dims);
      if (!ids.insert(inst.id).second) fail(inst.id, "id", "duplicate id");
      cohort.instances.push_back(std::move(inst));
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("line " + std::to_string(line_no) + ": " + e.what());
    }
  }
  if (!have_header) throw ValidationError("empty cohort file (no header line)");
  return cohort;
}

Cohort load_cohort(const std::filesystem::path& path) { return cohort_from_string(read_file(path)); }

void save_cohort(const Cohort& cohort, const std::filesystem::path& path) {
  write_file_atomic(path, cohort_to_string(cohort));
}

const char* to_string(Termination t) {
  return t == Termination::thresholds_met ? "thresholds_met" : "budget_exhausted";
}

Termination termination_from_string(const std::string& s) {
  if (s == "thresholds_met") return Termination::thresholds_met;
  if (s == "budget_exhausted") return Termination::budget_exhausted;
  throw ValidationError("unknown termination '" + s + "'");
}

Json trace_to_json(const Trace& t) {
  Json j;
  j["id"] = t.id;
  j["p_full"] = t.p_full;
  j["y_hat_full"] = t.y_hat_full;
  Json steps = Json::array();
  for (const auto& s : t.steps) {
    Json js;
    js["unit"] = s.unit.tag();
    js["C"] = s.C;
    js["S"] = s.S;
    js["K"] = s.K;
    js["score"] = s.score;
    js["p"] = s.p;
    steps.push_back(std::move(js));
  }
  j["steps"] = std::move(steps);
  Json units = Json::array();
  for (const auto& u : t.final_mask.units()) units.push_back(u.tag());
  j["final_units"] = std::move(units);
  j["final_ts"] = mask_to_json(t.final_mask.ts);
  j["final_note"] = mask_to_json(t.final_mask.note);
  j["termination"] = to_string(t.termination);
  j["candidates"] = t.candidate_count;
  return j;
}

Trace trace_from_json(const Json& j) {
  Trace t;
  t.id = j.at("id").get<std::string>();
  t.p_full = j.at("p_full").get<Real>();
  t.y_hat_full = j.at("y_hat_full").get<int>();
  for (const auto& js : j.at("steps")) {
    t.steps.push_back({UnitRef::parse(js.at("unit").get<std::string>()), js.at("C").get<Real>(),
                       js.at("S").get<Real>(), js.at("K").get<int>(), js.at("score").get<Real>(),
                       js.at("p").get<Real>()});
  }
  t.final_mask.ts = mask_from_json(j.at("final_ts"), t.id, "final_ts");
  t.final_mask.note = mask_from_json(j.at("final_note"), t.id, "final_note");
  t.termination = termination_from_string(j.at("termination").get<std::string>());
  t.candidate_count = j.value("candidates", 0);
  return t;
}

void write_file_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ValidationError("cannot open '" + tmp.string() + "' for writing");
    out << content;
    out.flush();
    if (!out) throw ValidationError("write failed for '" + tmp.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw ValidationError("cannot rename '" + tmp.string() + "': " + ec.message());
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace toe
