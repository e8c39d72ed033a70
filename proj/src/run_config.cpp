#include "toe/run_config.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

namespace toe {

namespace {

const std::vector<KeySpec> kKeys = {
    {"seed", KeyType::uinteger, "0", "root seed for generation and training"},
    {"seeds", KeyType::uint_list, "0,1,2", "seeds for evaluate/ablate runs"},
    {"split", KeyType::text, "test", "cohort split to evaluate"},
    {"cohort", KeyType::text, "", "cohort file"},
    {"model", KeyType::text, "", "model file"},
    {"out", KeyType::text, "", "output file"},
    {"in", KeyType::text, "", "input CSV for report"},
    {"log", KeyType::text, "", "training log CSV"},
    {"traces", KeyType::text, "", "trace directory (evaluate) or trace file (audit)"},
    {"frontier", KeyType::text, "", "tidy frontier CSV"},
    {"clean_cohort", KeyType::text, "", "clean cohort for the spurious comparison"},
    {"clean_model", KeyType::text, "", "clean model for the spurious comparison"},
    {"force", KeyType::boolean, "false", "overwrite existing outputs"},
    {"phase2_only", KeyType::boolean, "false", "train selectors of an existing model"},

    {"n_train", KeyType::integer, "2000", ""},
    {"n_val", KeyType::integer, "400", ""},
    {"n_test", KeyType::integer, "400", ""},
    {"T", KeyType::integer, "24", "hours"},
    {"D", KeyType::integer, "8", "features per hour"},
    {"M_max", KeyType::integer, "20", "note chunk slots"},
    {"E_dim", KeyType::integer, "16", "note embedding width"},
    {"D_cxr", KeyType::integer, "4", ""},
    {"D_ecg", KeyType::integer, "4", ""},
    {"prevalence", KeyType::real, "0.12", ""},
    {"planted_ts", KeyType::integer, "3", ""},
    {"planted_note", KeyType::integer, "2", ""},
    {"signal_strength", KeyType::real, "2.5", ""},
    {"noise_sd", KeyType::real, "1.0", ""},
    {"notes_only_fraction", KeyType::real, "0.3", ""},
    {"context_coefficient", KeyType::real, "0.2", ""},
    {"context_present_prob", KeyType::real, "0.8", ""},
    {"label_noise", KeyType::real, "0.0", ""},
    {"spurious", KeyType::boolean, "false", "inject the spurious flag feature"},
    {"spurious_train_correlation", KeyType::real, "0.8", ""},
    {"spurious_test_correlation", KeyType::real, "0.0", ""},
    {"spurious_feature", KeyType::integer, "-1", "-1 selects the last feature"},

    {"epochs_phase1", KeyType::integer, "30", ""},
    {"epochs_phase2", KeyType::integer, "15", ""},
    {"lr", KeyType::real, "0.05", ""},
    {"batch_size", KeyType::integer, "32", ""},
    {"k_train", KeyType::integer, "5", ""},
    {"ste_temperature", KeyType::real, "1.0", ""},
    {"selector_hidden", KeyType::integer, "16", ""},
    {"unit_hidden", KeyType::integer, "16", ""},
    {"ctx_width", KeyType::integer, "4", ""},
    {"classifier_hidden", KeyType::integer, "16", ""},

    {"beam_width", KeyType::integer, "8", ""},
    {"max_steps", KeyType::integer, "10", ""},
    {"n_ts_candidates", KeyType::integer, "24", ""},
    {"n_note_candidates", KeyType::integer, "20", ""},
    {"lambda", KeyType::real, "1.0", ""},
    {"mu", KeyType::real, "0.05", ""},
    {"tau_conf", KeyType::real, "0.9", ""},
    {"tau_suff", KeyType::real, "0.9", ""},
    {"stability_space", KeyType::text, "probability", "probability | logit"},

    {"budgets", KeyType::int_list, "1,3,5,10", "evidence budgets k"},
    {"methods", KeyType::text_list, "toe,topk,random,saliency", ""},
    {"ranking_pool", KeyType::text, "global", "global | znorm | per_modality"},
    {"ablate_k", KeyType::integer, "5", "budget for ablation rows"},
    {"temperatures", KeyType::real_list, "0.1,1.0,5.0", "STE temperatures for the ablation sweep"},
};

const KeySpec* find_key(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.name) return &k;
  return nullptr;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <class T>
bool parse_number(const std::string& s, T& out) {
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto [ptr, ec] = std::from_chars(first, last, out);
  return ec == std::errc() && ptr == last;
}

bool parse_real(const std::string& s, Real& out) {
  if (s.empty()) return false;
  try {
    std::size_t pos = 0;
    out = std::stod(s, &pos);
    return pos == s.size();
  } catch (const std::exception&) {
    return false;
  }
}

bool parse_bool(const std::string& s, bool& out) {
  if (s == "true" || s == "1" || s == "yes") return out = true, true;
  if (s == "false" || s == "0" || s == "no") return out = false, true;
  return false;
}

bool valid_value(KeyType type, const std::string& v) {
  long i;
  std::uint64_t u;
  Real r;
  bool b;
  switch (type) {
    case KeyType::integer: return parse_number(v, i);
    case KeyType::uinteger: return parse_number(v, u);
    case KeyType::real: return parse_real(v, r);
    case KeyType::boolean: return parse_bool(v, b);
    case KeyType::text: return true;
    case KeyType::int_list:
      for (const auto& x : split_list(v))
        if (!parse_number(x, i)) return false;
      return true;
    case KeyType::uint_list:
      for (const auto& x : split_list(v))
        if (!parse_number(x, u)) return false;
      return true;
    case KeyType::real_list:
      for (const auto& x : split_list(v))
        if (!parse_real(x, r)) return false;
      return true;
    case KeyType::text_list: return true;
  }
  return false;
}

const char* type_name(KeyType t) {
  switch (t) {
    case KeyType::integer: return "an integer";
    case KeyType::uinteger: return "a non-negative integer";
    case KeyType::real: return "a real number";
    case KeyType::boolean: return "true or false";
    case KeyType::text: return "text";
    case KeyType::int_list: return "a comma-separated list of integers";
    case KeyType::uint_list: return "a comma-separated list of non-negative integers";
    case KeyType::real_list: return "a comma-separated list of reals";
    case KeyType::text_list: return "a comma-separated list";
  }
  return "";
}

}  // namespace

RunConfig::RunConfig() {
  for (const auto& k : kKeys) values_[k.name] = k.default_value;
}

const std::vector<KeySpec>& RunConfig::keys() { return kKeys; }

void RunConfig::set(const std::string& key, const std::string& value) {
  const KeySpec* spec = find_key(key);
  if (!spec) throw UsageError("unknown config key '" + key + "'");
  const std::string v = trim(value);
  if (!valid_value(spec->type, v)) throw UsageError("config key '" + key + "' expects " + type_name(spec->type) + ", got '" + v + "'");
  values_[key] = v;
}

void RunConfig::set_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw UsageError("expected key=value, got '" + assignment + "'");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

void RunConfig::load_text(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    if (trim(line).empty()) continue;
    try {
      set_assignment(line);
    } catch (const UsageError& e) {
      throw UsageError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
}

void RunConfig::load_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw UsageError("config file not found: " + path.string());
  load_text(read_file(path));
}

const std::string& RunConfig::get(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw InternalError("unregistered config key '" + key + "'");
  return it->second;
}

long RunConfig::get_int(const std::string& key) const {
  long v = 0;
  parse_number(get(key), v);
  return v;
}

std::uint64_t RunConfig::get_uint(const std::string& key) const {
  std::uint64_t v = 0;
  parse_number(get(key), v);
  return v;
}

Real RunConfig::get_real(const std::string& key) const {
  Real v = 0;
  parse_real(get(key), v);
  return v;
}

bool RunConfig::get_bool(const std::string& key) const {
  bool v = false;
  parse_bool(get(key), v);
  return v;
}

std::vector<int> RunConfig::get_int_list(const std::string& key) const {
  std::vector<int> out;
  for (const auto& x : split_list(get(key))) {
    int v = 0;
    parse_number(x, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::uint64_t> RunConfig::get_uint_list(const std::string& key) const {
  std::vector<std::uint64_t> out;
  for (const auto& x : split_list(get(key))) {
    std::uint64_t v = 0;
    parse_number(x, v);
    out.push_back(v);
  }
  return out;
}

std::vector<Real> RunConfig::get_real_list(const std::string& key) const {
  std::vector<Real> out;
  for (const auto& x : split_list(get(key))) {
    Real v = 0;
    parse_real(x, v);
    out.push_back(v);
  }
  return out;
}

std::vector<std::string> RunConfig::get_text_list(const std::string& key) const { return split_list(get(key)); }

SynthConfig RunConfig::synth() const {
  SynthConfig c;
  c.n_train = static_cast<int>(get_int("n_train"));
  c.n_val = static_cast<int>(get_int("n_val"));
  c.n_test = static_cast<int>(get_int("n_test"));
  c.dims = Dims{static_cast<int>(get_int("T")),     static_cast<int>(get_int("D")),
                static_cast<int>(get_int("M_max")), static_cast<int>(get_int("E_dim")),
                static_cast<int>(get_int("D_cxr")), static_cast<int>(get_int("D_ecg"))};
  c.prevalence = get_real("prevalence");
  c.planted_ts = static_cast<int>(get_int("planted_ts"));
  c.planted_note = static_cast<int>(get_int("planted_note"));
  c.signal_strength = get_real("signal_strength");
  c.noise_sd = get_real("noise_sd");
  c.notes_only_fraction = get_real("notes_only_fraction");
  c.context_coefficient = get_real("context_coefficient");
  c.context_present_prob = get_real("context_present_prob");
  c.label_noise = get_real("label_noise");
  c.seed = get_uint("seed");
  c.validate();
  return c;
}

SpuriousConfig RunConfig::spurious() const {
  SpuriousConfig c;
  c.train_correlation = get_real("spurious_train_correlation");
  c.test_correlation = get_real("spurious_test_correlation");
  c.feature_index = static_cast<int>(get_int("spurious_feature"));
  return c;
}

TrainConfig RunConfig::train() const {
  TrainConfig c;
  c.epochs_phase1 = static_cast<int>(get_int("epochs_phase1"));
  c.epochs_phase2 = static_cast<int>(get_int("epochs_phase2"));
  c.lr = get_real("lr");
  c.batch_size = static_cast<int>(get_int("batch_size"));
  c.k_train = static_cast<int>(get_int("k_train"));
  c.ste_temperature = get_real("ste_temperature");
  c.seed = get_uint("seed");
  c.shape = ModelShape{static_cast<int>(get_int("selector_hidden")), static_cast<int>(get_int("unit_hidden")),
                       static_cast<int>(get_int("ctx_width")), static_cast<int>(get_int("classifier_hidden"))};
  return c;
}

SearchConfig RunConfig::search() const {
  SearchConfig c;
  c.beam_width = static_cast<int>(get_int("beam_width"));
  c.max_steps = static_cast<int>(get_int("max_steps"));
  c.n_ts_candidates = static_cast<int>(get_int("n_ts_candidates"));
  c.n_note_candidates = static_cast<int>(get_int("n_note_candidates"));
  c.lambda = get_real("lambda");
  c.mu = get_real("mu");
  c.tau_conf = get_real("tau_conf");
  c.tau_suff = get_real("tau_suff");
  c.stability_space = stability_space_from_string(get("stability_space"));
  c.validate();
  return c;
}

std::string RunConfig::resolved_text() const {
  std::string out;
  for (const auto& k : kKeys) out += std::string(k.name) + " = " + get(k.name) + "\n";
  return out;
}

Json RunConfig::resolved_json() const {
  Json j = Json::object();
  for (const auto& k : kKeys) j[k.name] = get(k.name);
  return j;
}

}  // namespace toe
