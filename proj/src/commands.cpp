#include "toe/commands.hpp"

#include <cmath>
#include <iostream>
#include <map>
#include <ostream>
#include <sstream>

namespace toe {

namespace fs = std::filesystem;

std::string config_comment_block(const RunConfig& cfg) {
  std::string out;
  std::istringstream in(cfg.resolved_text());
  std::string line;
  while (std::getline(in, line)) out += "# " + line + "\n";
  return out;
}

namespace {

fs::path require_path(const RunConfig& cfg, const std::string& key, const char* command) {
  const std::string& p = cfg.get(key);
  if (p.empty()) throw UsageError(std::string(command) + ": --" + key + " is required");
  return p;
}

fs::path existing_input(const RunConfig& cfg, const std::string& key, const char* command) {
  fs::path p = require_path(cfg, key, command);
  if (!fs::exists(p)) throw UsageError(std::string(command) + ": input not found: " + p.string());
  return p;
}

Cohort make_cohort(const RunConfig& cfg, std::uint64_t seed) {
  SynthConfig sc = cfg.synth();
  sc.seed = seed;
  Cohort c = generate_cohort(sc);
  if (cfg.get_bool("spurious")) c = inject_spurious(c, cfg.spurious(), derive_seed(seed, "spurious"));
  return c;
}

Json model_json(const ModelBundle& b, const RunConfig& cfg) {
  Json j = bundle_to_json(b);
  j["config"] = cfg.resolved_json();
  return j;
}

Split eval_split(const RunConfig& cfg) {
  try {
    return split_from_string(cfg.get("split"));
  } catch (const std::exception&) {
    throw UsageError("split must be train, val or test");
  }
}

std::vector<int> labels_of(const std::vector<const Instance*>& v) {
  std::vector<int> out;
  for (const auto* i : v) out.push_back(i->label);
  return out;
}

/// Cohort and model for one seed: loaded when paths are given, otherwise
/// generated / trained from that seed.
struct SeedSetup {
  Cohort cohort;
  ModelBundle bundle;
};

SeedSetup setup_for_seed(const RunConfig& cfg, std::uint64_t seed, std::ostream& log) {
  SeedSetup s;
  if (!cfg.get("cohort").empty()) s.cohort = load_cohort(existing_input(cfg, "cohort", "evaluate"));
  else s.cohort = make_cohort(cfg, seed);
  if (!cfg.get("model").empty()) {
    s.bundle = load_bundle(existing_input(cfg, "model", "evaluate"));
  } else {
    TrainConfig tc = cfg.train();
    tc.seed = seed;
    log << "training model for seed " << seed << "\n";
    s.bundle = train_full(s.cohort, tc).bundle;
  }
  if (!(s.bundle.dims == s.cohort.dims)) throw ValidationError("model dims do not match cohort dims");
  return s;
}

std::string trace_lines(const std::vector<Trace>& traces) {
  std::string out;
  for (const auto& t : traces) out += trace_to_json(t).dump() + "\n";
  return out;
}

std::vector<MaskPair> baseline_masks(const std::string& method, const ModelBundle& b,
                                     const std::vector<const Instance*>& insts, int k, std::uint64_t seed,
                                     RankingPool pool) {
  std::vector<MaskPair> masks;
  for (const auto* inst : insts) {
    if (method == "topk") {
      masks.push_back(topk_ranking_mask(b, *inst, k, pool));
    } else if (method == "saliency") {
      masks.push_back(saliency_mask(b, *inst, k));
    } else if (method == "random") {
      const int kk = std::min(k, inst->valid_units());
      masks.push_back(random_mask(*inst, kk, derive_seed(seed, "random/" + inst->id + "/" + std::to_string(k))));
    } else {
      throw UsageError("unknown method '" + method + "' (expected toe, topk, random or saliency)");
    }
  }
  return masks;
}

void append_frontier(std::string& out, const MetricsReport& r) {
  const std::pair<const char*, Real> metrics[] = {
      {"auroc", r.auroc},         {"auprc", r.auprc},
      {"fidelity_mae", r.fidelity_mae}, {"ece", r.ece},
      {"comprehensiveness", r.comprehensiveness}, {"mean_evidence", r.mean_evidence_size},
  };
  for (const auto& [name, v] : metrics)
    out += r.method + "," + std::to_string(r.k) + "," + std::to_string(r.seed) + "," + name + "," + format_real(v) + "\n";
}

}  // namespace

int cmd_generate(const RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_path(cfg, "out", "generate");
  if (fs::exists(out) && !cfg.get_bool("force"))
    throw UsageError("generate: " + out.string() + " exists (use --force to overwrite)");
  Cohort cohort = make_cohort(cfg, cfg.get_uint("seed"));
  cohort.meta["config"] = cfg.resolved_json();
  save_cohort(cohort, out);

  Json summary;
  summary["records"] = cohort.instances.size();
  Json per_split = Json::object();
  long planted_ts = 0, planted_note = 0;
  for (Split s : {Split::train, Split::val, Split::test}) {
    const auto insts = cohort.split(s);
    long pos = 0;
    for (const auto* i : insts) pos += i->label;
    per_split[to_string(s)] = {{"n", insts.size()}, {"positives", pos}};
  }
  for (const auto& i : cohort.instances) {
    if (!i.ground_truth) continue;
    planted_ts += i.ground_truth->ts.cast<long>().sum();
    planted_note += i.ground_truth->note.cast<long>().sum();
  }
  summary["splits"] = per_split;
  summary["planted_ts_units"] = planted_ts;
  summary["planted_note_units"] = planted_note;
  if (cohort.meta.contains("spurious")) summary["spurious"] = cohort.meta["spurious"];
  summary["config"] = cfg.resolved_json();
  write_file_atomic(out.string() + ".summary.json", summary.dump(2) + "\n");
  log << "wrote " << cohort.instances.size() << " records to " << out.string() << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, std::ostream& log) {
  const Cohort cohort = load_cohort(existing_input(cfg, "cohort", "train"));
  const fs::path out = require_path(cfg, "out", "train");
  const TrainConfig tc = cfg.train();
  TrainResult r;
  if (cfg.get_bool("phase2_only")) {
    const ModelBundle base = load_bundle(existing_input(cfg, "model", "train"));
    r = train_phase2(cohort, base, tc);
    TOE_ASSERT(r.bundle.ts_stream.predictor_equals(base.ts_stream) &&
                   r.bundle.note_stream.predictor_equals(base.note_stream),
               "phase 2 changed predictor parameters");
  } else {
    r = train_full(cohort, tc);
  }
  write_file_atomic(out, model_json(r.bundle, cfg).dump() + "\n");
  const fs::path log_path = cfg.get("log").empty() ? fs::path(out.string() + ".log.csv") : fs::path(cfg.get("log"));
  write_file_atomic(log_path, config_comment_block(cfg) + train_log_csv(r.log));
  log << "wrote model " << out.string() << " and log " << log_path.string() << "\n";
  return 0;
}

int cmd_evaluate(const RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_path(cfg, "out", "evaluate");
  const Split split = eval_split(cfg);
  const auto methods = cfg.get_text_list("methods");
  const auto budgets = cfg.get_int_list("budgets");
  const auto seeds = cfg.get_uint_list("seeds");
  if (budgets.empty() || seeds.empty() || methods.empty()) throw UsageError("evaluate: budgets, seeds and methods must be non-empty");
  for (int k : budgets)
    if (k < 1) throw UsageError("evaluate: budgets must be >= 1");
  const SearchConfig sc = cfg.search();
  const RankingPool pool = ranking_pool_from_string(cfg.get("ranking_pool"));

  std::string csv = config_comment_block(cfg) + kSuiteCsvHeader + "\n";
  std::string frontier = config_comment_block(cfg) + "method,k,seed,metric,value\n";
  for (std::uint64_t seed : seeds) {
    const SeedSetup s = setup_for_seed(cfg, seed, log);
    const auto insts = s.cohort.split(split);
    if (insts.empty()) throw ValidationError("evaluate: split has no instances");
    for (const auto& method : methods) {
      if (method == "toe") {
        const auto suite = run_search_suite(s.bundle, insts, sc, budgets, seed, "toe");
        for (const auto& sb : suite) {
          csv += to_csv_row(sb.report) + "\n";
          append_frontier(frontier, sb.report);
          if (!cfg.get("traces").empty()) {
            fs::create_directories(cfg.get("traces"));
            write_file_atomic(fs::path(cfg.get("traces")) /
                                  ("toe_seed" + std::to_string(seed) + "_k" + std::to_string(sb.k) + ".jsonl"),
                              trace_lines(sb.traces));
          }
        }
        continue;
      }
      for (int k : budgets) {
        const auto masks = baseline_masks(method, s.bundle, insts, k, seed, pool);
        const auto r = summarize(method, k, seed, s.bundle, insts, masks, std::nan(""));
        csv += to_csv_row(r) + "\n";
        append_frontier(frontier, r);
      }
    }
    log << "seed " << seed << " done\n";
  }
  write_file_atomic(out, csv);
  if (!cfg.get("frontier").empty()) write_file_atomic(cfg.get("frontier"), frontier);
  log << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  const fs::path out = require_path(cfg, "out", "ablate");
  const Split split = eval_split(cfg);
  const int k = static_cast<int>(cfg.get_int("ablate_k"));
  if (k < 1) throw UsageError("ablate: ablate_k must be >= 1");
  const SearchConfig base = cfg.search();

  std::string csv = config_comment_block(cfg) + kAblationCsvHeader + "\n";
  auto row = [&](const std::string& name, std::uint64_t seed, const MetricsReport& r, Real identical) {
    csv += name + "," + std::to_string(seed) + "," + std::to_string(r.k);
    for (Real v : {r.auroc, r.auprc, r.fidelity_mae, r.ece, r.comprehensiveness, r.mean_evidence_size,
                   r.exhaustion_rate})
      csv += "," + format_real(v);
    csv += "," + std::to_string(r.n) + "," + format_real(identical) + "\n";
  };

  for (std::uint64_t seed : cfg.get_uint_list("seeds")) {
    const SeedSetup s = setup_for_seed(cfg, seed, log);
    const auto insts = s.cohort.split(split);
    if (insts.empty()) throw ValidationError("ablate: split has no instances");

    auto run = [&](const SearchConfig& sc) { return run_search_suite(s.bundle, insts, sc, {k}, seed).front(); };
    const auto full = run(base);
    auto identical = [&](const std::vector<Trace>& t) {
      int same = 0;
      for (std::size_t i = 0; i < t.size(); ++i) same += t[i].final_mask == full.traces[i].final_mask;
      return static_cast<Real>(same) / static_cast<Real>(t.size());
    };
    row("full", seed, full.report, 1.0);
    SearchConfig c = base;
    c.lambda = 0;
    const auto no_stab = run(c);
    row("no_stability", seed, no_stab.report, identical(no_stab.traces));
    c = base;
    c.mu = 0;
    const auto no_sparse = run(c);
    row("no_sparsity", seed, no_sparse.report, identical(no_sparse.traces));
    c = base;
    c.stability_space = base.stability_space == StabilitySpace::probability ? StabilitySpace::logit
                                                                            : StabilitySpace::probability;
    const auto other_space = run(c);
    row(std::string(to_string(c.stability_space)) + "_space", seed, other_space.report, identical(other_space.traces));
    const auto topk = baseline_masks("topk", s.bundle, insts, k, seed, ranking_pool_from_string(cfg.get("ranking_pool")));
    row("topk_ranking", seed, summarize("topk", k, seed, s.bundle, insts, topk, std::nan("")), std::nan(""));

    // Temperature sweep: Phase II retrained per temperature on the same Phase-I predictors.
    const auto temps = cfg.get_real_list("temperatures");
    if (!temps.empty()) {
      TrainConfig tc = cfg.train();
      tc.seed = seed;
      const TrainResult p1 = train_phase1(s.cohort, tc);
      for (Real tau : temps) {
        tc.ste_temperature = tau;
        const ModelBundle m = train_phase2(s.cohort, p1.bundle, tc).bundle;
        std::vector<MaskPair> masks;
        for (const auto* inst : insts) {
          MaskPair mp;
          mp.ts = selector_topk(m, *inst, Modality::ts, tc.k_train);
          mp.note = selector_topk(m, *inst, Modality::note, tc.k_train);
          masks.push_back(std::move(mp));
        }
        row("ste_tau=" + format_real(tau), seed, summarize("selector", tc.k_train, seed, m, insts, masks, std::nan("")),
            std::nan(""));
      }
    }
    log << "seed " << seed << " done\n";
  }
  write_file_atomic(out, csv);
  log << "wrote " << out.string() << "\n";
  return 0;
}

namespace {

Json histogram_json(const std::vector<int>& h) { return Json(h); }

std::vector<Trace> load_traces(const fs::path& path) {
  std::vector<Trace> out;
  std::istringstream in(read_file(path));
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      out.push_back(trace_from_json(Json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("trace file line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

Json real_or_text(Real v) {
  if (std::isnan(v)) return "undefined";
  if (std::isinf(v)) return "inf";
  return v;
}

}  // namespace

int cmd_audit(const RunConfig& cfg, std::ostream& log) {
  const Cohort cohort = load_cohort(existing_input(cfg, "cohort", "audit"));
  const ModelBundle bundle = load_bundle(existing_input(cfg, "model", "audit"));
  const fs::path out = require_path(cfg, "out", "audit");
  const SearchConfig sc = cfg.search();
  const auto insts = cohort.split(eval_split(cfg));
  if (insts.empty()) throw ValidationError("audit: split has no instances");

  std::vector<Trace> traces;
  if (!cfg.get("traces").empty()) {
    traces = load_traces(existing_input(cfg, "traces", "audit"));
    if (traces.size() != insts.size()) throw ValidationError("audit: trace count does not match the split");
    for (std::size_t i = 0; i < traces.size(); ++i)
      if (traces[i].id != insts[i]->id) throw ValidationError("audit: trace order does not match instance '" + insts[i]->id + "'");
  } else {
    for (const auto* inst : insts) traces.push_back(beam_search(bundle, *inst, sc));
  }
  const auto labels = labels_of(insts);

  Json report;
  report["config"] = cfg.resolved_json();
  report["n"] = traces.size();
  try {
    const auto ex = exhaustion_stats(traces, labels);
    report["exhaustion"] = {{"tp_rate", ex.tp_rate}, {"fp_rate", ex.fp_rate}, {"ratio", real_or_text(ex.ratio)},
                            {"n_tp", ex.n_tp},       {"n_fp", ex.n_fp}};
  } catch (const ValidationError& e) {
    report["exhaustion"] = {{"error", e.what()}};
  }
  const auto ab = selective_abstention(traces, labels);
  report["abstention"] = {{"fp_caught", ab.fp_caught},
                          {"tp_lost", ab.tp_lost},
                          {"n_abstain", std::count(ab.abstain.begin(), ab.abstain.end(), true)}};
  const auto h = evidence_histograms(traces, labels, sc.step_limit());
  report["evidence_histograms"] = {{"thresholds_met", histogram_json(h.thresholds_met)},
                                   {"budget_exhausted", histogram_json(h.budget_exhausted)},
                                   {"correct", histogram_json(h.correct)},
                                   {"incorrect", histogram_json(h.incorrect)}};
  report["exhaustion_rate"] = exhaustion_rate(traces);

  if (!cfg.get("clean_model").empty() || !cfg.get("clean_cohort").empty()) {
    const Cohort clean = load_cohort(existing_input(cfg, "clean_cohort", "audit"));
    const ModelBundle clean_model = load_bundle(existing_input(cfg, "clean_model", "audit"));
    report["spurious"] = spurious_experiment(clean_model, clean, bundle, cohort, sc).to_json();
  }
  write_file_atomic(out, report.dump(2) + "\n");
  log << "wrote " << out.string() << "\n";
  return 0;
}

int cmd_report(const RunConfig& cfg, std::ostream&) {
  const fs::path in = existing_input(cfg, "in", "report");
  std::istringstream src(read_file(in));
  std::string line;
  bool header_seen = false;
  const std::vector<std::string> metric_names = {"auroc", "auprc", "fidelity_mae", "ece", "comprehensiveness",
                                                 "mean_evidence", "exhaustion_rate"};
  std::vector<std::pair<std::string, int>> order;
  std::map<std::pair<std::string, int>, std::vector<std::vector<Real>>> groups;
  int lineno = 0;
  while (std::getline(src, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kSuiteCsvHeader) throw ValidationError("report: input is not a suite CSV (unexpected header)");
      header_seen = true;
      continue;
    }
    std::vector<std::string> f;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) f.push_back(cell);
    if (f.size() != 11) throw ValidationError("report: line " + std::to_string(lineno) + ": expected 11 columns");
    std::pair<std::string, int> key;
    std::vector<Real> vals;
    try {
      key = {f[0], std::stoi(f[1])};
      for (std::size_t i = 2; i < 9; ++i) vals.push_back(std::stod(f[i]));
    } catch (const std::exception&) {
      throw ValidationError("report: line " + std::to_string(lineno) + ": malformed number");
    }
    if (!groups.count(key)) order.push_back(key);
    groups[key].push_back(std::move(vals));
  }
  if (!header_seen) throw ValidationError("report: empty input");

  std::string csv = config_comment_block(cfg) + "method,k,n_seeds";
  for (const auto& m : metric_names) csv += "," + m + "_mean," + m + "_std";
  csv += "\n";
  for (const auto& key : order) {
    const auto& rows = groups[key];
    csv += key.first + "," + std::to_string(key.second) + "," + std::to_string(rows.size());
    for (std::size_t m = 0; m < metric_names.size(); ++m) {
      Real mean = 0;
      for (const auto& r : rows) mean += r[m];
      mean /= static_cast<Real>(rows.size());
      Real var = 0;
      for (const auto& r : rows) var += (r[m] - mean) * (r[m] - mean);
      const Real sd = rows.size() > 1 ? std::sqrt(var / static_cast<Real>(rows.size() - 1)) : 0.0;
      csv += "," + format_real(mean) + "," + format_real(sd);
    }
    csv += "\n";
  }
  if (cfg.get("out").empty()) {
    std::cout << csv;
  } else {
    write_file_atomic(cfg.get("out"), csv);
  }
  return 0;
}

}  // namespace toe
