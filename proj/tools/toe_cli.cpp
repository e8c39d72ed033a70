#include <CLI11.hpp>
#include <algorithm>
#include <iostream>
#include <map>

#include "toe/commands.hpp"

namespace {

struct Flags {
  std::string config_file;
  std::vector<std::string> sets;
  std::map<std::string, std::string> direct;
  bool force = false;
  bool spurious = false;
  bool phase2_only = false;
  bool print_config = false;
};

void path_option(CLI::App* cmd, Flags& f, const std::string& key, const std::string& help) {
  std::string flag = "--" + key;
  std::replace(flag.begin() + 2, flag.end(), '_', '-');
  cmd->add_option_function<std::string>(flag, [&f, key](const std::string& v) { f.direct[key] = v; }, help);
}

void common_options(CLI::App* cmd, Flags& f) {
  cmd->add_option("-c,--config", f.config_file, "config file of key = value lines");
  cmd->add_option("--set", f.sets, "override one config key (key=value), repeatable");
  cmd->add_flag("--print-config", f.print_config, "print the resolved config to stderr");
  cmd->add_option_function<std::string>("--seed", [&f](const std::string& v) { f.direct["seed"] = v; }, "root seed");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Tree-of-Evidence: evidence-subset search over multimodal units"};
  app.require_subcommand(1);
  Flags f;

  auto* gen = app.add_subcommand("generate", "generate a synthetic cohort");
  common_options(gen, f);
  path_option(gen, f, "out", "cohort file to write");
  gen->add_flag("--force", f.force, "overwrite an existing file");
  gen->add_flag("--spurious", f.spurious, "inject the spurious flag feature");

  auto* train = app.add_subcommand("train", "two-phase training");
  common_options(train, f);
  path_option(train, f, "cohort", "cohort file");
  path_option(train, f, "model", "existing model (with --phase2-only)");
  path_option(train, f, "out", "model file to write");
  path_option(train, f, "log", "training log CSV");
  train->add_flag("--phase2-only", f.phase2_only, "train only the selectors of --model");

  auto* eval = app.add_subcommand("evaluate", "methods x budgets x seeds suite CSV");
  common_options(eval, f);
  for (const char* k : {"cohort", "model", "out", "traces", "frontier", "seeds", "budgets", "methods"})
    path_option(eval, f, k, k);

  auto* ablate = app.add_subcommand("ablate", "search-objective, stability-space and temperature ablations");
  common_options(ablate, f);
  for (const char* k : {"cohort", "model", "out", "seeds"}) path_option(ablate, f, k, k);

  auto* audit = app.add_subcommand("audit", "exhaustion, abstention and spurious-feature audit");
  common_options(audit, f);
  for (const char* k : {"cohort", "model", "out", "traces", "clean_cohort", "clean_model"}) path_option(audit, f, k, k);

  auto* report = app.add_subcommand("report", "mean and std over seeds of a suite CSV");
  common_options(report, f);
  path_option(report, f, "in", "suite CSV");
  path_option(report, f, "out", "summary CSV (stdout when omitted)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  try {
    toe::RunConfig cfg;
    if (!f.config_file.empty()) cfg.load_file(f.config_file);
    for (const auto& s : f.sets) cfg.set_assignment(s);
    for (const auto& [k, v] : f.direct) cfg.set(k, v);
    if (f.force) cfg.set("force", "true");
    if (f.spurious) cfg.set("spurious", "true");
    if (f.phase2_only) cfg.set("phase2_only", "true");
    if (f.print_config) std::cerr << cfg.resolved_text();

    if (gen->parsed()) return toe::cmd_generate(cfg, std::cerr);
    if (train->parsed()) return toe::cmd_train(cfg, std::cerr);
    if (eval->parsed()) return toe::cmd_evaluate(cfg, std::cerr);
    if (ablate->parsed()) return toe::cmd_ablate(cfg, std::cerr);
    if (audit->parsed()) return toe::cmd_audit(cfg, std::cerr);
    if (report->parsed()) return toe::cmd_report(cfg, std::cerr);
    return 1;
  } catch (const toe::UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 1;
  } catch (const toe::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const toe::InternalError& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
