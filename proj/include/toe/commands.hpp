#pragma once

// Command implementations behind the `toe` executable. Each takes the fully
// resolved configuration and returns a process exit code; errors are thrown
// as UsageError / ValidationError / InternalError.

#include <iosfwd>

#include "toe/run_config.hpp"

namespace toe {

int cmd_generate(const RunConfig& cfg, std::ostream& log);
int cmd_train(const RunConfig& cfg, std::ostream& log);
int cmd_evaluate(const RunConfig& cfg, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, std::ostream& log);
int cmd_audit(const RunConfig& cfg, std::ostream& log);
int cmd_report(const RunConfig& cfg, std::ostream& log);

/// Resolved config as "# key = value" lines, prepended to CSV outputs.
std::string config_comment_block(const RunConfig& cfg);

inline constexpr const char* kAblationCsvHeader =
    "config,seed,k,auroc,auprc,fidelity_mae,ece,comprehensiveness,mean_evidence,exhaustion_rate,n,identical_masks";

}  // namespace toe
