#pragma once

#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "genrm/evalkit/evaluate.hpp"

namespace genrm::cli {

enum ExitCode : int { kOk = 0, kUsage = 2, kInvariant = 3, kIo = 4 };

/// Environment variable that overrides `output_root` from the config.
inline constexpr const char* kOutputRootEnv = "GENRM_OUTPUT_ROOT";

/// Pools per-seed reports: counts are summed and intervals recomputed.
eval::MetricsReport aggregate_reports(std::span<const eval::MetricsReport> reports);

/// Entry point of the `genrm` tool. argv[0] is the program name.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

}  // namespace genrm::cli
