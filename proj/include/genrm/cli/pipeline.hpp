#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "genrm/cli/config.hpp"
#include "genrm/evalkit/evaluate.hpp"
#include "genrm/lm/checkpoint.hpp"

namespace genrm::cli {

inline constexpr std::string_view kZeroShotLabel = "LLM-JUDGE-ZERO-SHOT";

/// Report label of an evaluation split.
std::string split_label(std::string_view split);

/// JSON object with the config digest, seed and version.
std::string stamp_json(const RunConfig& config, std::uint64_t seed);

/// Evaluates one judge checkpoint on the given splits, with flip rates.
eval::MetricsReport evaluate_checkpoint(const RunConfig& config, const std::string& label,
                                        const lm::Checkpoint& checkpoint, bool chain_of_thought,
                                        const world::SplitPlan& plan,
                                        const std::vector<std::string>& splits, std::uint64_t seed);

void merge_into(eval::MetricsReport& into, const eval::MetricsReport& from);

struct ReplicateResult {
  eval::MetricsReport report;
  std::map<std::string, std::string> checkpoint_digests;  // method label -> digest
};

/// Every method on every evaluation split from one seed: data under
/// out/data, checkpoints under out/checkpoints, STaR run directories under
/// out/star, the report under out/report.
ReplicateResult replicate(const RunConfig& config, std::uint64_t seed,
                          const std::filesystem::path& out, std::ostream* progress = nullptr);

}  // namespace genrm::cli
