#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "genrm/lm/checkpoint.hpp"
#include "genrm/lm/sampler.hpp"
#include "genrm/prefmodel/losses.hpp"
#include "genrm/prefmodel/vote.hpp"
#include "genrm/starloop/config.hpp"
#include "genrm/synthworld/splits.hpp"

namespace genrm::star {

using pref::JudgeSample;
using pref::PreferencePair;

/// temperature 1, top-p 0.95, stop on an indicator or EOS, 16 new tokens
lm::SamplingParams judge_sampling();

/// Stream j of pair p is seeded with mix_seed(mix_seed(seed, p.pair_id), j).
std::vector<std::vector<JudgeSample>> sample_judgments(const lm::Checkpoint& checkpoint,
                                                       std::span<const PreferencePair> pairs,
                                                       std::size_t samples_per_example,
                                                       std::uint64_t seed);

/// Valid samples whose indicator equals `gold`, in order.
std::vector<JudgeSample> star_filter(std::span<const JudgeSample> samples, pref::Indicator gold);

/// Rationale from the gold rationalizer, or sampled from `checkpoint` on the
/// hinted layout. The indicator is always the pair's gold label.
JudgeSample rationalize(RationaleSource source, const lm::Checkpoint* checkpoint,
                        const PreferencePair& pair, std::uint64_t seed);

using DpoPair = std::pair<JudgeSample, JudgeSample>;  // (winning, losing)

/// Up to `max_per_example` distinct (correct, incorrect) combinations drawn
/// uniformly without replacement. Invalid samples never participate.
std::vector<DpoPair> build_dpo_pairs(std::span<const JudgeSample> samples, pref::Indicator gold,
                                     std::size_t max_per_example, std::uint64_t seed);

struct IterationLog {
  int iteration = 0;
  std::string portion;
  std::size_t pairs = 0;
  std::size_t samples_drawn = 0;
  std::size_t invalid = 0;
  std::size_t retained = 0;
  std::size_t dpo_pairs = 0;
  std::size_t rows = 0;
  bool skipped = false;
  std::string input_checkpoint;
  std::string reference_checkpoint;  // STAR-DPO only
  std::string checkpoint;
  bool reference_unchanged = true;
  std::vector<double> epoch_losses;
  std::vector<std::uint64_t> row_pair_ids;

  std::string to_json() const;
};

struct StarResult {
  lm::Checkpoint final;
  std::vector<IterationLog> logs;
};

/// Three iterations, iteration i consuming portion i only. When `run_dir`
/// is given, each iteration writes iter-i/{data,checkpoint,log}.
StarResult run_star(const TrainConfig& config, const lm::Checkpoint& base,
                    const world::SplitPlan& plan,
                    const std::optional<std::filesystem::path>& run_dir = std::nullopt);

}  // namespace genrm::star
