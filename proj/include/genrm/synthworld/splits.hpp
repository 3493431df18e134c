#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "genrm/synthworld/task.hpp"

namespace genrm::world {

struct WorldConfig {
  std::size_t train_size = 1998;
  std::size_t eval_id_size = 500;
  std::size_t eval_ood_size = 500;
  std::vector<Family> train_families{Family::kCountMax, Family::kLengthClosest,
                                     Family::kPatternPrefix};
  Family ood_family = Family::kCountMin;
  TokenRange id_tokens{22, 50};
  TokenRange ood_tokens{50, 64};
  std::size_t max_response_length = 12;
  // Count targets and pattern tokens use the first few tokens of a range.
  std::size_t parameter_tokens = 4;
  double label_noise_scale = 0.0;

  /// Throws std::invalid_argument when the held-out family is also trained
  /// on or the token ranges overlap.
  void validate() const;
};

inline constexpr std::array<std::string_view, 5> kSplitNames{"train_p1", "train_p2", "train_p3",
                                                             "eval_id", "eval_ood"};

/// Train portions, ID eval and OOD eval. The OOD split draws from the train
/// families plus the held-out family, all on the OOD token range, so no
/// (family, token range) combination is shared with training.
struct SplitPlan {
  std::uint64_t seed = 0;
  WorldConfig config;
  std::array<std::vector<PreferencePair>, 3> portions;
  std::vector<PreferencePair> eval_id;
  std::vector<PreferencePair> eval_ood;

  const std::vector<PreferencePair>& split(std::string_view name) const;
};

/// Pair g (global index across all splits, in split order) is generated from
/// its own stream seeded with mix_seed(seed, g). Content duplicates of any
/// earlier pair (y1/y2 order ignored) are regenerated.
SplitPlan build_splits(const WorldConfig& config, std::uint64_t seed);

class DatasetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

std::string to_record(const PreferencePair& pair);
/// Throws DatasetError naming `where` on malformed input.
PreferencePair parse_record(std::string_view line, const std::string& where = "<record>");

void write_dataset(const std::filesystem::path& path, std::span<const PreferencePair> pairs);
std::vector<PreferencePair> read_dataset(const std::filesystem::path& path);

/// Label/argmax agreement (skipped when labels are noisy), unique ids,
/// response length caps.
void validate_pairs(std::span<const PreferencePair> pairs, bool noisy_labels = false);

struct ManifestEntry {
  std::string name;
  std::string file;
  std::size_t records = 0;
  std::string sha256;
};

/// Writes the five split files and manifest.json into `dir`. `stamp` is a
/// JSON object copied verbatim into the manifest.
std::vector<ManifestEntry> write_splits(const SplitPlan& plan, const std::filesystem::path& dir,
                                        const std::string& stamp_json = "{}");
/// Reads a directory written by write_splits, verifying record counts and
/// digests.
SplitPlan read_splits(const std::filesystem::path& dir);

}  // namespace genrm::world
