#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>

#include "genrm/lm/model.hpp"
#include "genrm/prefmodel/vote.hpp"
#include "genrm/starloop/config.hpp"
#include "genrm/synthworld/splits.hpp"

namespace genrm::cli {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Starting point of the iterative STaR methods.
enum class StarBase { kInit, kGenRm };

struct RunConfig {
  world::WorldConfig world;
  lm::ModelConfig model;
  star::TrainConfig train;
  int baseline_epochs = 5;
  StarBase star_base = StarBase::kInit;
  std::size_t k_max = 32;
  bool debias = false;
  pref::VoteProbability vote_probability = pref::VoteProbability::kVoteRatio;
  std::uint64_t seed = 1;
  std::filesystem::path output_root = "runs";

  /// One `key = value` line per setting, keys sorted.
  std::string normalized() const;
  /// SHA-256 of normalized().
  std::string digest() const;
};

/// Strict `key = value` parser; `#` starts a comment. Unknown keys,
/// duplicates and malformed values are errors that name line numbers.
RunConfig parse_config_text(std::string_view text, const std::string& source = "<config>");
RunConfig parse_config(const std::filesystem::path& path);

inline constexpr std::string_view kVersion = "genrm 0.1.0";

}  // namespace genrm::cli
