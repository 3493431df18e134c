#pragma once

#include <optional>
#include <span>
#include <stdexcept>

#include "genrm/synthworld/task.hpp"

namespace genrm::world {

enum class LayoutMode { kCotJudge, kDirectJudge, kRationalizerHint };

class LayoutError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Every judge layout starts with the shared prefix
//   BOS x SEP y1 SEP y2 SEP
// COT and DIRECT judges continue from there; the hinted rationalizer layout
// appends HINT and the gold indicator.
TokenSeq encode_layout(LayoutMode mode, std::span<const Token> x, std::span<const Token> y1,
                       std::span<const Token> y2, std::optional<Indicator> hint = std::nullopt,
                       std::size_t context_length = 128);
TokenSeq encode_layout(LayoutMode mode, const PreferencePair& pair,
                       std::optional<Indicator> hint = std::nullopt,
                       std::size_t context_length = 128);

struct LayoutPrefix {
  TokenSeq x, y1, y2;
  bool operator==(const LayoutPrefix&) const = default;
};

/// Recovers (x, y1, y2) from the shared prefix; any tail after the third SEP
/// is ignored.
LayoutPrefix decode_prefix(std::span<const Token> layout);

}  // namespace genrm::world
