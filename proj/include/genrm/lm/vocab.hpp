#pragma once

#include <cstdint>
#include <string>

namespace genrm {

using Token = std::int32_t;

/// Token layout shared by the model, the synthetic world and the judges.
///
/// Ids below `kContentBegin` are reserved: structural markers, the two
/// answer indicator tokens, rationale markers, family tags and digits.
/// Everything from `kContentBegin` up to `size` is free content.
struct Vocab {
  static constexpr Token kBos = 0;
  static constexpr Token kEos = 1;
  static constexpr Token kSep = 2;
  static constexpr Token kHint = 3;
  static constexpr Token kIndA = 4;
  static constexpr Token kIndB = 5;
  static constexpr Token kScore = 6;
  static constexpr Token kNeg = 7;
  static constexpr Token kFamilyBegin = 8;  // four family tags
  static constexpr Token kDigitBegin = 12;  // digits 0-9
  static constexpr Token kContentBegin = 22;
  static constexpr Token kDefaultSize = 64;

  Token size = kDefaultSize;

  static constexpr Token digit(int d) { return kDigitBegin + d; }
  static constexpr bool is_digit(Token t) {
    return t >= kDigitBegin && t < kDigitBegin + 10;
  }
  static constexpr bool is_indicator(Token t) { return t == kIndA || t == kIndB; }
  bool is_content(Token t) const { return t >= kContentBegin && t < size; }
  Token content_count() const { return size - kContentBegin; }

  std::string name(Token t) const;
};

}  // namespace genrm
