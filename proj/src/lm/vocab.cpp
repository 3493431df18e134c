#include "genrm/lm/vocab.hpp"

namespace genrm {

std::string Vocab::name(Token t) const {
  switch (t) {
    case kBos: return "<bos>";
    case kEos: return "<eos>";
    case kSep: return "<sep>";
    case kHint: return "<hint>";
    case kIndA: return "A";
    case kIndB: return "B";
    case kScore: return "<score>";
    case kNeg: return "-";
    default: break;
  }
  if (t >= kFamilyBegin && t < kDigitBegin) return "<fam" + std::to_string(t - kFamilyBegin) + ">";
  if (is_digit(t)) return std::to_string(t - kDigitBegin);
  if (is_content(t)) return "c" + std::to_string(t - kContentBegin);
  return "<unk" + std::to_string(t) + ">";
}

}  // namespace genrm
