#include "genrm/synthworld/layout.hpp"

#include <string>

namespace genrm::world {

TokenSeq encode_layout(LayoutMode mode, std::span<const Token> x, std::span<const Token> y1,
                       std::span<const Token> y2, std::optional<Indicator> hint,
                       std::size_t context_length) {
  if (mode == LayoutMode::kRationalizerHint && !hint) {
    throw LayoutError("rationalizer layout needs a hint indicator");
  }
  TokenSeq out;
  out.reserve(x.size() + y1.size() + y2.size() + 6);
  out.push_back(Vocab::kBos);
  out.insert(out.end(), x.begin(), x.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), y1.begin(), y1.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), y2.begin(), y2.end());
  out.push_back(Vocab::kSep);
  if (mode == LayoutMode::kRationalizerHint) {
    out.push_back(Vocab::kHint);
    out.push_back(indicator_token(*hint));
  }
  if (out.size() > context_length) {
    throw LayoutError("layout of " + std::to_string(out.size()) + " tokens exceeds context " +
                      std::to_string(context_length));
  }
  return out;
}

TokenSeq encode_layout(LayoutMode mode, const PreferencePair& pair, std::optional<Indicator> hint,
                       std::size_t context_length) {
  return encode_layout(mode, pair.x, pair.y1, pair.y2, hint, context_length);
}

LayoutPrefix decode_prefix(std::span<const Token> layout) {
  if (layout.empty() || layout[0] != Vocab::kBos) throw LayoutError("layout must start with BOS");
  LayoutPrefix out;
  TokenSeq* fields[3] = {&out.x, &out.y1, &out.y2};
  std::size_t field = 0;
  for (std::size_t i = 1; i < layout.size(); ++i) {
    if (layout[i] == Vocab::kSep) {
      if (++field == 3) return out;
      continue;
    }
    fields[field]->push_back(layout[i]);
  }
  throw LayoutError("layout prefix is missing a separator");
}

}  // namespace genrm::world
