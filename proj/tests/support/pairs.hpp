#pragma once

#include <array>
#include <random>
#include <vector>

#include "genrm/synthworld/task.hpp"

namespace genrm::testing {

// Short generated pairs over a narrow content range, for models with a
// small vocabulary and context.
inline std::vector<world::PreferencePair> random_pairs(std::size_t n, std::uint64_t seed,
                                                       std::size_t max_len = 4,
                                                       world::TokenRange tokens = {22, 32}) {
  using world::Family;
  static constexpr std::array<Family, 3> kFamilies{Family::kCountMax, Family::kLengthClosest,
                                                   Family::kPatternPrefix};
  world::GenerationOptions opts;
  opts.tokens = tokens;
  opts.max_response_length = max_len;
  opts.parameter_tokens = 4;
  std::mt19937_64 rng(seed);
  std::vector<world::PreferencePair> out;
  for (std::size_t i = 0; i < n; ++i) {
    const auto task = world::sample_task(kFamilies[i % 3], opts, rng);
    auto p = world::gen_preference_pair(task, opts, rng);
    p.pair_id = seed * 1000 + i;
    p.split = "train_p1";
    p.x = world::encode_prompt(task);
    p.rationale = world::gold_rationale(task, p.y1, p.y2);
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace genrm::testing
