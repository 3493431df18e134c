#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>

#include "genrm/synthworld/task.hpp"

namespace genrm::pref {

using world::Indicator;
using world::TokenSeq;

/// One sampled judgment. `indicator` is empty for an unparseable
/// completion.
struct JudgeSample {
  TokenSeq rationale;
  std::optional<Indicator> indicator;
  double logprob = 0.0;
  std::string checkpoint_id;
  /// p(A) renormalized over {A, B} at the step that emitted the indicator.
  double likelihood_a = 0.5;

  bool valid() const { return indicator.has_value(); }
};

/// Drops one trailing EOS; a valid completion then ends in an indicator
/// token and everything before it is the rationale.
JudgeSample parse_judgment(std::span<const Token> completion, double logprob,
                           std::string checkpoint_id = {});

enum class VoteProbability { kVoteRatio, kLikelihood };

struct Verdict {
  Indicator chosen = Indicator::kA;
  std::size_t votes_a = 0;
  std::size_t votes_b = 0;
  std::size_t invalid = 0;  // votes_a + votes_b + invalid == K
  bool tie_broken = false;
  double p_a = 0.5;
};

/// Majority over the first K samples. Invalid samples do not vote. Equal
/// counts go to the indicator whose samples have the larger summed
/// log-probability, then to A. p_a is votes(A) / K, or the mean of
/// likelihood_a over valid samples in kLikelihood mode (0.5 without any).
Verdict majority_vote(std::span<const JudgeSample> samples, std::size_t k,
                      VoteProbability mode = VoteProbability::kVoteRatio);

}  // namespace genrm::pref
