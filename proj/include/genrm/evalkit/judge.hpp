#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "genrm/lm/checkpoint.hpp"
#include "genrm/prefmodel/vote.hpp"
#include "genrm/synthworld/task.hpp"

namespace genrm::eval {

using pref::Indicator;
using world::TokenSeq;

/// What a judge is allowed to see: the prompt and the two responses.
struct PairView {
  TokenSeq x, y1, y2;
};

PairView view_of(const world::PreferencePair& pair);
PairView swapped_view(const PairView& view);

struct JudgeOutcome {
  std::vector<Indicator> verdicts;  // one per requested K
  std::vector<double> p_a;          // matching preference estimates
  std::size_t samples = 0;
  std::size_t invalid = 0;
};

class Judge {
 public:
  virtual ~Judge() = default;
  /// True when the verdict comes from sampled judgments and depends on K.
  virtual bool sampled() const = 0;
  /// Verdicts for each K in `ks` (ascending); deterministic judges answer
  /// the same for every K.
  virtual JudgeOutcome judge(const PairView& pair, std::span<const std::size_t> ks,
                             std::uint64_t seed) const = 0;
};

/// BT-RM: compares r(x, y1) with r(x, y2); A wins exact ties.
std::unique_ptr<Judge> reward_judge(const lm::Checkpoint& checkpoint);
/// PAIR-RM: sign of the antisymmetrized pair logit; A wins a zero logit.
std::unique_ptr<Judge> pair_judge(const lm::Checkpoint& checkpoint);
/// GENRM: argmax of the direct-judge indicator distribution.
std::unique_ptr<Judge> direct_judge(const lm::Checkpoint& checkpoint);
/// CoT judge: K-max sampled judgments per pair, Maj@K over prefixes of that
/// pool.
std::unique_ptr<Judge> cot_judge(const lm::Checkpoint& checkpoint,
                                 pref::VoteProbability mode = pref::VoteProbability::kVoteRatio);

/// Test doubles. The oracle decodes the task from the prompt and applies
/// the latent reward; the constant judge always answers `answer`.
std::unique_ptr<Judge> oracle_judge();
std::unique_ptr<Judge> constant_judge(Indicator answer);

}  // namespace genrm::eval
