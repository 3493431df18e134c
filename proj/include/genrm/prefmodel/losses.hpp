#pragma once

#include <cstdint>
#include <span>

#include "genrm/lm/model.hpp"
#include "genrm/ndtensor/tensor.hpp"
#include "genrm/synthworld/layout.hpp"
#include "genrm/synthworld/task.hpp"

namespace genrm::pref {

using world::Indicator;
using world::PreferencePair;
using world::TokenSeq;

/// sigma(r1 - r2)
double bt_probability(double r1, double r2);
/// log(p / (1 - p)); p must lie strictly inside (0, 1).
double reward_from_preference(double p);

/// -mean log sigma(r(x, y_w) - r(x, y_l)); needs a BT-REWARD model.
nd::Tensor bt_loss(const lm::Model& model, std::span<const PreferencePair> batch);

/// -mean log sigma(+-pair_logit), sign chosen by the gold indicator; needs a
/// PAIR-REWARD model.
nd::Tensor pair_loss(const lm::Model& model, std::span<const PreferencePair> batch);

struct IndicatorProbs {
  double a = 0.5;
  double b = 0.5;
};

/// Two-way softmax of the IND_A / IND_B entries of one vocab logit row.
IndicatorProbs indicator_probs_from_logits(std::span<const double> logits);

/// Direct-judge indicator probabilities, renormalized over {A, B}.
IndicatorProbs indicator_distribution(const lm::Model& model, std::span<const Token> x,
                                      std::span<const Token> y1, std::span<const Token> y2);

/// -mean log p(I | direct layout) under the full-vocab softmax.
nd::Tensor genrm_loss(const lm::Model& model, std::span<const PreferencePair> batch);

/// A judge-layout prefix together with the rationale and indicator to be
/// learned after it.
struct RationaleExample {
  TokenSeq prefix;
  TokenSeq rationale;
  Indicator indicator = Indicator::kA;
  std::uint64_t pair_id = 0;
};

/// rationale tokens followed by the indicator token
TokenSeq judgment_tokens(std::span<const Token> rationale, Indicator indicator);

/// -mean [log p(I | prefix, r) + log p(r | prefix)]
nd::Tensor rationalization_loss(const lm::Model& model, std::span<const RationaleExample> batch);

struct DpoExample {
  TokenSeq prefix;
  TokenSeq winning;  // rationale and indicator of a correct judgment
  TokenSeq losing;   // same for an incorrect judgment
  std::uint64_t pair_id = 0;
};

/// beta * (log pi/pi_ref (winning) - log pi/pi_ref (losing)), [n]. The
/// reference side is evaluated without gradient.
nd::Tensor dpo_margins(const lm::Model& policy, const lm::Model& reference,
                       std::span<const DpoExample> batch, double beta);
/// -mean log sigma(margin)
nd::Tensor dpo_loss(const lm::Model& policy, const lm::Model& reference,
                    std::span<const DpoExample> batch, double beta);

}  // namespace genrm::pref
