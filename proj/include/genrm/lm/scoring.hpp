#pragma once

#include <span>
#include <vector>

#include "genrm/lm/model.hpp"
#include "genrm/ndtensor/tensor.hpp"

namespace genrm::lm {

/// BOS x SEP y EOS
TokenSeq reward_layout(std::span<const Token> x, std::span<const Token> y);
/// BOS x SEP y1 SEP y2 EOS
TokenSeq pair_layout(std::span<const Token> x, std::span<const Token> y1,
                     std::span<const Token> y2);

/// Per-position next-token logits, row-major [length, vocab].
std::vector<double> forward_logits(const Model& model, std::span<const Token> tokens);

struct PromptCompletion {
  TokenSeq prompt;
  TokenSeq completion;
};

/// Differentiable sum of log p(completion_t | prompt, completion_<t) for
/// each item, as a [n] tensor. Prompt positions are masked out.
nd::Tensor completion_logprobs(const Model& model, std::span<const PromptCompletion> items);
double sequence_logprob(const Model& model, std::span<const Token> prompt,
                        std::span<const Token> completion);

/// Differentiable r(x, y) for each layout, read at the final position: [n].
nd::Tensor reward_scores(const Model& model, std::span<const TokenSeq> layouts);
double reward_head_score(const Model& model, std::span<const Token> x, std::span<const Token> y);

struct PairInput {
  TokenSeq x, y1, y2;
};

/// Antisymmetrized logit of p(y1 > y2 | x):
/// (s(x, y1, y2) - s(x, y2, y1)) / 2 where s reads the pair head at the
/// final position of the pair layout. Differentiable, [n].
nd::Tensor pair_logits(const Model& model, std::span<const PairInput> items);
double pair_head_logit(const Model& model, std::span<const Token> x, std::span<const Token> y1,
                       std::span<const Token> y2);

}  // namespace genrm::lm
