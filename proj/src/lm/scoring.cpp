#include "genrm/lm/scoring.hpp"

#include <numeric>

#include "genrm/ndtensor/ops.hpp"

namespace genrm::lm {

TokenSeq reward_layout(std::span<const Token> x, std::span<const Token> y) {
  TokenSeq out;
  out.reserve(x.size() + y.size() + 3);
  out.push_back(Vocab::kBos);
  out.insert(out.end(), x.begin(), x.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), y.begin(), y.end());
  out.push_back(Vocab::kEos);
  return out;
}

TokenSeq pair_layout(std::span<const Token> x, std::span<const Token> y1,
                     std::span<const Token> y2) {
  TokenSeq out;
  out.reserve(x.size() + y1.size() + y2.size() + 4);
  out.push_back(Vocab::kBos);
  out.insert(out.end(), x.begin(), x.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), y1.begin(), y1.end());
  out.push_back(Vocab::kSep);
  out.insert(out.end(), y2.begin(), y2.end());
  out.push_back(Vocab::kEos);
  return out;
}

std::vector<double> forward_logits(const Model& model, std::span<const Token> tokens) {
  model.require_head(HeadVariant::kLm, "forward_logits");
  nd::NoGradGuard no_grad;
  const TokenSeq seq(tokens.begin(), tokens.end());
  nd::Tensor logits = model.lm_logits(model.hidden_states(std::span(&seq, 1)));
  return {logits.data().begin(), logits.data().end()};
}

nd::Tensor completion_logprobs(const Model& model, std::span<const PromptCompletion> items) {
  model.require_head(HeadVariant::kLm, "completion_logprobs");
  if (items.empty()) throw std::invalid_argument("completion_logprobs: empty batch");
  std::vector<TokenSeq> seqs;
  seqs.reserve(items.size());
  // Row r of the packed hidden states predicts token r + 1 of its sequence.
  std::vector<std::size_t> rows;
  std::vector<Token> targets;
  std::vector<std::size_t> owner;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < items.size(); ++i) {
    const auto& it = items[i];
    if (it.completion.empty()) throw std::invalid_argument("completion_logprobs: empty completion");
    if (it.prompt.empty()) throw std::invalid_argument("completion_logprobs: empty prompt");
    TokenSeq seq = it.prompt;
    seq.insert(seq.end(), it.completion.begin(), it.completion.end());
    for (std::size_t j = 0; j < it.completion.size(); ++j) {
      rows.push_back(offset + it.prompt.size() - 1 + j);
      targets.push_back(it.completion[j]);
      owner.push_back(i);
    }
    offset += seq.size();
    seqs.push_back(std::move(seq));
  }
  nd::Tensor hidden = nd::gather_rows(model.hidden_states(seqs), rows);
  nd::Tensor logp = nd::log_softmax(model.lm_logits(hidden));
  const std::size_t v = static_cast<std::size_t>(model.config().vocab_size);
  std::vector<std::size_t> picks(rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) {
    picks[r] = r * v + static_cast<std::size_t>(targets[r]);
  }
  nd::Tensor token_lp = nd::take(logp, picks);
  // Per-item sums as a [n] tensor: one-hot ownership matrix product.
  std::vector<double> ownership(items.size() * rows.size(), 0.0);
  for (std::size_t r = 0; r < rows.size(); ++r) ownership[owner[r] * rows.size() + r] = 1.0;
  nd::Tensor own = nd::Tensor::from({items.size(), rows.size()}, std::move(ownership));
  nd::Tensor summed = nd::matmul(own, nd::reshape(token_lp, {rows.size(), 1}));
  return nd::reshape(summed, {items.size()});
}

double sequence_logprob(const Model& model, std::span<const Token> prompt,
                        std::span<const Token> completion) {
  nd::NoGradGuard no_grad;
  const PromptCompletion item{TokenSeq(prompt.begin(), prompt.end()),
                              TokenSeq(completion.begin(), completion.end())};
  return completion_logprobs(model, std::span(&item, 1)).item();
}

nd::Tensor reward_scores(const Model& model, std::span<const TokenSeq> layouts) {
  model.require_head(HeadVariant::kBtReward, "reward_scores");
  if (layouts.empty()) throw std::invalid_argument("reward_scores: empty batch");
  std::vector<std::size_t> rows;
  std::size_t offset = 0;
  for (const auto& l : layouts) {
    offset += l.size();
    rows.push_back(offset - 1);
  }
  nd::Tensor h = nd::gather_rows(model.hidden_states(layouts), rows);
  nd::Tensor s = model.scalar_head(h);
  std::vector<std::size_t> idx(layouts.size());
  std::iota(idx.begin(), idx.end(), 0);
  return nd::take(s, idx);
}

double reward_head_score(const Model& model, std::span<const Token> x, std::span<const Token> y) {
  nd::NoGradGuard no_grad;
  const TokenSeq layout = reward_layout(x, y);
  return reward_scores(model, std::span(&layout, 1)).item();
}

nd::Tensor pair_logits(const Model& model, std::span<const PairInput> items) {
  model.require_head(HeadVariant::kPairReward, "pair_logits");
  if (items.empty()) throw std::invalid_argument("pair_logits: empty batch");
  const std::size_t n = items.size();
  std::vector<TokenSeq> seqs;
  seqs.reserve(2 * n);
  for (const auto& it : items) seqs.push_back(pair_layout(it.x, it.y1, it.y2));
  for (const auto& it : items) seqs.push_back(pair_layout(it.x, it.y2, it.y1));
  std::vector<std::size_t> rows;
  std::size_t offset = 0;
  for (const auto& s : seqs) {
    offset += s.size();
    rows.push_back(offset - 1);
  }
  nd::Tensor s = model.scalar_head(nd::gather_rows(model.hidden_states(seqs), rows));
  std::vector<std::size_t> fwd(n), rev(n);
  std::iota(fwd.begin(), fwd.end(), 0);
  std::iota(rev.begin(), rev.end(), n);
  return nd::scale(nd::sub(nd::take(s, fwd), nd::take(s, rev)), 0.5);
}

double pair_head_logit(const Model& model, std::span<const Token> x, std::span<const Token> y1,
                       std::span<const Token> y2) {
  nd::NoGradGuard no_grad;
  const PairInput item{TokenSeq(x.begin(), x.end()), TokenSeq(y1.begin(), y1.end()),
                       TokenSeq(y2.begin(), y2.end())};
  return pair_logits(model, std::span(&item, 1)).item();
}

}  // namespace genrm::lm
