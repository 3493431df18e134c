#include "genrm/prefmodel/losses.hpp"

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "genrm/lm/scoring.hpp"
#include "genrm/ndtensor/ops.hpp"

namespace genrm::pref {

namespace {

void require_nonempty(std::size_t n, const char* op) {
  if (n == 0) throw std::invalid_argument(std::string(op) + ": empty batch");
}

// +1 where the first listed response wins.
nd::Tensor winner_signs(std::span<const PreferencePair> batch) {
  std::vector<double> s;
  s.reserve(batch.size());
  for (const auto& p : batch) s.push_back(p.gold == Indicator::kA ? 1.0 : -1.0);
  return nd::Tensor::from({batch.size()}, std::move(s));
}

}  // namespace

double bt_probability(double r1, double r2) {
  const double d = r1 - r2;
  if (d >= 0) return 1.0 / (1.0 + std::exp(-d));
  const double e = std::exp(d);
  return e / (1.0 + e);
}

double reward_from_preference(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("preference probability " + std::to_string(p) +
                            " must lie strictly between 0 and 1");
  }
  return std::log(p) - std::log1p(-p);
}

nd::Tensor bt_loss(const lm::Model& model, std::span<const PreferencePair> batch) {
  model.require_head(lm::HeadVariant::kBtReward, "bt_loss");
  require_nonempty(batch.size(), "bt_loss");
  std::vector<TokenSeq> layouts;
  layouts.reserve(2 * batch.size());
  for (const auto& p : batch) {
    const bool a_wins = p.gold == Indicator::kA;
    layouts.push_back(lm::reward_layout(p.x, a_wins ? p.y1 : p.y2));
  }
  for (const auto& p : batch) {
    const bool a_wins = p.gold == Indicator::kA;
    layouts.push_back(lm::reward_layout(p.x, a_wins ? p.y2 : p.y1));
  }
  const nd::Tensor scores = lm::reward_scores(model, layouts);
  const std::size_t n = batch.size();
  const nd::Tensor margin = nd::sub(nd::slice(scores, 0, 0, n), nd::slice(scores, 0, n, 2 * n));
  return nd::neg(nd::mean(nd::log_logistic(margin)));
}

nd::Tensor pair_loss(const lm::Model& model, std::span<const PreferencePair> batch) {
  model.require_head(lm::HeadVariant::kPairReward, "pair_loss");
  require_nonempty(batch.size(), "pair_loss");
  std::vector<lm::PairInput> items;
  items.reserve(batch.size());
  for (const auto& p : batch) items.push_back({p.x, p.y1, p.y2});
  const nd::Tensor logits = lm::pair_logits(model, items);
  return nd::neg(nd::mean(nd::log_logistic(nd::mul(logits, winner_signs(batch)))));
}

IndicatorProbs indicator_probs_from_logits(std::span<const double> logits) {
  const double la = logits[static_cast<std::size_t>(Vocab::kIndA)];
  const double lb = logits[static_cast<std::size_t>(Vocab::kIndB)];
  const double pa = bt_probability(la, lb);
  return {pa, bt_probability(lb, la)};
}

IndicatorProbs indicator_distribution(const lm::Model& model, std::span<const Token> x,
                                      std::span<const Token> y1, std::span<const Token> y2) {
  model.require_head(lm::HeadVariant::kLm, "indicator_distribution");
  const TokenSeq layout = world::encode_layout(world::LayoutMode::kDirectJudge, x, y1, y2,
                                               std::nullopt,
                                               static_cast<std::size_t>(model.config().context_length));
  const auto logits = lm::forward_logits(model, layout);
  const std::size_t v = static_cast<std::size_t>(model.config().vocab_size);
  return indicator_probs_from_logits(
      std::span<const double>(logits).subspan((layout.size() - 1) * v, v));
}

nd::Tensor genrm_loss(const lm::Model& model, std::span<const PreferencePair> batch) {
  model.require_head(lm::HeadVariant::kLm, "genrm_loss");
  require_nonempty(batch.size(), "genrm_loss");
  std::vector<lm::PromptCompletion> items;
  items.reserve(batch.size());
  for (const auto& p : batch) {
    items.push_back({world::encode_layout(world::LayoutMode::kDirectJudge, p),
                     {world::indicator_token(p.gold)}});
  }
  return nd::neg(nd::mean(lm::completion_logprobs(model, items)));
}

TokenSeq judgment_tokens(std::span<const Token> rationale, Indicator indicator) {
  TokenSeq out(rationale.begin(), rationale.end());
  out.push_back(world::indicator_token(indicator));
  return out;
}

nd::Tensor rationalization_loss(const lm::Model& model, std::span<const RationaleExample> batch) {
  model.require_head(lm::HeadVariant::kLm, "rationalization_loss");
  require_nonempty(batch.size(), "rationalization_loss");
  std::vector<lm::PromptCompletion> items;
  items.reserve(batch.size());
  for (const auto& e : batch) items.push_back({e.prefix, judgment_tokens(e.rationale, e.indicator)});
  return nd::neg(nd::mean(lm::completion_logprobs(model, items)));
}

nd::Tensor dpo_margins(const lm::Model& policy, const lm::Model& reference,
                       std::span<const DpoExample> batch, double beta) {
  if (policy.config() != reference.config()) {
    throw std::invalid_argument("dpo: policy and reference configurations differ");
  }
  policy.require_head(lm::HeadVariant::kLm, "dpo_loss");
  require_nonempty(batch.size(), "dpo_loss");
  if (!(beta > 0.0)) throw std::invalid_argument("dpo: beta must be positive");
  std::vector<lm::PromptCompletion> items;
  items.reserve(2 * batch.size());
  for (const auto& e : batch) items.push_back({e.prefix, e.winning});
  for (const auto& e : batch) items.push_back({e.prefix, e.losing});

  nd::Tensor ref;
  {
    nd::NoGradGuard guard;
    ref = lm::completion_logprobs(reference, items);
  }
  const nd::Tensor ratio = nd::sub(lm::completion_logprobs(policy, items), ref);
  const std::size_t n = batch.size();
  return nd::scale(nd::sub(nd::slice(ratio, 0, 0, n), nd::slice(ratio, 0, n, 2 * n)), beta);
}

nd::Tensor dpo_loss(const lm::Model& policy, const lm::Model& reference,
                    std::span<const DpoExample> batch, double beta) {
  return nd::neg(nd::mean(nd::log_logistic(dpo_margins(policy, reference, batch, beta))));
}

}  // namespace genrm::pref
