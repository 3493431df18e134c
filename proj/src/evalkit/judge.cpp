#include "genrm/evalkit/judge.hpp"

#include "genrm/common/digest.hpp"
#include "genrm/lm/scoring.hpp"
#include "genrm/prefmodel/losses.hpp"
#include "genrm/starloop/star.hpp"

namespace genrm::eval {

namespace {

JudgeOutcome repeated(Indicator verdict, double p_a, std::size_t count) {
  JudgeOutcome out;
  out.verdicts.assign(count, verdict);
  out.p_a.assign(count, p_a);
  return out;
}

class RewardJudge final : public Judge {
 public:
  explicit RewardJudge(const lm::Checkpoint& c) : checkpoint_(c) {
    c.model.require_head(lm::HeadVariant::kBtReward, "reward_judge");
  }
  bool sampled() const override { return false; }
  JudgeOutcome judge(const PairView& p, std::span<const std::size_t> ks,
                     std::uint64_t) const override {
    nd::NoGradGuard guard;
    const std::vector<TokenSeq> layouts{lm::reward_layout(p.x, p.y1), lm::reward_layout(p.x, p.y2)};
    const nd::Tensor scores = lm::reward_scores(checkpoint_.model, layouts);
    const double r1 = scores.data()[0], r2 = scores.data()[1];
    return repeated(r1 >= r2 ? Indicator::kA : Indicator::kB, pref::bt_probability(r1, r2),
                    ks.size());
  }

 private:
  lm::Checkpoint checkpoint_;
};

class PairJudge final : public Judge {
 public:
  explicit PairJudge(const lm::Checkpoint& c) : checkpoint_(c) {
    c.model.require_head(lm::HeadVariant::kPairReward, "pair_judge");
  }
  bool sampled() const override { return false; }
  JudgeOutcome judge(const PairView& p, std::span<const std::size_t> ks,
                     std::uint64_t) const override {
    const double logit = lm::pair_head_logit(checkpoint_.model, p.x, p.y1, p.y2);
    return repeated(logit >= 0 ? Indicator::kA : Indicator::kB, pref::bt_probability(logit, 0.0),
                    ks.size());
  }

 private:
  lm::Checkpoint checkpoint_;
};

class DirectJudge final : public Judge {
 public:
  explicit DirectJudge(const lm::Checkpoint& c) : checkpoint_(c) {
    c.model.require_head(lm::HeadVariant::kLm, "direct_judge");
  }
  bool sampled() const override { return false; }
  JudgeOutcome judge(const PairView& p, std::span<const std::size_t> ks,
                     std::uint64_t) const override {
    const auto probs = pref::indicator_distribution(checkpoint_.model, p.x, p.y1, p.y2);
    return repeated(probs.a >= probs.b ? Indicator::kA : Indicator::kB, probs.a, ks.size());
  }

 private:
  lm::Checkpoint checkpoint_;
};

class CotJudge final : public Judge {
 public:
  CotJudge(const lm::Checkpoint& c, pref::VoteProbability mode)
      : checkpoint_(c), id_(c.id()), mode_(mode) {
    c.model.require_head(lm::HeadVariant::kLm, "cot_judge");
  }
  bool sampled() const override { return true; }
  JudgeOutcome judge(const PairView& p, std::span<const std::size_t> ks,
                     std::uint64_t seed) const override {
    JudgeOutcome out;
    if (ks.empty()) return out;
    const std::size_t k_max = ks.back();
    std::vector<std::uint64_t> seeds(k_max);
    for (std::size_t j = 0; j < k_max; ++j) seeds[j] = mix_seed(seed, j);
    const auto prompt = world::encode_layout(world::LayoutMode::kCotJudge, p.x, p.y1, p.y2);
    const auto sequences = lm::sample_batch(checkpoint_.model, prompt, seeds, star::judge_sampling());
    std::vector<pref::JudgeSample> samples;
    samples.reserve(k_max);
    for (const auto& seq : sequences) {
      auto s = pref::parse_judgment(seq.tokens, seq.logprob, id_);
      if (s.valid()) s.likelihood_a = pref::indicator_probs_from_logits(seq.last_logits).a;
      out.invalid += s.valid() ? 0 : 1;
      samples.push_back(std::move(s));
    }
    out.samples = samples.size();
    for (std::size_t k : ks) {
      const auto v = pref::majority_vote(samples, k, mode_);
      out.verdicts.push_back(v.chosen);
      out.p_a.push_back(v.p_a);
    }
    return out;
  }

 private:
  lm::Checkpoint checkpoint_;
  std::string id_;
  pref::VoteProbability mode_;
};

class OracleJudge final : public Judge {
 public:
  bool sampled() const override { return false; }
  JudgeOutcome judge(const PairView& p, std::span<const std::size_t> ks,
                     std::uint64_t) const override {
    const auto task = world::decode_prompt(p.x);
    const double r1 = world::latent_reward(task, p.y1);
    const double r2 = world::latent_reward(task, p.y2);
    return repeated(r1 >= r2 ? Indicator::kA : Indicator::kB, r1 == r2 ? 0.5 : (r1 > r2 ? 1.0 : 0.0),
                    ks.size());
  }
};

class ConstantJudge final : public Judge {
 public:
  explicit ConstantJudge(Indicator answer) : answer_(answer) {}
  bool sampled() const override { return false; }
  JudgeOutcome judge(const PairView&, std::span<const std::size_t> ks,
                     std::uint64_t) const override {
    return repeated(answer_, answer_ == Indicator::kA ? 1.0 : 0.0, ks.size());
  }

 private:
  Indicator answer_;
};

}  // namespace

PairView view_of(const world::PreferencePair& pair) { return {pair.x, pair.y1, pair.y2}; }

PairView swapped_view(const PairView& view) { return {view.x, view.y2, view.y1}; }

std::unique_ptr<Judge> reward_judge(const lm::Checkpoint& c) { return std::make_unique<RewardJudge>(c); }
std::unique_ptr<Judge> pair_judge(const lm::Checkpoint& c) { return std::make_unique<PairJudge>(c); }
std::unique_ptr<Judge> direct_judge(const lm::Checkpoint& c) { return std::make_unique<DirectJudge>(c); }
std::unique_ptr<Judge> cot_judge(const lm::Checkpoint& c, pref::VoteProbability mode) {
  return std::make_unique<CotJudge>(c, mode);
}
std::unique_ptr<Judge> oracle_judge() { return std::make_unique<OracleJudge>(); }
std::unique_ptr<Judge> constant_judge(Indicator answer) {
  return std::make_unique<ConstantJudge>(answer);
}

}  // namespace genrm::eval
