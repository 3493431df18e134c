#include "genrm/prefmodel/vote.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace genrm::pref {

JudgeSample parse_judgment(std::span<const Token> completion, double logprob,
                           std::string checkpoint_id) {
  JudgeSample s;
  s.logprob = logprob;
  s.checkpoint_id = std::move(checkpoint_id);
  if (!completion.empty() && completion.back() == Vocab::kEos) {
    completion = completion.first(completion.size() - 1);
  }
  if (completion.empty()) return s;
  s.indicator = world::indicator_from_token(completion.back());
  if (s.indicator) s.rationale.assign(completion.begin(), completion.end() - 1);
  else s.rationale.assign(completion.begin(), completion.end());
  return s;
}

Verdict majority_vote(std::span<const JudgeSample> samples, std::size_t k, VoteProbability mode) {
  if (k == 0) throw std::invalid_argument("majority_vote: K must be positive");
  if (k > samples.size()) {
    throw std::invalid_argument("majority_vote: K = " + std::to_string(k) + " but only " +
                                std::to_string(samples.size()) + " samples");
  }
  Verdict v;
  double logprob_a = 0.0, logprob_b = 0.0, likelihood = 0.0;
  for (const auto& s : samples.first(k)) {
    if (!s.valid()) {
      ++v.invalid;
      continue;
    }
    likelihood += s.likelihood_a;
    if (*s.indicator == Indicator::kA) {
      ++v.votes_a;
      logprob_a += s.logprob;
    } else {
      ++v.votes_b;
      logprob_b += s.logprob;
    }
  }
  if (v.votes_a != v.votes_b) {
    v.chosen = v.votes_a > v.votes_b ? Indicator::kA : Indicator::kB;
  } else {
    v.tie_broken = true;
    v.chosen = logprob_b > logprob_a ? Indicator::kB : Indicator::kA;
  }
  const std::size_t valid = v.votes_a + v.votes_b;
  if (mode == VoteProbability::kVoteRatio) {
    v.p_a = static_cast<double>(v.votes_a) / static_cast<double>(k);
  } else {
    v.p_a = valid == 0 ? 0.5 : likelihood / static_cast<double>(valid);
  }
  return v;
}

}  // namespace genrm::pref
