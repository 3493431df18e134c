#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "genrm/lm/model.hpp"

namespace genrm::lm {

struct SamplingParams {
  double temperature = 1.0;
  double top_p = 0.95;
  std::vector<Token> stop_tokens{Vocab::kEos};
  std::size_t max_new_tokens = 16;
};

struct SampledSequence {
  TokenSeq tokens;
  /// Sum of untruncated, temperature-free model log-probabilities of the
  /// generated tokens.
  double logprob = 0.0;
  /// Vocab logits of the step that produced the last token.
  std::vector<double> last_logits;
  bool stopped = false;  // ended on a stop token rather than max_new_tokens
};

/// Nucleus distribution: softmax(logits / temperature), then the smallest
/// probability-sorted prefix whose mass reaches top_p, renormalized.
/// Ties in probability are ordered by token id.
std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature,
                                         double top_p);

/// Inverse-CDF draw with u in [0, 1).
Token draw_token(std::span<const double> probs, double u);

/// One stream per seed, all continuing the same prompt. Stream i depends
/// only on (prompt, seeds[i], params).
std::vector<SampledSequence> sample_batch(const Model& model, std::span<const Token> prompt,
                                          std::span<const std::uint64_t> seeds,
                                          const SamplingParams& params);

SampledSequence sample_sequence(const Model& model, std::span<const Token> prompt,
                                const SamplingParams& params, std::uint64_t seed);

/// Key/value-cached evaluation of an LM-head model over several streams.
/// Produces the same logits as `forward_logits` up to rounding.
class IncrementalDecoder {
 public:
  IncrementalDecoder(const Model& model, std::size_t streams);

  /// Appends `tokens` to one stream; returns logits for each new position,
  /// row-major [tokens.size(), vocab].
  std::vector<double> extend(std::size_t stream, std::span<const Token> tokens);
  /// Appends one token to each listed stream; returns logits
  /// [streams.size(), vocab] in the same order.
  std::vector<double> step(std::span<const std::size_t> streams, std::span<const Token> tokens);
  /// Copies the cache of `from` into `to`.
  void fork(std::size_t from, std::size_t to);
  std::size_t length(std::size_t stream) const { return caches_[stream].length; }

 private:
  struct Cache {
    std::vector<std::vector<double>> keys, values;  // per layer, [context, d]
    std::size_t length = 0;
  };
  struct Chunk {
    std::size_t stream;
    std::size_t rows;
  };
  std::vector<double> run(std::span<const Chunk> chunks, std::span<const Token> tokens);

  const Model& model_;
  std::size_t d_, heads_, vocab_, context_;
  std::vector<Cache> caches_;
};

}  // namespace genrm::lm
