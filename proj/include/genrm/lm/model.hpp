#pragma once

#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "genrm/lm/vocab.hpp"
#include "genrm/ndtensor/tensor.hpp"

namespace genrm::lm {

using TokenSeq = std::vector<Token>;

enum class HeadVariant { kLm, kBtReward, kPairReward };

std::string_view to_string(HeadVariant head);
HeadVariant parse_head_variant(std::string_view text);

class WrongHeadVariant : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SequenceTooLong : public std::length_error {
 public:
  using std::length_error::length_error;
};

struct ModelConfig {
  int vocab_size = Vocab::kDefaultSize;
  int layers = 2;
  int heads = 2;
  int embed_dim = 64;
  int context_length = 128;
  int mlp_dim = 256;
  HeadVariant head = HeadVariant::kLm;

  /// Throws std::invalid_argument on non-positive extents or when
  /// embed_dim is not divisible by heads.
  void validate() const;
  /// Same trunk, different head.
  ModelConfig with_head(HeadVariant variant) const;

  bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
  std::string name;
  nd::Tensor tensor;
};

/// Decoder-only transformer: learned token and absolute position
/// embeddings, pre-norm blocks (causal attention + SiLU MLP), final layer
/// norm, and one head chosen by `ModelConfig::head`.
///
/// Copying a Model deep-copies its parameters; the copy shares nothing
/// with the original.
class Model {
 public:
  /// Weights ~ N(0, 0.02), biases zero, norm gains one, head zeroed.
  static Model init(const ModelConfig& config, std::uint64_t seed);
  /// Parameters must match the shapes derived from `config`, in order.
  static Model from_parameters(const ModelConfig& config, std::vector<NamedTensor> params);

  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  ~Model() = default;

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& parameters() const { return params_; }
  std::vector<nd::Tensor> trainable() const;
  const nd::Tensor& param(std::string_view name) const;
  std::size_t parameter_count() const;
  void zero_grad();
  bool same_parameters(const Model& other) const;

  /// Final-layer hidden states for independent sequences packed row-wise:
  /// result is [sum of lengths, embed_dim]. Sequences must be non-empty
  /// and no longer than the context length.
  nd::Tensor hidden_states(std::span<const TokenSeq> sequences) const;
  /// Next-token logits [rows, vocab]; requires the LM head.
  nd::Tensor lm_logits(const nd::Tensor& hidden_rows) const;
  /// Scalar head output [rows, 1]; requires a reward or pair head.
  nd::Tensor scalar_head(const nd::Tensor& hidden_rows) const;

  void require_head(HeadVariant expected, std::string_view op) const;

 private:
  Model(ModelConfig config, std::vector<NamedTensor> params);
  void index_parameters();

  struct BlockIndex {
    std::size_t ln1_g, ln1_b, w_qkv, b_qkv, w_proj, b_proj;
    std::size_t ln2_g, ln2_b, w_in, b_in, w_out, b_out;
  };

  ModelConfig config_;
  std::vector<NamedTensor> params_;
  std::size_t tok_emb_ = 0, pos_emb_ = 0, lnf_g_ = 0, lnf_b_ = 0, head_w_ = 0, head_b_ = 0;
  std::vector<BlockIndex> blocks_;
};

/// Names and shapes of every parameter implied by a config, in storage order.
std::vector<std::pair<std::string, nd::Shape>> parameter_layout(const ModelConfig& config);

}  // namespace genrm::lm
