#include "genrm/lm/model.hpp"

#include <algorithm>
#include <random>

#include "genrm/ndtensor/ops.hpp"

namespace genrm::lm {

namespace {

constexpr double kInitStd = 0.02;

bool is_weight(const std::string& name) {
  return name.ends_with(".w") || name.ends_with("_emb");
}

bool is_gain(const std::string& name) { return name.ends_with(".g"); }

bool is_head(const std::string& name) {
  return name.starts_with("head.") || name.starts_with("reward.") || name.starts_with("pair.");
}

}  // namespace

std::string_view to_string(HeadVariant head) {
  switch (head) {
    case HeadVariant::kLm: return "LM";
    case HeadVariant::kBtReward: return "BT-REWARD";
    case HeadVariant::kPairReward: return "PAIR-REWARD";
  }
  return "?";
}

HeadVariant parse_head_variant(std::string_view text) {
  if (text == "LM") return HeadVariant::kLm;
  if (text == "BT-REWARD") return HeadVariant::kBtReward;
  if (text == "PAIR-REWARD") return HeadVariant::kPairReward;
  throw std::invalid_argument("unknown head variant '" + std::string(text) + "'");
}

void ModelConfig::validate() const {
  if (vocab_size <= 0 || layers <= 0 || heads <= 0 || embed_dim <= 0 ||
      context_length <= 0 || mlp_dim <= 0) {
    throw std::invalid_argument("model config extents must be positive");
  }
  if (embed_dim % heads != 0) {
    throw std::invalid_argument("embed_dim " + std::to_string(embed_dim) +
                                " is not divisible by heads " + std::to_string(heads));
  }
}

ModelConfig ModelConfig::with_head(HeadVariant variant) const {
  ModelConfig c = *this;
  c.head = variant;
  return c;
}

std::vector<std::pair<std::string, nd::Shape>> parameter_layout(const ModelConfig& c) {
  c.validate();
  const auto v = static_cast<std::size_t>(c.vocab_size);
  const auto d = static_cast<std::size_t>(c.embed_dim);
  const auto m = static_cast<std::size_t>(c.mlp_dim);
  const auto t = static_cast<std::size_t>(c.context_length);
  std::vector<std::pair<std::string, nd::Shape>> out;
  out.emplace_back("tok_emb", nd::Shape{v, d});
  out.emplace_back("pos_emb", nd::Shape{t, d});
  for (int i = 0; i < c.layers; ++i) {
    const std::string p = "h" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.g", nd::Shape{d});
    out.emplace_back(p + "ln1.b", nd::Shape{d});
    out.emplace_back(p + "attn.qkv.w", nd::Shape{d, 3 * d});
    out.emplace_back(p + "attn.qkv.b", nd::Shape{3 * d});
    out.emplace_back(p + "attn.proj.w", nd::Shape{d, d});
    out.emplace_back(p + "attn.proj.b", nd::Shape{d});
    out.emplace_back(p + "ln2.g", nd::Shape{d});
    out.emplace_back(p + "ln2.b", nd::Shape{d});
    out.emplace_back(p + "mlp.in.w", nd::Shape{d, m});
    out.emplace_back(p + "mlp.in.b", nd::Shape{m});
    out.emplace_back(p + "mlp.out.w", nd::Shape{m, d});
    out.emplace_back(p + "mlp.out.b", nd::Shape{d});
  }
  out.emplace_back("ln_f.g", nd::Shape{d});
  out.emplace_back("ln_f.b", nd::Shape{d});
  switch (c.head) {
    case HeadVariant::kLm:
      out.emplace_back("head.w", nd::Shape{d, v});
      out.emplace_back("head.b", nd::Shape{v});
      break;
    case HeadVariant::kBtReward:
      out.emplace_back("reward.w", nd::Shape{d, 1});
      out.emplace_back("reward.b", nd::Shape{1});
      break;
    case HeadVariant::kPairReward:
      out.emplace_back("pair.w", nd::Shape{d, 1});
      out.emplace_back("pair.b", nd::Shape{1});
      break;
  }
  return out;
}

Model::Model(ModelConfig config, std::vector<NamedTensor> params)
    : config_(config), params_(std::move(params)) {
  index_parameters();
}

Model Model::init(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> normal(0.0, kInitStd);
  std::vector<NamedTensor> params;
  for (auto& [name, shape] : parameter_layout(config)) {
    std::vector<double> values(nd::numel(shape), 0.0);
    if (is_gain(name)) {
      std::fill(values.begin(), values.end(), 1.0);
    } else if (is_weight(name) && !is_head(name)) {
      for (double& x : values) x = normal(rng);
    }
    params.push_back({name, nd::Tensor::from(shape, std::move(values), true)});
  }
  return Model(config, std::move(params));
}

Model Model::from_parameters(const ModelConfig& config, std::vector<NamedTensor> params) {
  const auto layout = parameter_layout(config);
  if (layout.size() != params.size()) {
    throw std::invalid_argument("expected " + std::to_string(layout.size()) +
                                " parameters, got " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (layout[i].first != params[i].name || layout[i].second != params[i].tensor.shape()) {
      throw std::invalid_argument("parameter " + std::to_string(i) + " is " + params[i].name +
                                  nd::to_string(params[i].tensor.shape()) + ", expected " +
                                  layout[i].first + nd::to_string(layout[i].second));
    }
    if (!params[i].tensor.requires_grad() || !params[i].tensor.is_leaf()) {
      params[i].tensor = nd::Tensor::from(
          params[i].tensor.shape(),
          std::vector<double>(params[i].tensor.data().begin(), params[i].tensor.data().end()),
          true);
    }
  }
  return Model(config, std::move(params));
}

Model::Model(const Model& other) : config_(other.config_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) {
    params_.push_back({p.name, nd::Tensor::from(p.tensor.shape(),
                                                std::vector<double>(p.tensor.data().begin(),
                                                                    p.tensor.data().end()),
                                                true)});
  }
  index_parameters();
}

Model& Model::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

void Model::index_parameters() {
  auto find = [this](const std::string& name) {
    for (std::size_t i = 0; i < params_.size(); ++i) {
      if (params_[i].name == name) return i;
    }
    throw std::invalid_argument("missing parameter " + name);
  };
  tok_emb_ = find("tok_emb");
  pos_emb_ = find("pos_emb");
  blocks_.clear();
  for (int i = 0; i < config_.layers; ++i) {
    const std::string p = "h" + std::to_string(i) + ".";
    blocks_.push_back({find(p + "ln1.g"), find(p + "ln1.b"), find(p + "attn.qkv.w"),
                       find(p + "attn.qkv.b"), find(p + "attn.proj.w"), find(p + "attn.proj.b"),
                       find(p + "ln2.g"), find(p + "ln2.b"), find(p + "mlp.in.w"),
                       find(p + "mlp.in.b"), find(p + "mlp.out.w"), find(p + "mlp.out.b")});
  }
  lnf_g_ = find("ln_f.g");
  lnf_b_ = find("ln_f.b");
  switch (config_.head) {
    case HeadVariant::kLm:
      head_w_ = find("head.w");
      head_b_ = find("head.b");
      break;
    case HeadVariant::kBtReward:
      head_w_ = find("reward.w");
      head_b_ = find("reward.b");
      break;
    case HeadVariant::kPairReward:
      head_w_ = find("pair.w");
      head_b_ = find("pair.b");
      break;
  }
}

std::vector<nd::Tensor> Model::trainable() const {
  std::vector<nd::Tensor> out;
  out.reserve(params_.size());
  for (const auto& p : params_) out.push_back(p.tensor);
  return out;
}

const nd::Tensor& Model::param(std::string_view name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.tensor;
  }
  throw std::invalid_argument("no parameter named " + std::string(name));
}

std::size_t Model::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.tensor.size();
  return n;
}

void Model::zero_grad() {
  for (auto& p : params_) p.tensor.zero_grad();
}

bool Model::same_parameters(const Model& other) const {
  if (!(config_ == other.config_) || params_.size() != other.params_.size()) return false;
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const auto a = params_[i].tensor.data();
    const auto b = other.params_[i].tensor.data();
    if (!std::equal(a.begin(), a.end(), b.begin(), b.end())) return false;
  }
  return true;
}

void Model::require_head(HeadVariant expected, std::string_view op) const {
  if (config_.head != expected) {
    throw WrongHeadVariant(std::string(op) + " requires head " + std::string(to_string(expected)) +
                           ", model has " + std::string(to_string(config_.head)));
  }
}

nd::Tensor Model::hidden_states(std::span<const TokenSeq> sequences) const {
  if (sequences.empty()) throw std::invalid_argument("hidden_states: no sequences");
  std::vector<Token> ids;
  std::vector<Token> positions;
  std::vector<std::size_t> segments;
  for (const auto& seq : sequences) {
    if (seq.empty()) throw std::invalid_argument("hidden_states: empty sequence");
    if (seq.size() > static_cast<std::size_t>(config_.context_length)) {
      throw SequenceTooLong("sequence of length " + std::to_string(seq.size()) +
                            " exceeds context length " + std::to_string(config_.context_length));
    }
    ids.insert(ids.end(), seq.begin(), seq.end());
    for (std::size_t i = 0; i < seq.size(); ++i) positions.push_back(static_cast<Token>(i));
    segments.push_back(seq.size());
  }
  auto P = [this](std::size_t i) -> const nd::Tensor& { return params_[i].tensor; };

  nd::Tensor x = nd::add(nd::embedding(P(tok_emb_), ids), nd::embedding(P(pos_emb_), positions));
  for (const BlockIndex& b : blocks_) {
    nd::Tensor h = nd::layer_norm(x, P(b.ln1_g), P(b.ln1_b));
    nd::Tensor qkv = nd::add(nd::matmul(h, P(b.w_qkv)), P(b.b_qkv));
    nd::Tensor att = nd::causal_self_attention(qkv, segments, static_cast<std::size_t>(config_.heads));
    x = nd::add(x, nd::add(nd::matmul(att, P(b.w_proj)), P(b.b_proj)));
    h = nd::layer_norm(x, P(b.ln2_g), P(b.ln2_b));
    nd::Tensor u = nd::add(nd::matmul(h, P(b.w_in)), P(b.b_in));
    u = nd::mul(u, nd::logistic(u));
    x = nd::add(x, nd::add(nd::matmul(u, P(b.w_out)), P(b.b_out)));
  }
  return nd::layer_norm(x, P(lnf_g_), P(lnf_b_));
}

nd::Tensor Model::lm_logits(const nd::Tensor& hidden_rows) const {
  require_head(HeadVariant::kLm, "lm_logits");
  return nd::add(nd::matmul(hidden_rows, params_[head_w_].tensor), params_[head_b_].tensor);
}

nd::Tensor Model::scalar_head(const nd::Tensor& hidden_rows) const {
  if (config_.head == HeadVariant::kLm) {
    throw WrongHeadVariant("scalar_head requires a reward or pair head, model has LM");
  }
  return nd::add(nd::matmul(hidden_rows, params_[head_w_].tensor), params_[head_b_].tensor);
}

}  // namespace genrm::lm
