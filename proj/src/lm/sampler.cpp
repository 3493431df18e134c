#include "genrm/lm/sampler.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace genrm::lm {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using StridedConst = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;
using RowVec = Eigen::Map<const Eigen::RowVectorXd>;

ConstMap as_matrix(const nd::Tensor& t) {
  return ConstMap(t.data().data(), static_cast<Eigen::Index>(t.dim(0)),
                  static_cast<Eigen::Index>(t.dim(1)));
}

RowVec as_row(const nd::Tensor& t) {
  return RowVec(t.data().data(), static_cast<Eigen::Index>(t.size()));
}

void layer_norm_rows(RowMat& x, const nd::Tensor& gain, const nd::Tensor& bias, RowMat& out) {
  const auto n = x.cols();
  out.resize(x.rows(), n);
  const double* g = gain.data().data();
  const double* b = bias.data().data();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    double mu = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) mu += x(r, c);
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) var += (x(r, c) - mu) * (x(r, c) - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + 1e-5);
    for (Eigen::Index c = 0; c < n; ++c) out(r, c) = (x(r, c) - mu) * is * g[c] + b[c];
  }
}

double logistic(double v) {
  if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
  const double e = std::exp(v);
  return e / (1.0 + e);
}

double unit_uniform(std::mt19937_64& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

double log_softmax_at(std::span<const double> logits, Token token) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  return logits[static_cast<std::size_t>(token)] - mx - std::log(z);
}

}  // namespace

std::vector<double> nucleus_distribution(std::span<const double> logits, double temperature,
                                         double top_p) {
  if (!(temperature > 0.0)) throw std::invalid_argument("temperature must be positive");
  if (!(top_p > 0.0) || top_p > 1.0) throw std::invalid_argument("top_p must lie in (0, 1]");
  const std::size_t n = logits.size();
  std::vector<double> p(n);
  double mx = -std::numeric_limits<double>::infinity();
  for (double l : logits) mx = std::max(mx, l / temperature);
  double z = 0.0;
  for (std::size_t i = 0; i < n; ++i) z += (p[i] = std::exp(logits[i] / temperature - mx));
  for (double& x : p) x /= z;
  if (top_p >= 1.0) return p;

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&p](std::size_t a, std::size_t b) { return p[a] > p[b]; });
  double cumulative = 0.0;
  std::size_t keep = 0;
  while (keep < n && cumulative < top_p) cumulative += p[order[keep++]];
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < keep; ++i) out[order[i]] = p[order[i]] / cumulative;
  return out;
}

Token draw_token(std::span<const double> probs, double u) {
  double cumulative = 0.0;
  std::size_t last = 0;
  for (std::size_t i = 0; i < probs.size(); ++i) {
    if (probs[i] <= 0.0) continue;
    last = i;
    cumulative += probs[i];
    if (u < cumulative) return static_cast<Token>(i);
  }
  return static_cast<Token>(last);
}

IncrementalDecoder::IncrementalDecoder(const Model& model, std::size_t streams)
    : model_(model),
      d_(static_cast<std::size_t>(model.config().embed_dim)),
      heads_(static_cast<std::size_t>(model.config().heads)),
      vocab_(static_cast<std::size_t>(model.config().vocab_size)),
      context_(static_cast<std::size_t>(model.config().context_length)),
      caches_(streams) {
  model.require_head(HeadVariant::kLm, "IncrementalDecoder");
  const auto layers = static_cast<std::size_t>(model.config().layers);
  for (Cache& c : caches_) {
    c.keys.assign(layers, std::vector<double>(context_ * d_, 0.0));
    c.values.assign(layers, std::vector<double>(context_ * d_, 0.0));
  }
}

void IncrementalDecoder::fork(std::size_t from, std::size_t to) {
  if (from == to) return;
  const Cache& src = caches_[from];
  Cache& dst = caches_[to];
  const std::size_t used = src.length * d_;
  for (std::size_t l = 0; l < src.keys.size(); ++l) {
    std::copy_n(src.keys[l].begin(), used, dst.keys[l].begin());
    std::copy_n(src.values[l].begin(), used, dst.values[l].begin());
  }
  dst.length = src.length;
}

std::vector<double> IncrementalDecoder::extend(std::size_t stream, std::span<const Token> tokens) {
  const Chunk chunk{stream, tokens.size()};
  return run(std::span(&chunk, 1), tokens);
}

std::vector<double> IncrementalDecoder::step(std::span<const std::size_t> streams,
                                             std::span<const Token> tokens) {
  std::vector<Chunk> chunks;
  chunks.reserve(streams.size());
  for (std::size_t s : streams) chunks.push_back({s, 1});
  return run(chunks, tokens);
}

std::vector<double> IncrementalDecoder::run(std::span<const Chunk> chunks,
                                            std::span<const Token> tokens) {
  const auto R = static_cast<Eigen::Index>(tokens.size());
  const auto D = static_cast<Eigen::Index>(d_);
  const std::size_t dh = d_ / heads_;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  for (const Chunk& c : chunks) {
    if (caches_[c.stream].length + c.rows > context_) {
      throw SequenceTooLong("decoder stream would exceed context length " +
                            std::to_string(context_));
    }
  }

  const double* tok = model_.param("tok_emb").data().data();
  const double* pos = model_.param("pos_emb").data().data();
  RowMat x(R, D);
  {
    Eigen::Index r = 0;
    for (const Chunk& c : chunks) {
      for (std::size_t i = 0; i < c.rows; ++i, ++r) {
        const Token t = tokens[static_cast<std::size_t>(r)];
        if (t < 0 || static_cast<std::size_t>(t) >= vocab_) {
          throw std::invalid_argument("token id " + std::to_string(t) + " out of range");
        }
        const std::size_t p = caches_[c.stream].length + i;
        for (Eigen::Index k = 0; k < D; ++k) {
          x(r, k) = tok[static_cast<std::size_t>(t) * d_ + k] + pos[p * d_ + k];
        }
      }
    }
  }

  RowMat h, qkv, att(R, D), u;
  for (int layer = 0; layer < model_.config().layers; ++layer) {
    const std::string p = "h" + std::to_string(layer) + ".";
    layer_norm_rows(x, model_.param(p + "ln1.g"), model_.param(p + "ln1.b"), h);
    qkv.noalias() = h * as_matrix(model_.param(p + "attn.qkv.w"));
    qkv.rowwise() += as_row(model_.param(p + "attn.qkv.b"));

    Eigen::Index r0 = 0;
    for (const Chunk& c : chunks) {
      Cache& cache = caches_[c.stream];
      auto& keys = cache.keys[static_cast<std::size_t>(layer)];
      auto& values = cache.values[static_cast<std::size_t>(layer)];
      const auto rows = static_cast<Eigen::Index>(c.rows);
      for (Eigen::Index i = 0; i < rows; ++i) {
        const std::size_t at = (cache.length + static_cast<std::size_t>(i)) * d_;
        for (Eigen::Index k = 0; k < D; ++k) {
          keys[at + k] = qkv(r0 + i, D + k);
          values[at + k] = qkv(r0 + i, 2 * D + k);
        }
      }
      const auto total = static_cast<Eigen::Index>(cache.length + c.rows);
      for (std::size_t hd = 0; hd < heads_; ++hd) {
        const auto off = static_cast<Eigen::Index>(hd * dh);
        const auto edh = static_cast<Eigen::Index>(dh);
        StridedConst q(qkv.data() + r0 * qkv.cols() + off, rows, edh,
                       Eigen::OuterStride<>(qkv.cols()));
        StridedConst k(keys.data() + off, total, edh, Eigen::OuterStride<>(D));
        StridedConst v(values.data() + off, total, edh, Eigen::OuterStride<>(D));
        RowMat s = (q * k.transpose()) * inv_sqrt;
        for (Eigen::Index i = 0; i < rows; ++i) {
          const Eigen::Index last = static_cast<Eigen::Index>(cache.length) + i;
          double mx = s(i, 0);
          for (Eigen::Index j = 1; j <= last; ++j) mx = std::max(mx, s(i, j));
          double z = 0.0;
          for (Eigen::Index j = 0; j <= last; ++j) z += (s(i, j) = std::exp(s(i, j) - mx));
          for (Eigen::Index j = 0; j <= last; ++j) s(i, j) /= z;
          for (Eigen::Index j = last + 1; j < total; ++j) s(i, j) = 0.0;
        }
        StridedMut o(att.data() + r0 * D + off, rows, edh, Eigen::OuterStride<>(D));
        o.noalias() = s * v;
      }
      r0 += rows;
    }

    x.noalias() += att * as_matrix(model_.param(p + "attn.proj.w"));
    x.rowwise() += as_row(model_.param(p + "attn.proj.b"));
    layer_norm_rows(x, model_.param(p + "ln2.g"), model_.param(p + "ln2.b"), h);
    u.noalias() = h * as_matrix(model_.param(p + "mlp.in.w"));
    u.rowwise() += as_row(model_.param(p + "mlp.in.b"));
    for (Eigen::Index i = 0; i < u.size(); ++i) u.data()[i] *= logistic(u.data()[i]);
    x.noalias() += u * as_matrix(model_.param(p + "mlp.out.w"));
    x.rowwise() += as_row(model_.param(p + "mlp.out.b"));
  }
  for (const Chunk& c : chunks) caches_[c.stream].length += c.rows;

  layer_norm_rows(x, model_.param("ln_f.g"), model_.param("ln_f.b"), h);
  RowMat logits = h * as_matrix(model_.param("head.w"));
  logits.rowwise() += as_row(model_.param("head.b"));
  return {logits.data(), logits.data() + logits.size()};
}

std::vector<SampledSequence> sample_batch(const Model& model, std::span<const Token> prompt,
                                          std::span<const std::uint64_t> seeds,
                                          const SamplingParams& params) {
  model.require_head(HeadVariant::kLm, "sample_batch");
  if (prompt.empty()) throw std::invalid_argument("sample_batch: empty prompt");
  const std::size_t n = seeds.size();
  const std::size_t vocab = static_cast<std::size_t>(model.config().vocab_size);
  const std::size_t context = static_cast<std::size_t>(model.config().context_length);
  std::vector<SampledSequence> out(n);
  if (n == 0 || params.max_new_tokens == 0) return out;

  IncrementalDecoder decoder(model, n);
  std::vector<double> prefix = decoder.extend(0, prompt);
  for (std::size_t s = 1; s < n; ++s) decoder.fork(0, s);
  const std::vector<double> first(prefix.end() - static_cast<std::ptrdiff_t>(vocab), prefix.end());

  std::vector<std::mt19937_64> rngs;
  rngs.reserve(n);
  for (std::uint64_t seed : seeds) rngs.emplace_back(seed);

  std::vector<std::size_t> active(n);
  std::iota(active.begin(), active.end(), 0);
  std::vector<double> logits;  // rows aligned with `active`
  for (std::size_t s = 0; s < n; ++s) logits.insert(logits.end(), first.begin(), first.end());

  while (!active.empty()) {
    std::vector<std::size_t> next_active;
    std::vector<Token> feed;
    for (std::size_t a = 0; a < active.size(); ++a) {
      const std::size_t s = active[a];
      const std::span<const double> row(logits.data() + a * vocab, vocab);
      const auto probs = nucleus_distribution(row, params.temperature, params.top_p);
      const Token t = draw_token(probs, unit_uniform(rngs[s]));
      SampledSequence& seq = out[s];
      seq.tokens.push_back(t);
      seq.logprob += log_softmax_at(row, t);
      seq.last_logits.assign(row.begin(), row.end());
      const bool stop = std::find(params.stop_tokens.begin(), params.stop_tokens.end(), t) !=
                        params.stop_tokens.end();
      if (stop) {
        seq.stopped = true;
        continue;
      }
      if (seq.tokens.size() >= params.max_new_tokens ||
          prompt.size() + seq.tokens.size() >= context) {
        continue;
      }
      next_active.push_back(s);
      feed.push_back(t);
    }
    active = std::move(next_active);
    if (!active.empty()) logits = decoder.step(active, feed);
  }
  return out;
}

SampledSequence sample_sequence(const Model& model, std::span<const Token> prompt,
                                const SamplingParams& params, std::uint64_t seed) {
  return std::move(sample_batch(model, prompt, std::span(&seed, 1), params).front());
}

}  // namespace genrm::lm
