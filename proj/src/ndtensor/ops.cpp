#include "genrm/ndtensor/ops.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <string>

namespace genrm::nd {

namespace {

using detail::Node;
using NodePtr = std::shared_ptr<Node>;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;
using StridedConst = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;
using StridedMut = Eigen::Map<RowMat, 0, Eigen::OuterStride<>>;

// Largest argument for which exp stays finite in binary64.
constexpr double kExpMax = 709.78;

Tensor make_result(Shape shape, std::vector<double> value,
                   std::vector<NodePtr> inputs,
                   std::function<void(Node&)> backward) {
  auto node = std::make_shared<Node>();
  node->shape = std::move(shape);
  node->value = std::move(value);
  if (grad_enabled()) {
    bool any = false;
    for (const auto& in : inputs) any = any || in->requires_grad;
    if (any) {
      node->requires_grad = true;
      node->inputs = std::move(inputs);
      node->backward = std::move(backward);
    }
  }
  return Tensor::wrap(std::move(node));
}

void require_rank(const Tensor& t, std::size_t rank, const char* op) {
  if (t.rank() != rank) {
    throw ShapeError(std::string(op) + ": expected rank " + std::to_string(rank) +
                     ", got shape " + to_string(t.shape()));
  }
}

bool is_suffix(const Shape& small, const Shape& big) {
  if (numel(small) == 1) return true;
  if (small.size() > big.size()) return false;
  return std::equal(small.rbegin(), small.rend(), big.rbegin());
}

// Resolves the output shape of a binary elementwise op; returns true when
// `a` is the larger operand.
bool broadcast_pair(const Tensor& a, const Tensor& b, const char* op) {
  const Shape& sa = a.shape();
  const Shape& sb = b.shape();
  if (sa == sb) return true;
  if (a.size() >= b.size() && is_suffix(sb, sa)) return true;
  if (b.size() >= a.size() && is_suffix(sa, sb)) return false;
  throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(sa) +
                   " with " + to_string(sb));
}

void accumulate_reduced(std::vector<double>& target, std::span<const double> g) {
  const std::size_t n = target.size();
  if (n == g.size()) {
    for (std::size_t i = 0; i < n; ++i) target[i] += g[i];
  } else {
    for (std::size_t i = 0; i < g.size(); ++i) target[i % n] += g[i];
  }
}

template <typename Fn>
Tensor unary(const Tensor& a, Fn fn, std::function<void(Node&)> backward) {
  std::vector<double> out(a.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = fn(in[i]);
  return make_result(a.shape(), std::move(out), {a.node()}, std::move(backward));
}

void check_finite(const Tensor& a, const char* op) {
  for (double v : a.data()) {
    if (!std::isfinite(v)) throw DomainError(std::string(op) + ": non-finite input");
  }
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  const bool a_big = broadcast_pair(a, b, "add");
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  std::vector<double> out(big.data().begin(), big.data().end());
  const auto s = small.data();
  const std::size_t ns = s.size();
  if (ns == out.size()) {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i];
  } else {
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += s[i % ns];
  }
  return make_result(big.shape(), std::move(out), {a.node(), b.node()}, [](Node& self) {
    for (auto& in : self.inputs) {
      if (in->requires_grad) accumulate_reduced(in->grad_buffer(), self.grad);
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) { return add(a, neg(b)); }

Tensor mul(const Tensor& a, const Tensor& b) {
  const bool a_big = broadcast_pair(a, b, "mul");
  const Tensor& big = a_big ? a : b;
  const Tensor& small = a_big ? b : a;
  const auto x = big.data();
  const auto s = small.data();
  const std::size_t ns = s.size();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x[i] * s[i % ns];
  return make_result(big.shape(), std::move(out), {big.node(), small.node()}, [](Node& self) {
    Node& bg = *self.inputs[0];
    Node& sm = *self.inputs[1];
    const std::size_t ns = sm.value.size();
    if (bg.requires_grad) {
      auto& g = bg.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * sm.value[i % ns];
    }
    if (sm.requires_grad) {
      auto& g = sm.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        g[i % ns] += self.grad[i] * bg.value[i];
      }
    }
  });
}

Tensor scale(const Tensor& a, double factor) {
  return unary(a, [factor](double v) { return v * factor; }, [factor](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor neg(const Tensor& a) { return scale(a, -1.0); }

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_rank(a, 2, "matmul");
  require_rank(b, 2, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), n = b.dim(1);
  if (b.dim(0) != k) {
    throw ShapeError("matmul: cannot multiply " + to_string(a.shape()) + " by " +
                     to_string(b.shape()));
  }
  std::vector<double> out(m * n);
  MutMap(out.data(), m, n).noalias() =
      ConstMap(a.data().data(), m, k) * ConstMap(b.data().data(), k, n);
  return make_result({m, n}, std::move(out), {a.node(), b.node()}, [m, k, n](Node& self) {
    Node& na = *self.inputs[0];
    Node& nb = *self.inputs[1];
    ConstMap g(self.grad.data(), m, n);
    if (na.requires_grad) {
      MutMap(na.grad_buffer().data(), m, k).noalias() +=
          g * ConstMap(nb.value.data(), k, n).transpose();
    }
    if (nb.requires_grad) {
      MutMap(nb.grad_buffer().data(), k, n).noalias() +=
          ConstMap(na.value.data(), m, k).transpose() * g;
    }
  });
}

Tensor reshape(const Tensor& a, const Shape& shape) {
  if (numel(shape) != a.size()) {
    throw ShapeError("reshape: cannot view " + to_string(a.shape()) + " as " + to_string(shape));
  }
  std::vector<double> out(a.data().begin(), a.data().end());
  return make_result(shape, std::move(out), {a.node()}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor transpose(const Tensor& a) {
  require_rank(a, 2, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<double> out(m * n);
  MutMap(out.data(), n, m) = ConstMap(a.data().data(), m, n).transpose();
  return make_result({n, m}, std::move(out), {a.node()}, [m, n](Node& self) {
    MutMap(self.inputs[0]->grad_buffer().data(), m, n) +=
        ConstMap(self.grad.data(), n, m).transpose();
  });
}

Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (a.rank() != 1 && a.rank() != 2) {
    throw ShapeError("slice: expected rank 1 or 2, got " + to_string(a.shape()));
  }
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice: range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") on axis " + std::to_string(axis) +
                     " invalid for " + to_string(a.shape()));
  }
  const std::size_t rows = a.rank() == 2 ? a.dim(0) : 1;
  const std::size_t cols = a.rank() == 2 ? a.dim(1) : a.dim(0);
  const bool by_rows = a.rank() == 2 && axis == 0;
  const std::size_t r0 = by_rows ? begin : 0, r1 = by_rows ? end : rows;
  const std::size_t c0 = by_rows ? 0 : begin, c1 = by_rows ? cols : end;
  const std::size_t oc = c1 - c0;
  std::vector<double> out((r1 - r0) * oc);
  const auto in = a.data();
  for (std::size_t r = r0; r < r1; ++r) {
    std::copy_n(in.begin() + r * cols + c0, oc, out.begin() + (r - r0) * oc);
  }
  Shape shape = a.rank() == 2 ? Shape{r1 - r0, oc} : Shape{oc};
  return make_result(std::move(shape), std::move(out), {a.node()},
                     [r0, r1, c0, oc, cols](Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t r = r0; r < r1; ++r) {
                         for (std::size_t c = 0; c < oc; ++c) {
                           g[r * cols + c0 + c] += self.grad[(r - r0) * oc + c];
                         }
                       }
                     });
}

Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows) {
  require_rank(a, 2, "gather_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  std::vector<std::size_t> idx(rows.begin(), rows.end());
  std::vector<double> out(idx.size() * n);
  const auto in = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= m) {
      throw ShapeError("gather_rows: row " + std::to_string(idx[i]) +
                       " out of range for " + to_string(a.shape()));
    }
    std::copy_n(in.begin() + idx[i] * n, n, out.begin() + i * n);
  }
  const std::size_t count = idx.size();
  return make_result({count, n}, std::move(out), {a.node()},
                     [idx = std::move(idx), n](Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         for (std::size_t c = 0; c < n; ++c) {
                           g[idx[i] * n + c] += self.grad[i * n + c];
                         }
                       }
                     });
}

Tensor take(const Tensor& a, std::span<const std::size_t> flat_indices) {
  std::vector<std::size_t> idx(flat_indices.begin(), flat_indices.end());
  std::vector<double> out(idx.size());
  const auto in = a.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= in.size()) {
      throw ShapeError("take: index " + std::to_string(idx[i]) + " out of range for " +
                       to_string(a.shape()));
    }
    out[i] = in[idx[i]];
  }
  const std::size_t count = idx.size();
  return make_result({count}, std::move(out), {a.node()}, [idx = std::move(idx)](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < idx.size(); ++i) g[idx[i]] += self.grad[i];
  });
}

Tensor broadcast_to(const Tensor& a, const Shape& shape) {
  if (!is_suffix(a.shape(), shape)) {
    throw ShapeError("broadcast_to: cannot broadcast " + to_string(a.shape()) +
                     " to " + to_string(shape));
  }
  const std::size_t n = numel(shape);
  const auto in = a.data();
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = in[i % in.size()];
  return make_result(shape, std::move(out), {a.node()}, [](Node& self) {
    accumulate_reduced(self.inputs[0]->grad_buffer(), self.grad);
  });
}

Tensor concat(std::span<const Tensor> parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const std::size_t rank = parts[0].rank();
  if ((rank != 1 && rank != 2) || axis >= rank) {
    throw ShapeError("concat: unsupported axis " + std::to_string(axis) + " for " +
                     to_string(parts[0].shape()));
  }
  std::vector<NodePtr> inputs;
  std::vector<std::size_t> widths;
  const std::size_t rows = rank == 2 ? parts[0].dim(0) : 1;
  const std::size_t cols0 = rank == 2 ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    if (p.rank() != rank) {
      throw ShapeError("concat: rank mismatch " + to_string(p.shape()) + " vs " +
                       to_string(parts[0].shape()));
    }
    if (rank == 2 && axis == 0 && p.dim(1) != cols0) {
      throw ShapeError("concat: column mismatch " + to_string(p.shape()) + " vs " +
                       to_string(parts[0].shape()));
    }
    if (rank == 2 && axis == 1 && p.dim(0) != rows) {
      throw ShapeError("concat: row mismatch " + to_string(p.shape()) + " vs " +
                       to_string(parts[0].shape()));
    }
    inputs.push_back(p.node());
    const std::size_t w = (rank == 2 && axis == 1) ? p.dim(1) : p.size();
    widths.push_back(w);
    total += w;
  }
  std::vector<double> out;
  Shape shape;
  if (rank == 2 && axis == 1) {
    out.resize(rows * total);
    std::size_t c0 = 0;
    for (std::size_t k = 0; k < parts.size(); ++k) {
      const auto in = parts[k].data();
      const std::size_t w = widths[k];
      for (std::size_t r = 0; r < rows; ++r) {
        std::copy_n(in.begin() + r * w, w, out.begin() + r * total + c0);
      }
      c0 += w;
    }
    shape = {rows, total};
  } else {
    out.reserve(total);
    for (const Tensor& p : parts) out.insert(out.end(), p.data().begin(), p.data().end());
    shape = rank == 2 ? Shape{total / cols0, cols0} : Shape{total};
  }
  const bool column_wise = rank == 2 && axis == 1;
  return make_result(std::move(shape), std::move(out), std::move(inputs),
                     [widths = std::move(widths), column_wise, rows, total](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t k = 0; k < self.inputs.size(); ++k) {
                         Node& in = *self.inputs[k];
                         const std::size_t w = widths[k];
                         if (in.requires_grad) {
                           auto& g = in.grad_buffer();
                           if (column_wise) {
                             for (std::size_t r = 0; r < rows; ++r) {
                               for (std::size_t c = 0; c < w; ++c) {
                                 g[r * w + c] += self.grad[r * total + off + c];
                               }
                             }
                           } else {
                             for (std::size_t i = 0; i < w; ++i) g[i] += self.grad[off + i];
                           }
                         }
                         off += w;
                       }
                     });
}

Tensor exp(const Tensor& a) {
  for (double v : a.data()) {
    if (!std::isfinite(v) || v > kExpMax) {
      throw DomainError("exp: argument " + std::to_string(v) + " overflows");
    }
  }
  return unary(a, [](double v) { return std::exp(v); }, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * self.value[i];
  });
}

Tensor log(const Tensor& a) {
  for (double v : a.data()) {
    if (!(v > 0.0) || !std::isfinite(v)) {
      throw DomainError("log: argument " + std::to_string(v) + " outside (0, inf)");
    }
  }
  return unary(a, [](double v) { return std::log(v); }, [](Node& self) {
    Node& in = *self.inputs[0];
    auto& g = in.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] / in.value[i];
  });
}

Tensor tanh(const Tensor& a) {
  check_finite(a, "tanh");
  return unary(a, [](double v) { return std::tanh(v); }, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i) {
      g[i] += self.grad[i] * (1.0 - self.value[i] * self.value[i]);
    }
  });
}

Tensor logistic(const Tensor& a) {
  check_finite(a, "logistic");
  return unary(
      a,
      [](double v) {
        if (v >= 0) return 1.0 / (1.0 + std::exp(-v));
        const double e = std::exp(v);
        return e / (1.0 + e);
      },
      [](Node& self) {
        auto& g = self.inputs[0]->grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          g[i] += self.grad[i] * self.value[i] * (1.0 - self.value[i]);
        }
      });
}

Tensor log_logistic(const Tensor& a) {
  check_finite(a, "log_logistic");
  return unary(
      a, [](double v) { return std::min(v, 0.0) - std::log1p(std::exp(-std::abs(v))); },
      [](Node& self) {
        Node& in = *self.inputs[0];
        auto& g = in.grad_buffer();
        for (std::size_t i = 0; i < g.size(); ++i) {
          // d/dz log sigma(z) = sigma(-z) = 1 - exp(log sigma(z))
          g[i] += self.grad[i] * -std::expm1(self.value[i]);
        }
      });
}

Tensor softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("softmax: rank-0 input");
  check_finite(a, "softmax");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  const auto in = a.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= z;
  }
  return make_result(a.shape(), std::move(out), {a.node()}, [rows, n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double dot = 0.0;
      for (std::size_t c = 0; c < n; ++c) dot += gy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (gy[c] - dot);
    }
  });
}

Tensor log_softmax(const Tensor& a) {
  if (a.rank() == 0) throw ShapeError("log_softmax: rank-0 input");
  check_finite(a, "log_softmax");
  const std::size_t n = a.shape().back();
  const std::size_t rows = a.size() / n;
  const auto in = a.data();
  std::vector<double> out(a.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = in.data() + r * n;
    double* y = out.data() + r * n;
    const double mx = *std::max_element(x, x + n);
    double z = 0.0;
    for (std::size_t c = 0; c < n; ++c) z += std::exp(x[c] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t c = 0; c < n; ++c) y[c] = x[c] - lse;
  }
  return make_result(a.shape(), std::move(out), {a.node()}, [rows, n](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * n;
      const double* gy = self.grad.data() + r * n;
      double total = 0.0;
      for (std::size_t c = 0; c < n; ++c) total += gy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += gy[c] - std::exp(y[c]) * total;
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_rank(x, 2, "layer_norm");
  const std::size_t m = x.dim(0), n = x.dim(1);
  if (gain.shape() != Shape{n} || bias.shape() != Shape{n}) {
    throw ShapeError("layer_norm: gain/bias " + to_string(gain.shape()) + "/" +
                     to_string(bias.shape()) + " do not match " + to_string(x.shape()));
  }
  const auto in = x.data();
  const auto gv = gain.data();
  const auto bv = bias.data();
  auto xhat = std::make_shared<std::vector<double>>(m * n);
  auto inv_std = std::make_shared<std::vector<double>>(m);
  std::vector<double> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    const double* row = in.data() + r * n;
    double mu = 0.0;
    for (std::size_t c = 0; c < n; ++c) mu += row[c];
    mu /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t c = 0; c < n; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(n);
    const double is = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = is;
    for (std::size_t c = 0; c < n; ++c) {
      const double h = (row[c] - mu) * is;
      (*xhat)[r * n + c] = h;
      out[r * n + c] = h * gv[c] + bv[c];
    }
  }
  return make_result({m, n}, std::move(out), {x.node(), gain.node(), bias.node()},
                     [m, n, xhat, inv_std](Node& self) {
                       Node& nx = *self.inputs[0];
                       Node& ng = *self.inputs[1];
                       Node& nb = *self.inputs[2];
                       if (ng.requires_grad || nb.requires_grad) {
                         auto& gg = ng.grad_buffer();
                         auto& gb = nb.grad_buffer();
                         for (std::size_t r = 0; r < m; ++r) {
                           for (std::size_t c = 0; c < n; ++c) {
                             gg[c] += self.grad[r * n + c] * (*xhat)[r * n + c];
                             gb[c] += self.grad[r * n + c];
                           }
                         }
                       }
                       if (!nx.requires_grad) return;
                       auto& gx = nx.grad_buffer();
                       const double inv_n = 1.0 / static_cast<double>(n);
                       for (std::size_t r = 0; r < m; ++r) {
                         double mean_d = 0.0, mean_dh = 0.0;
                         for (std::size_t c = 0; c < n; ++c) {
                           const double d = self.grad[r * n + c] * ng.value[c];
                           mean_d += d;
                           mean_dh += d * (*xhat)[r * n + c];
                         }
                         mean_d *= inv_n;
                         mean_dh *= inv_n;
                         for (std::size_t c = 0; c < n; ++c) {
                           const double d = self.grad[r * n + c] * ng.value[c];
                           gx[r * n + c] +=
                               (*inv_std)[r] * (d - mean_d - (*xhat)[r * n + c] * mean_dh);
                         }
                       }
                     });
}

Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids) {
  require_rank(table, 2, "embedding");
  const std::size_t v = table.dim(0), d = table.dim(1);
  std::vector<std::int32_t> idx(ids.begin(), ids.end());
  std::vector<double> out(idx.size() * d);
  const auto in = table.data();
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= v) {
      throw ShapeError("embedding: id " + std::to_string(idx[i]) +
                       " out of range for table " + to_string(table.shape()));
    }
    std::copy_n(in.begin() + static_cast<std::size_t>(idx[i]) * d, d, out.begin() + i * d);
  }
  const std::size_t count = idx.size();
  return make_result({count, d}, std::move(out), {table.node()},
                     [idx = std::move(idx), d](Node& self) {
                       auto& g = self.inputs[0]->grad_buffer();
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         const std::size_t base = static_cast<std::size_t>(idx[i]) * d;
                         for (std::size_t c = 0; c < d; ++c) g[base + c] += self.grad[i * d + c];
                       }
                     });
}

Tensor causal_self_attention(const Tensor& qkv, std::span<const std::size_t> segments,
                             std::size_t heads) {
  require_rank(qkv, 2, "causal_self_attention");
  const std::size_t t = qkv.dim(0), w = qkv.dim(1);
  if (heads == 0 || w % (3 * heads) != 0) {
    throw ShapeError("causal_self_attention: width " + std::to_string(w) +
                     " not divisible into 3 x " + std::to_string(heads) + " heads");
  }
  std::vector<std::size_t> segs(segments.begin(), segments.end());
  std::size_t covered = 0;
  for (std::size_t s : segs) covered += s;
  if (covered != t) {
    throw ShapeError("causal_self_attention: segments cover " + std::to_string(covered) +
                     " rows of " + to_string(qkv.shape()));
  }
  const std::size_t d = w / 3, dh = d / heads;
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(dh));
  const double* src = qkv.data().data();

  // Attention weights per (segment, head), kept for the backward pass.
  auto probs = std::make_shared<std::vector<RowMat>>();
  probs->reserve(segs.size() * heads);
  std::vector<double> out(t * d, 0.0);
  std::size_t off = 0;
  for (std::size_t len : segs) {
    for (std::size_t h = 0; h < heads; ++h) {
      StridedConst q(src + off * w + h * dh, len, dh, Eigen::OuterStride<>(w));
      StridedConst k(src + off * w + d + h * dh, len, dh, Eigen::OuterStride<>(w));
      StridedConst v(src + off * w + 2 * d + h * dh, len, dh, Eigen::OuterStride<>(w));
      RowMat p = (q * k.transpose()) * inv_sqrt;
      for (std::size_t i = 0; i < len; ++i) {
        double mx = p(i, 0);
        for (std::size_t j = 1; j <= i; ++j) mx = std::max(mx, p(i, j));
        double z = 0.0;
        for (std::size_t j = 0; j <= i; ++j) z += (p(i, j) = std::exp(p(i, j) - mx));
        for (std::size_t j = 0; j <= i; ++j) p(i, j) /= z;
        for (std::size_t j = i + 1; j < len; ++j) p(i, j) = 0.0;
      }
      StridedMut o(out.data() + off * d + h * dh, len, dh, Eigen::OuterStride<>(d));
      o.noalias() = p * v;
      probs->push_back(std::move(p));
    }
    off += len;
  }
  return make_result(
      {t, d}, std::move(out), {qkv.node()},
      [segs = std::move(segs), probs, heads, w, d, dh, inv_sqrt](Node& self) {
        Node& in = *self.inputs[0];
        const double* src = in.value.data();
        double* gsrc = in.grad_buffer().data();
        std::size_t off = 0, idx = 0;
        for (std::size_t len : segs) {
          for (std::size_t h = 0; h < heads; ++h, ++idx) {
            const RowMat& p = (*probs)[idx];
            StridedConst q(src + off * w + h * dh, len, dh, Eigen::OuterStride<>(w));
            StridedConst k(src + off * w + d + h * dh, len, dh, Eigen::OuterStride<>(w));
            StridedConst v(src + off * w + 2 * d + h * dh, len, dh, Eigen::OuterStride<>(w));
            StridedConst go(self.grad.data() + off * d + h * dh, len, dh,
                            Eigen::OuterStride<>(d));
            StridedMut gq(gsrc + off * w + h * dh, len, dh, Eigen::OuterStride<>(w));
            StridedMut gk(gsrc + off * w + d + h * dh, len, dh, Eigen::OuterStride<>(w));
            StridedMut gv(gsrc + off * w + 2 * d + h * dh, len, dh, Eigen::OuterStride<>(w));
            gv.noalias() += p.transpose() * go;
            RowMat ds = go * v.transpose();
            for (std::size_t i = 0; i < len; ++i) {
              double dot = 0.0;
              for (std::size_t j = 0; j <= i; ++j) dot += ds(i, j) * p(i, j);
              for (std::size_t j = 0; j <= i; ++j) ds(i, j) = p(i, j) * (ds(i, j) - dot) * inv_sqrt;
              for (std::size_t j = i + 1; j < len; ++j) ds(i, j) = 0.0;
            }
            gq.noalias() += ds * k;
            gk.noalias() += ds.transpose() * q;
          }
          off += len;
        }
      });
}

Tensor sum(const Tensor& a) {
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total}, {a.node()}, [](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (double& x : g) x += self.grad[0];
  });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean: empty tensor");
  const double inv = 1.0 / static_cast<double>(a.size());
  double total = 0.0;
  for (double v : a.data()) total += v;
  return make_result({}, {total * inv}, {a.node()}, [inv](Node& self) {
    auto& g = self.inputs[0]->grad_buffer();
    for (double& x : g) x += self.grad[0] * inv;
  });
}

}  // namespace genrm::nd
