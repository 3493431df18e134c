#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "genrm/ndtensor/tensor.hpp"

// Differentiable primitives. Each returns a new node that records its
// inputs when gradient recording is enabled and any input requires grad.
//
// Broadcasting is limited to the suffix rule: the smaller operand's shape
// must equal a trailing slice of the larger one (a single element always
// conforms).
namespace genrm::nd {

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);
Tensor neg(const Tensor& a);

/// [m, k] x [k, n] -> [m, n]
Tensor matmul(const Tensor& a, const Tensor& b);
/// Same data, new extents (element count must match).
Tensor reshape(const Tensor& a, const Shape& shape);
/// [m, n] -> [n, m]
Tensor transpose(const Tensor& a);

/// Half-open range [begin, end) along `axis` of a rank-1 or rank-2 tensor.
Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin,
             std::size_t end);
/// Rows of a rank-2 tensor, in the given order (repeats allowed).
Tensor gather_rows(const Tensor& a, std::span<const std::size_t> rows);
/// Elements by flat index into a rank-1 result.
Tensor take(const Tensor& a, std::span<const std::size_t> flat_indices);
/// Materialize `a` at `shape` using the suffix rule.
Tensor broadcast_to(const Tensor& a, const Shape& shape);
/// Concatenate rank-1 or rank-2 tensors along `axis`.
Tensor concat(std::span<const Tensor> parts, std::size_t axis);

Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor tanh(const Tensor& a);
/// 1 / (1 + e^-z)
Tensor logistic(const Tensor& a);
/// log(logistic(z)), evaluated without underflow.
Tensor log_logistic(const Tensor& a);

Tensor softmax(const Tensor& a);      // over the last axis
Tensor log_softmax(const Tensor& a);  // over the last axis

/// Normalize each row of [m, n] to zero mean and unit variance, then apply
/// per-column gain and bias of shape [n].
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias,
                  double eps = 1e-5);

/// Rows of `table` [v, d] selected by token id -> [ids.size(), d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

/// Multi-head causal attention over packed sequences.
///
/// `qkv` is [t, 3d] holding the query, key and value projections side by
/// side; `segments` lists the lengths of consecutive independent sequences
/// (summing to t). Positions attend only to earlier positions of their own
/// segment. Returns [t, d] with heads concatenated along columns.
Tensor causal_self_attention(const Tensor& qkv,
                             std::span<const std::size_t> segments,
                             std::size_t heads);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

}  // namespace genrm::nd
