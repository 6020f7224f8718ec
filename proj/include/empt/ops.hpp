#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "empt/rng.hpp"
#include "empt/tensor.hpp"

// Differentiable operations. Each op records its backward closure on the
// thread's tape when gradients are enabled and any input requires them.
// Broadcasting is limited to adding a bias over the trailing axis.

namespace empt::ops {

template <class T> Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);
template <class T> Tensor<T> scale(const Tensor<T>& a, T s);
// x[..., n] + bias[n]
template <class T> Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias);

// (m,k)·(k,n) -> (m,n)
template <class T> Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);
// (m,k)·(n,k)^T -> (m,n); used by the tied language-model projection.
template <class T> Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

template <class T> Tensor<T> sum(const Tensor<T>& x);
template <class T> Tensor<T> mean(const Tensor<T>& x);

// Rows of `table` selected by `ids`.
template <class T> Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids);
template <class T> Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows);
// Stacks 2-D tensors with equal column counts.
template <class T> Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts);
template <class T> Tensor<T> reshape(const Tensor<T>& x, Shape shape);

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps);
// Exact form x·Φ(x).
template <class T> Tensor<T> gelu(const Tensor<T>& x);
// Softmax over the trailing axis. Throws InvalidValue on non-finite input.
template <class T> Tensor<T> softmax(const Tensor<T>& x);
// Mean over rows of -log softmax(logits[r])[targets[r]].
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets);
template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::int32_t target) {
  return cross_entropy(logits, std::span<const std::int32_t>(&target, 1));
}

// Inverted dropout; identity when p == 0.
template <class T> Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng);

// Causal multi-head self-attention over projected q, k, v of shape (n, d).
// `rng` may be null when attn_dropout == 0.
template <class T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, double attn_dropout = 0.0, Rng* rng = nullptr);

}  // namespace empt::ops
