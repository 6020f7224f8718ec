#pragma once

#include <cstddef>
#include <span>

// Dense inner loops used by the autodiff ops. Every kernel has an OpenMP
// version (namespace `kernels`) and a plain serial version
// (`kernels::reference`) kept as the test oracle and benchmark baseline.
//
// Parallel loops partition output elements between threads and never split
// a reduction, so results do not depend on the thread count.
//
// All matrices are row-major. `accumulate` adds into the output instead of
// overwriting it.

namespace empt::kernels {

// c[m,n] = a[m,k] * b[k,n]
template <class T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

// c[m,n] = a[m,k] * b[n,k]^T
template <class T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

// c[k,n] = a[m,k]^T * b[m,n]
template <class T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);

template <class T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols);

// Writes per-row mean and reciprocal standard deviation for the backward pass.
template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps);

// Causal multi-head attention over q,k,v of shape [n, heads*head_dim].
// probs receives softmax weights, layout [heads, n, n], zero above the
// diagonal. `keep` is an optional [heads, n, n] dropout multiplier applied to
// the weights before they mix the values (empty span = no dropout).
template <class T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const T> keep, std::span<T> probs, std::span<T> out,
                       std::size_t n, std::size_t heads, std::size_t head_dim);

// Accumulates into dq, dk, dv.
template <class T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> keep, std::span<const T> probs,
                        std::span<const T> dout, std::span<T> dq, std::span<T> dk,
                        std::span<T> dv, std::size_t n, std::size_t heads,
                        std::size_t head_dim);

namespace reference {

template <class T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
template <class T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
template <class T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate = false);
template <class T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols);
template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps);
template <class T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const T> keep, std::span<T> probs, std::span<T> out,
                       std::size_t n, std::size_t heads, std::size_t head_dim);
template <class T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> keep, std::span<const T> probs,
                        std::span<const T> dout, std::span<T> dq, std::span<T> dk,
                        std::span<T> dv, std::size_t n, std::size_t heads,
                        std::size_t head_dim);

}  // namespace reference

int max_threads();

}  // namespace empt::kernels
