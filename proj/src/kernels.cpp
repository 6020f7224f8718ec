#include "empt/kernels.hpp"

#include <omp.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

namespace empt::kernels {
namespace {

// Below this many multiply-adds a parallel region costs more than it saves.
constexpr std::size_t kParallelWork = 1 << 15;

}  // namespace

int max_threads() { return omp_get_max_threads(); }

template <class T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::size_t i = 0; i < m; ++i) {
    T* crow = C + i * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    const T* arow = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const T aip = arow[p];
      const T* brow = B + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <class T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  // Transposing b turns the strided dot products into contiguous row updates.
  std::vector<T> bt(k * n);
  const T* B = b.data();
#pragma omp parallel for schedule(static) if (k * n > kParallelWork)
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) bt[p * n + j] = B[j * k + p];
  }
  matmul_nn<T>(a, bt, c, m, k, n, accumulate);
}

template <class T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  const T* A = a.data();
  const T* B = b.data();
  T* C = c.data();
#pragma omp parallel for schedule(static) if (m * k * n > kParallelWork)
  for (std::size_t p = 0; p < k; ++p) {
    T* crow = C + p * n;
    if (!accumulate) std::fill(crow, crow + n, T(0));
    for (std::size_t i = 0; i < m; ++i) {
      const T aip = A[i * k + p];
      if (aip == T(0)) continue;
      const T* brow = B + i * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

template <class T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    T* yr = y.data() + r * cols;
    const T mx = *std::max_element(xr, xr + cols);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      sum += yr[j];
    }
    const T inv = T(1) / sum;
    for (std::size_t j = 0; j < cols; ++j) yr[j] *= inv;
  }
}

template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps) {
#pragma omp parallel for schedule(static) if (rows * cols > kParallelWork)
  for (std::size_t r = 0; r < rows; ++r) {
    const T* xr = x.data() + r * cols;
    T* yr = y.data() + r * cols;
    T mu = 0;
    for (std::size_t j = 0; j < cols; ++j) mu += xr[j];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<T>(cols);
    const T rs = T(1) / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) yr[j] = (xr[j] - mu) * rs * gain[j] + bias[j];
    mean[r] = mu;
    rstd[r] = rs;
  }
}

template <class T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const T> keep, std::span<T> probs, std::span<T> out,
                       std::size_t n, std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const bool dropout = !keep.empty();
#pragma omp parallel for schedule(static) if (heads * n * n * head_dim > kParallelWork)
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    T* P = probs.data() + h * n * n;
    for (std::size_t i = 0; i < n; ++i) {
      T* prow = P + i * n;
      const T* qi = q.data() + i * d + off;
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t j = 0; j <= i; ++j) {
        const T* kj = k.data() + j * d + off;
        T s = 0;
        for (std::size_t t = 0; t < head_dim; ++t) s += qi[t] * kj[t];
        prow[j] = s * scale;
        mx = std::max(mx, prow[j]);
      }
      T sum = 0;
      for (std::size_t j = 0; j <= i; ++j) {
        prow[j] = std::exp(prow[j] - mx);
        sum += prow[j];
      }
      const T inv = T(1) / sum;
      for (std::size_t j = 0; j <= i; ++j) prow[j] *= inv;
      std::fill(prow + i + 1, prow + n, T(0));

      T* oi = out.data() + i * d + off;
      std::fill(oi, oi + head_dim, T(0));
      const T* krow = dropout ? keep.data() + h * n * n + i * n : nullptr;
      for (std::size_t j = 0; j <= i; ++j) {
        const T w = dropout ? prow[j] * krow[j] : prow[j];
        const T* vj = v.data() + j * d + off;
        for (std::size_t t = 0; t < head_dim; ++t) oi[t] += w * vj[t];
      }
    }
  }
}

template <class T>
void attention_backward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                        std::span<const T> keep, std::span<const T> probs,
                        std::span<const T> dout, std::span<T> dq, std::span<T> dk,
                        std::span<T> dv, std::size_t n, std::size_t heads,
                        std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  const bool dropout = !keep.empty();
#pragma omp parallel for schedule(static) if (heads * n * n * head_dim > kParallelWork)
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t off = h * head_dim;
    const T* P = probs.data() + h * n * n;
    std::vector<T> dp(n);
    for (std::size_t i = 0; i < n; ++i) {
      const T* prow = P + i * n;
      const T* krow = dropout ? keep.data() + h * n * n + i * n : nullptr;
      const T* doi = dout.data() + i * d + off;
      // d(weights) and d(values)
      for (std::size_t j = 0; j <= i; ++j) {
        const T* vj = v.data() + j * d + off;
        T s = 0;
        for (std::size_t t = 0; t < head_dim; ++t) s += doi[t] * vj[t];
        const T m = dropout ? krow[j] : T(1);
        dp[j] = s * m;
        const T w = prow[j] * m;
        T* dvj = dv.data() + j * d + off;
        for (std::size_t t = 0; t < head_dim; ++t) dvj[t] += w * doi[t];
      }
      // softmax backward
      T dot = 0;
      for (std::size_t j = 0; j <= i; ++j) dot += prow[j] * dp[j];
      const T* qi = q.data() + i * d + off;
      T* dqi = dq.data() + i * d + off;
      for (std::size_t j = 0; j <= i; ++j) {
        const T ds = prow[j] * (dp[j] - dot) * scale;
        if (ds == T(0)) continue;
        const T* kj = k.data() + j * d + off;
        T* dkj = dk.data() + j * d + off;
        for (std::size_t t = 0; t < head_dim; ++t) {
          dqi[t] += ds * kj[t];
          dkj[t] += ds * qi[t];
        }
      }
    }
  }
}

#define EMPT_INSTANTIATE(T)                                                                    \
  template void matmul_nn<T>(std::span<const T>, std::span<const T>, std::span<T>,             \
                             std::size_t, std::size_t, std::size_t, bool);                     \
  template void matmul_nt<T>(std::span<const T>, std::span<const T>, std::span<T>,             \
                             std::size_t, std::size_t, std::size_t, bool);                     \
  template void matmul_tn<T>(std::span<const T>, std::span<const T>, std::span<T>,             \
                             std::size_t, std::size_t, std::size_t, bool);                     \
  template void softmax_rows<T>(std::span<const T>, std::span<T>, std::size_t, std::size_t);   \
  template void layer_norm_rows<T>(std::span<const T>, std::span<const T>, std::span<const T>, \
                                   std::span<T>, std::span<T>, std::span<T>, std::size_t,      \
                                   std::size_t, T);                                            \
  template void attention_forward<T>(std::span<const T>, std::span<const T>,                   \
                                     std::span<const T>, std::span<const T>, std::span<T>,     \
                                     std::span<T>, std::size_t, std::size_t, std::size_t);     \
  template void attention_backward<T>(std::span<const T>, std::span<const T>,                  \
                                      std::span<const T>, std::span<const T>,                  \
                                      std::span<const T>, std::span<const T>, std::span<T>,    \
                                      std::span<T>, std::span<T>, std::size_t, std::size_t,    \
                                      std::size_t);

EMPT_INSTANTIATE(float)
EMPT_INSTANTIATE(double)

}  // namespace empt::kernels
