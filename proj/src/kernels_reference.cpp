#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include "empt/kernels.hpp"

namespace empt::kernels::reference {

template <class T>
void matmul_nn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[p * n + j];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <class T>
void matmul_nt(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t p = 0; p < k; ++p) acc += a[i * k + p] * b[j * k + p];
      c[i * n + j] = accumulate ? c[i * n + j] + acc : acc;
    }
  }
}

template <class T>
void matmul_tn(std::span<const T> a, std::span<const T> b, std::span<T> c, std::size_t m,
               std::size_t k, std::size_t n, bool accumulate) {
  for (std::size_t p = 0; p < k; ++p) {
    for (std::size_t j = 0; j < n; ++j) {
      T acc = 0;
      for (std::size_t i = 0; i < m; ++i) acc += a[i * k + p] * b[i * n + j];
      c[p * n + j] = accumulate ? c[p * n + j] + acc : acc;
    }
  }
}

template <class T>
void softmax_rows(std::span<const T> x, std::span<T> y, std::size_t rows, std::size_t cols) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mx = x[r * cols];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, x[r * cols + j]);
    T sum = 0;
    for (std::size_t j = 0; j < cols; ++j) sum += std::exp(x[r * cols + j] - mx);
    for (std::size_t j = 0; j < cols; ++j) y[r * cols + j] = std::exp(x[r * cols + j] - mx) / sum;
  }
}

template <class T>
void layer_norm_rows(std::span<const T> x, std::span<const T> gain, std::span<const T> bias,
                     std::span<T> y, std::span<T> mean, std::span<T> rstd, std::size_t rows,
                     std::size_t cols, T eps) {
  for (std::size_t r = 0; r < rows; ++r) {
    T mu = 0;
    for (std::size_t j = 0; j < cols; ++j) mu += x[r * cols + j];
    mu /= static_cast<T>(cols);
    T var = 0;
    for (std::size_t j = 0; j < cols; ++j) {
      const T dev = x[r * cols + j] - mu;
      var += dev * dev;
    }
    var /= static_cast<T>(cols);
    const T sd = std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      y[r * cols + j] = gain[j] * ((x[r * cols + j] - mu) / sd) + bias[j];
    }
    mean[r] = mu;
    rstd[r] = T(1) / sd;
  }
}

// Dense masked formulation: full score matrix, -inf above the diagonal.
template <class T>
void attention_forward(std::span<const T> q, std::span<const T> k, std::span<const T> v,
                       std::span<const T> keep, std::span<T> probs, std::span<T> out,
                       std::size_t n, std::size_t heads, std::size_t head_dim) {
  const std::size_t d = heads * head_dim;
  const T scale = T(1) / std::sqrt(static_cast<T>(head_dim));
  std::vector<T> scores(n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        if (j > i) {
          scores[i * n + j] = -std::numeric_limits<T>::infinity();
          continue;
        }
        T s = 0;
        for (std::size_t t = 0; t < head_dim; ++t) {
          s += q[i * d + h * head_dim + t] * k[j * d + h * head_dim + t];
        }
        scores[i * n + j] = s * scale;
      }
    }
    softmax_rows<T>(scores, probs.subspan(h * n * n, n * n), n, n);
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t t = 0; t < head_dim; ++t) {
        T acc = 0;
        for (std::size_t j = 0; j < n; ++j) {
          T w = probs[h * n * n + i * n + j];
          if (!keep.empty()) w *= keep[h * n * n + i * n + j];
          acc += w * v[j * d + h * head_dim + t];
        }
        out[i * d + h * head_dim + t] = acc;
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
  std::vector<T> dw(n * n), ds(n * n);
  for (std::size_t h = 0; h < heads; ++h) {
    const std::size_t base = h * n * n;
    auto col = [&](std::size_t row, std::size_t t) { return row * d + h * head_dim + t; };
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        const T m = keep.empty() ? T(1) : keep[base + i * n + j];
        T s = 0;
        for (std::size_t t = 0; t < head_dim; ++t) s += dout[col(i, t)] * v[col(j, t)];
        dw[i * n + j] = s * m;
        for (std::size_t t = 0; t < head_dim; ++t) {
          dv[col(j, t)] += probs[base + i * n + j] * m * dout[col(i, t)];
        }
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      T dot = 0;
      for (std::size_t j = 0; j < n; ++j) dot += probs[base + i * n + j] * dw[i * n + j];
      for (std::size_t j = 0; j < n; ++j) {
        ds[i * n + j] = probs[base + i * n + j] * (dw[i * n + j] - dot) * scale;
      }
    }
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) {
        for (std::size_t t = 0; t < head_dim; ++t) {
          dq[col(i, t)] += ds[i * n + j] * k[col(j, t)];
          dk[col(j, t)] += ds[i * n + j] * q[col(i, t)];
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

}  // namespace empt::kernels::reference
