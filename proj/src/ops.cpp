#include "empt/ops.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "empt/error.hpp"
#include "empt/kernels.hpp"

namespace empt::ops {
namespace {

template <class T>
using Handle = std::shared_ptr<TensorImpl<T>>;

template <class T>
std::vector<T>& grad_of(const Handle<T>& h) {
  if (h->grad.empty()) h->grad.assign(h->data.size(), T(0));
  return h->grad;
}

template <class T, class... Ts>
bool needs_tape(const Ts&... inputs) {
  return grad_enabled() && (inputs.requires_grad() || ...);
}

template <class T>
void mark(Tensor<T>& out) {
  out.set_requires_grad(true);
}

template <class T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shapes " + shape_str(a.shape()) + " and " +
                     shape_str(b.shape()) + " differ");
  }
}

template <class T>
void require_matrix(const Tensor<T>& a, const char* op) {
  if (a.dim() != 2) throw ShapeError(std::string(op) + ": expected a matrix, got " + shape_str(a.shape()));
}

template <class T>
void require_finite(std::span<const T> xs, const char* op) {
  for (T v : xs) {
    if (!std::isfinite(v)) throw InvalidValue(std::string(op) + ": non-finite input");
  }
}

}  // namespace

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] + b.data()[i];
  if (needs_tape<T>(a, b)) {
    mark(out);
    Tape::current().record([A = a.handle(), B = b.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      for (const auto& H : {A, B}) {
        if (!H->requires_grad) continue;
        auto& g = grad_of<T>(H);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "sub");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] - b.data()[i];
  if (needs_tape<T>(a, b)) {
    mark(out);
    Tape::current().record([A = a.handle(), B = b.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      if (A->requires_grad) {
        auto& g = grad_of<T>(A);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i];
      }
      if (B->requires_grad) {
        auto& g = grad_of<T>(B);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] -= O->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  require_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * b.data()[i];
  if (needs_tape<T>(a, b)) {
    mark(out);
    Tape::current().record([A = a.handle(), B = b.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      if (A->requires_grad) {
        auto& g = grad_of<T>(A);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i] * B->data[i];
      }
      if (B->requires_grad) {
        auto& g = grad_of<T>(B);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i] * A->data[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> scale(const Tensor<T>& a, T s) {
  Tensor<T> out(a.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = a.data()[i] * s;
  if (needs_tape<T>(a)) {
    mark(out);
    Tape::current().record([A = a.handle(), O = out.handle(), s] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(A);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i] * s;
    });
  }
  return out;
}

template <class T>
Tensor<T> add_bias(const Tensor<T>& x, const Tensor<T>& bias) {
  if (bias.dim() != 1 || bias.numel() != x.cols()) {
    throw ShapeError("add_bias: bias " + shape_str(bias.shape()) + " does not match trailing axis of " +
                     shape_str(x.shape()));
  }
  const std::size_t n = x.cols();
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.data()[i] + bias.data()[i % n];
  if (needs_tape<T>(x, bias)) {
    mark(out);
    Tape::current().record([X = x.handle(), B = bias.handle(), O = out.handle(), n] {
      if (O->grad.empty()) return;
      if (X->requires_grad) {
        auto& g = grad_of<T>(X);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i];
      }
      if (B->requires_grad) {
        auto& g = grad_of<T>(B);
        for (std::size_t i = 0; i < O->grad.size(); ++i) g[i % n] += O->grad[i];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(1);
  if (b.size(0) != k) {
    throw ShapeError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  }
  Tensor<T> out({m, n});
  kernels::matmul_nn<T>(a.data(), b.data(), out.mutable_data(), m, k, n);
  if (needs_tape<T>(a, b)) {
    mark(out);
    Tape::current().record([A = a.handle(), B = b.handle(), O = out.handle(), m, k, n] {
      if (O->grad.empty()) return;
      if (A->requires_grad) {
        kernels::matmul_nt<T>(O->grad, B->data, grad_of<T>(A), m, n, k, true);
      }
      if (B->requires_grad) {
        kernels::matmul_tn<T>(A->data, O->grad, grad_of<T>(B), m, k, n, true);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  require_matrix(a, "matmul_nt");
  require_matrix(b, "matmul_nt");
  const std::size_t m = a.size(0), k = a.size(1), n = b.size(0);
  if (b.size(1) != k) {
    throw ShapeError("matmul_nt: inner dimensions differ " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()) + "^T");
  }
  Tensor<T> out({m, n});
  kernels::matmul_nt<T>(a.data(), b.data(), out.mutable_data(), m, k, n);
  if (needs_tape<T>(a, b)) {
    mark(out);
    Tape::current().record([A = a.handle(), B = b.handle(), O = out.handle(), m, k, n] {
      if (O->grad.empty()) return;
      if (A->requires_grad) {
        kernels::matmul_nn<T>(O->grad, B->data, grad_of<T>(A), m, n, k, true);
      }
      if (B->requires_grad) {
        kernels::matmul_tn<T>(O->grad, A->data, grad_of<T>(B), m, n, k, true);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
  const auto xs = x.data();
  Tensor<T> out = Tensor<T>::scalar(std::accumulate(xs.begin(), xs.end(), T(0)));
  if (needs_tape<T>(x)) {
    mark(out);
    Tape::current().record([X = x.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(X);
      for (auto& v : g) v += O->grad[0];
    });
  }
  return out;
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("mean of empty tensor");
  return scale(sum(x), T(1) / static_cast<T>(x.numel()));
}

template <class T>
Tensor<T> embedding(const Tensor<T>& table, std::span<const std::int32_t> ids) {
  require_matrix(table, "embedding");
  const std::size_t rows = table.size(0), d = table.size(1);
  for (auto id : ids) {
    if (id < 0 || static_cast<std::size_t>(id) >= rows) {
      throw IndexError("embedding: id " + std::to_string(id) + " outside table of " +
                       std::to_string(rows) + " rows");
    }
  }
  Tensor<T> out({ids.size(), d});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(table.data().begin() + ids[i] * d, d, o.begin() + i * d);
  }
  if (needs_tape<T>(table)) {
    mark(out);
    std::vector<std::int32_t> idv(ids.begin(), ids.end());
    Tape::current().record([W = table.handle(), O = out.handle(), idv = std::move(idv), d] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(W);
      for (std::size_t i = 0; i < idv.size(); ++i) {
        T* gr = g.data() + idv[i] * d;
        const T* og = O->grad.data() + i * d;
        for (std::size_t j = 0; j < d; ++j) gr[j] += og[j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> select_rows(const Tensor<T>& x, std::span<const std::size_t> rows) {
  require_matrix(x, "select_rows");
  const std::size_t d = x.size(1);
  for (auto r : rows) {
    if (r >= x.size(0)) throw IndexError("select_rows: row " + std::to_string(r) + " out of range");
  }
  Tensor<T> out({rows.size(), d});
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::copy_n(x.data().begin() + rows[i] * d, d, o.begin() + i * d);
  }
  if (needs_tape<T>(x)) {
    mark(out);
    std::vector<std::size_t> rv(rows.begin(), rows.end());
    Tape::current().record([X = x.handle(), O = out.handle(), rv = std::move(rv), d] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(X);
      for (std::size_t i = 0; i < rv.size(); ++i) {
        for (std::size_t j = 0; j < d; ++j) g[rv[i] * d + j] += O->grad[i * d + j];
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> concat_rows(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t d = parts.front().cols();
  std::size_t total = 0;
  bool tape = false;
  for (const auto& p : parts) {
    require_matrix(p, "concat_rows");
    if (p.cols() != d) throw ShapeError("concat_rows: column counts differ");
    total += p.size(0);
    tape = tape || needs_tape<T>(p);
  }
  Tensor<T> out({total, d});
  auto o = out.mutable_data();
  std::size_t off = 0;
  for (const auto& p : parts) {
    std::copy(p.data().begin(), p.data().end(), o.begin() + off);
    off += p.numel();
  }
  if (tape) {
    mark(out);
    std::vector<Handle<T>> hs;
    for (const auto& p : parts) hs.push_back(p.handle());
    Tape::current().record([hs = std::move(hs), O = out.handle()] {
      if (O->grad.empty()) return;
      std::size_t at = 0;
      for (const auto& H : hs) {
        if (H->requires_grad) {
          auto& g = grad_of<T>(H);
          for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[at + i];
        }
        at += H->data.size();
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel()) {
    throw ShapeError("reshape: " + shape_str(x.shape()) + " to " + shape_str(shape));
  }
  Tensor<T> out(std::move(shape), std::vector<T>(x.data().begin(), x.data().end()));
  if (needs_tape<T>(x)) {
    mark(out);
    Tape::current().record([X = x.handle(), O = out.handle()] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(X);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gain, const Tensor<T>& bias, T eps) {
  const std::size_t d = x.cols();
  if (x.numel() == 0 || d == 0) throw ShapeError("layer_norm: zero-length input");
  if (gain.numel() != d || bias.numel() != d) {
    throw ShapeError("layer_norm: gain/bias length must equal " + std::to_string(d));
  }
  if (!(eps > T(0))) throw InvalidValue("layer_norm: eps must be positive");
  const std::size_t rows = x.rows();
  Tensor<T> out(x.shape());
  std::vector<T> mu(rows), rstd(rows);
  kernels::layer_norm_rows<T>(x.data(), gain.data(), bias.data(), out.mutable_data(), mu, rstd,
                              rows, d, eps);
  if (needs_tape<T>(x, gain, bias)) {
    mark(out);
    Tape::current().record([X = x.handle(), G = gain.handle(), B = bias.handle(), O = out.handle(),
                            mu = std::move(mu), rstd = std::move(rstd), rows, d] {
      if (O->grad.empty()) return;
      std::vector<T> xhat(d), dxhat(d);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* xr = X->data.data() + r * d;
        const T* gr = O->grad.data() + r * d;
        T mean_dxhat = 0, mean_dxhat_xhat = 0;
        for (std::size_t j = 0; j < d; ++j) {
          xhat[j] = (xr[j] - mu[r]) * rstd[r];
          dxhat[j] = gr[j] * G->data[j];
          mean_dxhat += dxhat[j];
          mean_dxhat_xhat += dxhat[j] * xhat[j];
        }
        mean_dxhat /= static_cast<T>(d);
        mean_dxhat_xhat /= static_cast<T>(d);
        if (X->requires_grad) {
          T* gx = grad_of<T>(X).data() + r * d;
          for (std::size_t j = 0; j < d; ++j) {
            gx[j] += rstd[r] * (dxhat[j] - mean_dxhat - xhat[j] * mean_dxhat_xhat);
          }
        }
        if (G->requires_grad) {
          auto& gg = grad_of<T>(G);
          for (std::size_t j = 0; j < d; ++j) gg[j] += gr[j] * xhat[j];
        }
        if (B->requires_grad) {
          auto& gb = grad_of<T>(B);
          for (std::size_t j = 0; j < d; ++j) gb[j] += gr[j];
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
  const T inv_sqrt2 = T(1) / std::sqrt(T(2));
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) {
    const T v = x.data()[i];
    o[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  if (needs_tape<T>(x)) {
    mark(out);
    Tape::current().record([X = x.handle(), O = out.handle(), inv_sqrt2] {
      if (O->grad.empty()) return;
      const T inv_sqrt_2pi = T(0.3989422804014327);
      auto& g = grad_of<T>(X);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const T v = X->data[i];
        const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
        const T pdf = inv_sqrt_2pi * std::exp(T(-0.5) * v * v);
        g[i] += O->grad[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.numel() == 0) throw ShapeError("softmax: empty input");
  require_finite<T>(x.data(), "softmax");
  const std::size_t cols = x.cols(), rows = x.rows();
  Tensor<T> out(x.shape());
  kernels::softmax_rows<T>(x.data(), out.mutable_data(), rows, cols);
  if (needs_tape<T>(x)) {
    mark(out);
    Tape::current().record([X = x.handle(), O = out.handle(), rows, cols] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(X);
      for (std::size_t r = 0; r < rows; ++r) {
        const T* y = O->data.data() + r * cols;
        const T* gy = O->grad.data() + r * cols;
        T dot = 0;
        for (std::size_t j = 0; j < cols; ++j) dot += y[j] * gy[j];
        for (std::size_t j = 0; j < cols; ++j) g[r * cols + j] += y[j] * (gy[j] - dot);
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> cross_entropy(const Tensor<T>& logits, std::span<const std::int32_t> targets) {
  const std::size_t cols = logits.cols(), rows = logits.rows();
  if (rows != targets.size()) {
    throw ShapeError("cross_entropy: " + std::to_string(rows) + " rows but " +
                     std::to_string(targets.size()) + " targets");
  }
  if (rows == 0) throw ShapeError("cross_entropy: empty input");
  for (auto t : targets) {
    if (t < 0 || static_cast<std::size_t>(t) >= cols) {
      throw IndexError("cross_entropy: target " + std::to_string(t) + " outside [0, " +
                       std::to_string(cols) + ")");
    }
  }
  require_finite<T>(logits.data(), "cross_entropy");
  std::vector<T> probs(logits.numel());
  kernels::softmax_rows<T>(logits.data(), probs, rows, cols);
  T loss = 0;
  for (std::size_t r = 0; r < rows; ++r) {
    // log-sum-exp form keeps the loss finite when the target probability underflows
    const T* x = logits.data().data() + r * cols;
    const T mx = *std::max_element(x, x + cols);
    T s = 0;
    for (std::size_t j = 0; j < cols; ++j) s += std::exp(x[j] - mx);
    loss += (mx + std::log(s)) - x[targets[r]];
  }
  loss /= static_cast<T>(rows);
  Tensor<T> out = Tensor<T>::scalar(loss);
  if (needs_tape<T>(logits)) {
    mark(out);
    std::vector<std::int32_t> tv(targets.begin(), targets.end());
    Tape::current().record([X = logits.handle(), O = out.handle(), probs = std::move(probs),
                            tv = std::move(tv), rows, cols] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(X);
      const T s = O->grad[0] / static_cast<T>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t j = 0; j < cols; ++j) {
          const T onehot = static_cast<std::size_t>(tv[r]) == j ? T(1) : T(0);
          g[r * cols + j] += s * (probs[r * cols + j] - onehot);
        }
      }
    });
  }
  return out;
}

template <class T>
Tensor<T> dropout(const Tensor<T>& x, double p, Rng& rng) {
  if (p < 0.0 || p >= 1.0) throw InvalidValue("dropout: p must be in [0, 1)");
  if (p == 0.0) return x;
  const T keep_scale = static_cast<T>(1.0 / (1.0 - p));
  std::vector<T> mask(x.numel());
  for (auto& m : mask) m = rng.uniform() < p ? T(0) : keep_scale;
  Tensor<T> out(x.shape());
  auto o = out.mutable_data();
  for (std::size_t i = 0; i < o.size(); ++i) o[i] = x.data()[i] * mask[i];
  if (needs_tape<T>(x)) {
    mark(out);
    Tape::current().record([X = x.handle(), O = out.handle(), mask = std::move(mask)] {
      if (O->grad.empty()) return;
      auto& g = grad_of<T>(X);
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += O->grad[i] * mask[i];
    });
  }
  return out;
}

template <class T>
Tensor<T> causal_attention(const Tensor<T>& q, const Tensor<T>& k, const Tensor<T>& v,
                           std::size_t heads, double attn_dropout, Rng* rng) {
  require_matrix(q, "causal_attention");
  require_same_shape(q, k, "causal_attention");
  require_same_shape(q, v, "causal_attention");
  const std::size_t n = q.size(0), d = q.size(1);
  if (heads == 0 || d % heads != 0) {
    throw ShapeError("causal_attention: width " + std::to_string(d) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  const std::size_t hd = d / heads;
  std::vector<T> keep;
  if (attn_dropout > 0.0) {
    if (rng == nullptr) throw InvalidValue("causal_attention: dropout needs an rng");
    const T ks = static_cast<T>(1.0 / (1.0 - attn_dropout));
    keep.resize(heads * n * n);
    for (auto& m : keep) m = rng->uniform() < attn_dropout ? T(0) : ks;
  }
  std::vector<T> probs(heads * n * n);
  Tensor<T> out({n, d});
  kernels::attention_forward<T>(q.data(), k.data(), v.data(), keep, probs, out.mutable_data(), n,
                                heads, hd);
  if (needs_tape<T>(q, k, v)) {
    mark(out);
    Tape::current().record([Q = q.handle(), K = k.handle(), V = v.handle(), O = out.handle(),
                            probs = std::move(probs), keep = std::move(keep), n, heads, hd] {
      if (O->grad.empty()) return;
      // Inputs that do not require grad still get scratch buffers here.
      std::vector<T> dq(Q->data.size()), dk(K->data.size()), dv(V->data.size());
      kernels::attention_backward<T>(Q->data, K->data, V->data, keep, probs, O->grad, dq, dk, dv,
                                     n, heads, hd);
      auto acc = [](const Handle<T>& H, const std::vector<T>& d) {
        if (!H->requires_grad) return;
        auto& g = grad_of<T>(H);
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += d[i];
      };
      acc(Q, dq);
      acc(K, dk);
      acc(V, dv);
    });
  }
  return out;
}

#define EMPT_OPS_INSTANTIATE(T)                                                              \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> sub(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                \
  template Tensor<T> scale(const Tensor<T>&, T);                                             \
  template Tensor<T> add_bias(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                             \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                          \
  template Tensor<T> sum(const Tensor<T>&);                                                  \
  template Tensor<T> mean(const Tensor<T>&);                                                 \
  template Tensor<T> embedding(const Tensor<T>&, std::span<const std::int32_t>);             \
  template Tensor<T> select_rows(const Tensor<T>&, std::span<const std::size_t>);            \
  template Tensor<T> concat_rows(const std::vector<Tensor<T>>&);                             \
  template Tensor<T> reshape(const Tensor<T>&, Shape);                                       \
  template Tensor<T> layer_norm(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T);    \
  template Tensor<T> gelu(const Tensor<T>&);                                                 \
  template Tensor<T> softmax(const Tensor<T>&);                                              \
  template Tensor<T> cross_entropy(const Tensor<T>&, std::span<const std::int32_t>);         \
  template Tensor<T> dropout(const Tensor<T>&, double, Rng&);                                \
  template Tensor<T> causal_attention(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,  \
                                      std::size_t, double, Rng*);

EMPT_OPS_INSTANTIATE(float)
EMPT_OPS_INSTANTIATE(double)

}  // namespace empt::ops
