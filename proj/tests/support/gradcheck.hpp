#pragma once

// Central finite-difference oracle for the autodiff ops. Test-only.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "empt/ops.hpp"
#include "empt/rng.hpp"
#include "empt/tensor.hpp"

namespace empt::testing {

using TensorD = Tensor<double>;
using LossFn = std::function<TensorD(const std::vector<TensorD>&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
};

// Relative error |a - n| / max(|a|, |n|, floor). The floor keeps entries
// whose true gradient is ~0 from dividing noise by noise.
inline double rel_error(double a, double n, double floor = 1e-6) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), floor});
}

inline GradCheckResult grad_check(const LossFn& f, std::vector<TensorD> inputs, double h = 1e-5) {
  for (auto& x : inputs) {
    x.set_requires_grad(true);
    x.zero_grad();
  }
  TensorD loss = f(inputs);
  backward(loss);
  GradCheckResult r;
  NoGradGuard ng;
  for (auto& x : inputs) {
    std::vector<double> analytic(x.numel(), 0.0);
    if (x.has_grad()) std::copy(x.grad().begin(), x.grad().end(), analytic.begin());
    auto data = x.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double orig = data[i];
      data[i] = orig + h;
      const double up = f(inputs).item();
      data[i] = orig - h;
      const double down = f(inputs).item();
      data[i] = orig;
      const double numeric = (up - down) / (2 * h);
      r.max_rel_error = std::max(r.max_rel_error, rel_error(analytic[i], numeric));
      r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic[i] - numeric));
    }
  }
  return r;
}

inline TensorD random_tensor(Shape shape, Rng& rng, double lo = -2.0, double hi = 2.0) {
  TensorD t(std::move(shape));
  for (auto& v : t.mutable_data()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Reduces a tensor-valued op to a scalar with fixed random weights so every
// output element contributes to the checked gradient.
inline TensorD weighted_sum(const TensorD& y, const TensorD& w) { return ops::sum(ops::mul(y, w)); }

}  // namespace empt::testing
