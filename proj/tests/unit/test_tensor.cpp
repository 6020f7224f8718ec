#include <cmath>
#include <limits>

#include "doctest.h"
#include "empt/error.hpp"
#include "empt/ops.hpp"
#include "../support/gradcheck.hpp"

using namespace empt;
using empt::testing::TensorD;

namespace {

// Composite Simpson integration of the standard normal density on [-12, x].
double normal_cdf_quadrature(double x) {
  const int n = 200000;
  const double a = -12.0, h = (x - a) / n;
  auto pdf = [](double t) { return std::exp(-0.5 * t * t) / std::sqrt(2.0 * M_PI); };
  double s = pdf(a) + pdf(x);
  for (int i = 1; i < n; ++i) s += pdf(a + i * h) * (i % 2 ? 4.0 : 2.0);
  return s * h / 3.0;
}

}  // namespace

TEST_CASE("softmax analytic cases") {
  auto y = ops::softmax(TensorD({3}, {0, 0, 0}));
  for (double v : y.data()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-12));

  y = ops::softmax(TensorD({2}, {0, std::log(2.0)}));
  CHECK(y.at(0) == doctest::Approx(1.0 / 3).epsilon(1e-12));
  CHECK(y.at(1) == doctest::Approx(2.0 / 3).epsilon(1e-12));

  y = ops::softmax(TensorD({2}, {1000, 0}));
  CHECK(std::isfinite(y.at(0)));
  CHECK(y.at(0) == doctest::Approx(1.0));
  CHECK(y.at(1) < 1e-300);

  y = ops::softmax(TensorD({2}, {1e4, -1e4}));
  CHECK(std::isfinite(y.at(0)));
}

TEST_CASE("softmax rejects non-finite input") {
  CHECK_THROWS_AS(ops::softmax(TensorD({2}, {0, std::numeric_limits<double>::quiet_NaN()})),
                  InvalidValue);
  CHECK_THROWS_AS(ops::softmax(TensorD({2}, {0, std::numeric_limits<double>::infinity()})),
                  InvalidValue);
}

TEST_CASE("softmax rows sum to one and ignore a constant shift") {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    auto x = testing::random_tensor({4, 9}, rng, -30, 30);
    auto shifted = x.clone();
    const double c = 100.0 * rng.uniform() - 50.0;
    for (auto& v : shifted.mutable_data()) v += c;
    auto a = ops::softmax(x), b = ops::softmax(shifted);
    for (std::size_t r = 0; r < 4; ++r) {
      double s = 0;
      for (std::size_t j = 0; j < 9; ++j) {
        s += a.at(r, j);
        CHECK(std::abs(a.at(r, j) - b.at(r, j)) < 1e-9);
      }
      CHECK(std::abs(s - 1.0) < 1e-9);
    }
  }
}

TEST_CASE("cross entropy analytic cases") {
  CHECK(ops::cross_entropy(TensorD::zeros({100}), 37).item() ==
        doctest::Approx(std::log(100.0)).epsilon(1e-12));
  CHECK(ops::cross_entropy(TensorD({3}, {0, 200, 0}), 1).item() == doctest::Approx(0.0));
  CHECK(ops::cross_entropy(TensorD({2}, {0, std::log(3.0)}), 0).item() ==
        doctest::Approx(std::log(4.0)).epsilon(1e-12));
  CHECK_THROWS_AS(ops::cross_entropy(TensorD({2}, {0, 0}), 2), IndexError);
  CHECK_THROWS_AS(ops::cross_entropy(TensorD({2}, {0, 0}), -1), IndexError);
}

TEST_CASE("layer norm analytic cases") {
  const double tiny = 1e-12;
  auto y = ops::layer_norm(TensorD({3}, {1, 1, 1}), TensorD::full({3}, 1), TensorD::zeros({3}), 1e-5);
  for (double v : y.data()) CHECK(v == doctest::Approx(0.0));

  y = ops::layer_norm(TensorD({2}, {-1, 1}), TensorD::full({2}, 1), TensorD::zeros({2}), tiny);
  CHECK(y.at(0) == doctest::Approx(-1.0));
  CHECK(y.at(1) == doctest::Approx(1.0));

  y = ops::layer_norm(TensorD({2}, {0, 2}), TensorD::full({2}, 2), TensorD::full({2}, 1), tiny);
  CHECK(y.at(0) == doctest::Approx(-1.0));
  CHECK(y.at(1) == doctest::Approx(3.0));

  CHECK_THROWS_AS(ops::layer_norm(TensorD({0}), TensorD({0}), TensorD({0}), 1e-5), ShapeError);
  CHECK_THROWS_AS(ops::layer_norm(TensorD({2}), TensorD({3}), TensorD({2}), 1e-5), ShapeError);
}

TEST_CASE("layer norm output is standardized before the affine transform") {
  Rng rng(11);
  auto x = testing::random_tensor({5, 16}, rng, -3, 7);
  auto y = ops::layer_norm(x, TensorD::full({16}, 1), TensorD::zeros({16}), 1e-12);
  for (std::size_t r = 0; r < 5; ++r) {
    double m = 0, v = 0;
    for (std::size_t j = 0; j < 16; ++j) m += y.at(r, j);
    m /= 16;
    for (std::size_t j = 0; j < 16; ++j) v += (y.at(r, j) - m) * (y.at(r, j) - m);
    CHECK(std::abs(m) < 1e-9);
    CHECK(v / 16 == doctest::Approx(1.0).epsilon(1e-9));
  }
}

TEST_CASE("gelu values") {
  auto y = ops::gelu(TensorD({3}, {0.0, 10.0, 1.0}));
  CHECK(y.at(0) == 0.0);
  CHECK(std::abs(y.at(1) - 10.0) < 1e-6);
  CHECK(std::abs(y.at(2) - 1.0 * normal_cdf_quadrature(1.0)) < 1e-6);
  CHECK(std::abs(y.at(2) - 0.8413447460685429) < 1e-6);
  auto neg = ops::gelu(TensorD({1}, {-10.0}));
  CHECK(std::abs(neg.item()) < 1e-6);
}

TEST_CASE("backward basics") {
  SUBCASE("sum gives all-ones gradient") {
    TensorD x({2, 3}, {1, 2, 3, 4, 5, 6});
    x.set_requires_grad();
    backward(ops::sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }
  SUBCASE("dot product") {
    TensorD x({2}, {1, 2}), y({2}, {3, 4});
    x.set_requires_grad();
    y.set_requires_grad();
    backward(ops::sum(ops::mul(x, y)));
    CHECK(x.grad()[0] == 3.0);
    CHECK(x.grad()[1] == 4.0);
    CHECK(y.grad()[0] == 1.0);
    CHECK(y.grad()[1] == 2.0);
  }
  SUBCASE("fan-out accumulates") {
    TensorD x({1}, {0.7});
    x.set_requires_grad();
    backward(ops::sum(ops::add(x, x)));
    CHECK(x.grad()[0] == 2.0);
  }
  SUBCASE("non-scalar loss is rejected") {
    TensorD x({2}, {1, 2});
    x.set_requires_grad();
    CHECK_THROWS_AS(backward(ops::scale(x, 2.0)), ShapeError);
  }
  SUBCASE("no-grad mode records nothing") {
    TensorD x({2}, {1, 2});
    x.set_requires_grad();
    NoGradGuard g;
    auto y = ops::scale(x, 3.0);
    CHECK_FALSE(y.requires_grad());
    CHECK(Tape::current().size() == 0);
  }
}

TEST_CASE("matmul shape algebra") {
  TensorD a({2, 3}), b({3, 4}), bad({2, 4});
  CHECK(ops::matmul(a, b).shape() == Shape{2, 4});
  CHECK_THROWS_AS(ops::matmul(a, bad), ShapeError);
  CHECK(ops::matmul_nt(a, TensorD({5, 3})).shape() == Shape{2, 5});
  CHECK_THROWS_AS(ops::matmul_nt(a, TensorD({5, 2})), ShapeError);
}

TEST_CASE("random three-layer composition matches finite differences") {
  Rng rng(42);
  for (int trial = 0; trial < 5; ++trial) {
    auto x = testing::random_tensor({3, 4}, rng);
    auto w1 = testing::random_tensor({4, 5}, rng);
    auto w2 = testing::random_tensor({5, 5}, rng);
    auto w3 = testing::random_tensor({5, 2}, rng);
    auto f = [](const std::vector<TensorD>& in) {
      auto h = ops::gelu(ops::matmul(in[0], in[1]));
      h = ops::layer_norm(ops::matmul(h, in[2]), TensorD::full({5}, 1.0), TensorD::zeros({5}), 1e-5);
      return ops::cross_entropy(ops::matmul(h, in[3]), std::vector<std::int32_t>{0, 1, 1});
    };
    auto r = testing::grad_check(f, {x, w1, w2, w3});
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("tensor invariants") {
  CHECK_THROWS_AS(TensorD({2, 2}, {1, 2, 3}), ShapeError);
  TensorD x({2, 2}, {1, 2, 3, 4});
  x.set_requires_grad();
  backward(ops::sum(ops::mul(x, x)));
  CHECK(x.grad().size() == x.numel());
}
