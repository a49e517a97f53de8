#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "wavemix/grad_check.hpp"
#include "wavemix/tensor.hpp"

using namespace wavemix;
using T = Tensor<double>;

namespace {

// Weighted sum so every output element gets a distinct upstream gradient.
T weighted_sum(const T& y, std::uint64_t seed = 99) {
  Rng rng(seed);
  return sum(mul(y, oracle::random_tensor<double>(y.shape(), rng)));
}

void check_op(const std::function<T(const T&)>& op, Shape shape, std::uint64_t seed = 1) {
  Rng rng(seed);
  const T x = oracle::random_tensor<double>(shape, rng);
  const auto r = grad_check<double>([&](const T& v) { return weighted_sum(op(v)); }, x);
  CHECK(r.checked == numel(shape));
  CHECK(r.max_error <= 1e-4);
}

}  // namespace

TEST_SUITE("tensor") {
  TEST_CASE("elementwise add") {
    const auto a = T::from({2}, {1, 2});
    const auto b = T::from({2}, {3, 4});
    const auto c = add(a, b);
    CHECK(c[0] == 4);
    CHECK(c[1] == 6);
  }

  TEST_CASE("matmul by identity returns the operand") {
    Rng rng(3);
    const auto x = oracle::random_tensor<double>({3, 5}, rng);
    const auto eye = T::from({3, 3}, {1, 0, 0, 0, 1, 0, 0, 0, 1});
    CHECK(oracle::max_abs_diff(matmul(eye, x), x) == 0.0);
  }

  TEST_CASE("concat_channels adds channel counts") {
    const auto a = T::zeros({2, 3, 4, 5});
    const auto b = T::zeros({2, 5, 4, 5});
    const std::vector<T> parts{a, b};
    CHECK(concat_channels<double>(parts).shape() == Shape{2, 8, 4, 5});
  }

  TEST_CASE("shape errors are descriptive") {
    CHECK_THROWS_AS(add(T::zeros({2, 3}), T::zeros({3, 2})), ShapeError);
    CHECK_THROWS_AS(matmul(T::zeros({2, 3}), T::zeros({2, 3})), ShapeError);
    const std::vector<T> parts{T::zeros({1, 2, 4, 4}), T::zeros({1, 2, 4, 3})};
    CHECK_THROWS_AS(concat_channels<double>(parts), ShapeError);
    CHECK_THROWS_AS(reshape(T::zeros({2, 3}), {4}), ShapeError);
    try {
      matmul(T::zeros({2, 3}), T::zeros({4, 5}));
      FAIL("expected ShapeError");
    } catch (const ShapeError& e) {
      CHECK(std::string(e.what()).find('3') != std::string::npos);
    }
  }

  TEST_CASE("broadcast over the leading axis") {
    const auto x = T::from({2, 2}, {1, 2, 3, 4});
    const auto row = T::from({1, 2}, {10, 20}, true);
    auto y = add(x, row);
    CHECK(y[2] == 13);
    backward(sum(y));
    CHECK(row.grad()[0] == 2);
    CHECK(row.grad()[1] == 2);
    CHECK_THROWS_AS(mul(x, T::zeros({2, 1})), ShapeError);
  }

  TEST_CASE("backward of sum is all ones") {
    auto x = T::from({2, 2}, {1, -2, 3, 0.5}, true);
    backward(sum(x));
    for (double g : x.grad()) CHECK(g == 1.0);
  }

  TEST_CASE("backward of x*x at 3 is 6") {
    auto x = T::from({1}, {3}, true);
    backward(sum(mul(x, x)));
    CHECK(x.grad()[0] == 6.0);
  }

  TEST_CASE("backward rejects non-scalar losses and reuse") {
    auto x = T::from({2}, {1, 2}, true);
    CHECK_THROWS_AS(backward(scale(x, 2.0)), GraphError);
    auto loss = sum(scale(x, 2.0));
    backward(loss);
    CHECK_THROWS_AS(backward(loss), GraphError);
  }

  TEST_CASE("composed graph matches central differences") {
    Rng rng(5);
    const auto w = oracle::random_tensor<double>({4, 3}, rng);
    const auto f = [&](const T& x) {
      auto h = matmul(x, w);
      auto p = pad2d(reshape(h, {1, 2, 2, 3}), {1, 0, 0, 2});
      return sum(mul(p, p));
    };
    const auto x = oracle::random_tensor<double>({4, 4}, rng);
    CHECK(grad_check<double>(f, x, 1e-5).max_error <= 1e-4);
  }

  TEST_CASE("every op passes grad_check") {
    Rng rng(11);
    const auto other = oracle::random_tensor<double>({2, 4, 8, 8}, rng);
    const auto row = oracle::random_tensor<double>({1, 4, 8, 8}, rng);
    const auto mat = oracle::random_tensor<double>({8, 6}, rng);
    check_op([&](const T& x) { return add(x, other); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return sub(other, x); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return mul(x, other); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return mul(other, x); }, {1, 4, 8, 8});
    check_op([&](const T& x) { return add(row, x); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return add(other, x); }, {1, 4, 8, 8});
    check_op([&](const T& x) { return mul(x, x); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return scale(x, -1.7); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return matmul(x, mat); }, {5, 8});
    check_op([&](const T& x) { return matmul(mat, x); }, {6, 3});
    check_op([&](const T& x) { return transpose2d(x); }, {5, 7});
    check_op([&](const T& x) { return reshape(x, {8, 32}); }, {2, 4, 8, 4});
    check_op([&](const T& x) { return slice_channels(x, 1, 2); }, {2, 4, 8, 8});
    check_op(
        [&](const T& x) {
          const std::vector<T> parts{x, other, x};
          return concat_channels<double>(parts);
        },
        {2, 4, 8, 8});
    check_op([&](const T& x) { return pad2d(x, {1, 2, 0, 3}); }, {2, 4, 5, 6});
    check_op([&](const T& x) { return crop2d(x, 1, 2, 4, 3); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return transpose_hw(x); }, {2, 4, 5, 7});
    check_op([&](const T& x) { return mean(x); }, {2, 4, 8, 8});
    check_op([&](const T& x) { return sum(x); }, {2, 4, 8, 8});
  }

  TEST_CASE("gradients accumulate additively across graphs") {
    Rng rng(8);
    const auto a = oracle::random_tensor<double>({2, 3}, rng);
    const auto b = oracle::random_tensor<double>({2, 3}, rng);
    auto x = oracle::random_tensor<double>({2, 3}, rng).set_requires_grad(true);
    backward(sum(mul(x, a)));
    backward(sum(mul(mul(x, x), b)));
    for (Index i = 0; i < x.numel(); ++i) {
      const double expect = a[i] + 2.0 * x[i] * b[i];
      CHECK(x.grad()[static_cast<std::size_t>(i)] == doctest::Approx(expect).epsilon(1e-14));
    }
    x.zero_grad();
    for (double g : x.grad()) CHECK(g == 0.0);
  }

  TEST_CASE("slice of concat recovers the parts bit-exactly") {
    Rng rng(4);
    const auto a = oracle::random_tensor<float>({2, 3, 4, 5}, rng);
    const auto b = oracle::random_tensor<float>({2, 5, 4, 5}, rng);
    const std::vector<Tensor<float>> parts{a, b};
    const auto c = concat_channels<float>(parts);
    CHECK(oracle::max_abs_diff(slice_channels(c, 0, 3), a) == 0.0);
    CHECK(oracle::max_abs_diff(slice_channels(c, 3, 5), b) == 0.0);
    const auto r = reshape(reshape(a, {6, 20}), a.shape());
    CHECK(oracle::max_abs_diff(r, a) == 0.0);
    CHECK(oracle::max_abs_diff(crop2d(pad2d(a, {1, 2, 3, 4}), 1, 3, 4, 5), a) == 0.0);
    CHECK(oracle::max_abs_diff(transpose_hw(transpose_hw(a)), a) == 0.0);
  }

  TEST_CASE("identical inputs give bitwise identical forward and backward") {
    auto run = [] {
      Rng rng(21);
      auto x = oracle::random_tensor<float>({3, 7}, rng).set_requires_grad(true);
      auto w = oracle::random_tensor<float>({7, 4}, rng);
      auto y = matmul(x, w);
      backward(mean(mul(y, y)));
      auto grads = std::vector<float>(x.grad().begin(), x.grad().end());
      auto vals = std::vector<float>(y.data().begin(), y.data().end());
      return std::make_pair(vals, grads);
    };
    CHECK(run() == run());
  }

  TEST_CASE("no-grad guard skips graph recording") {
    auto x = T::from({2}, {1, 2}, true);
    {
      NoGradGuard guard;
      CHECK_FALSE(grad_enabled());
      auto y = scale(x, 3.0);
      CHECK_FALSE(y.requires_grad());
    }
    CHECK(grad_enabled());
    CHECK(scale(x, 3.0).requires_grad());
  }

  TEST_CASE("detach makes an independent leaf") {
    auto x = T::from({2}, {1, 2}, true);
    auto d = x.detach();
    d.mutable_data()[0] = 5;
    CHECK(x[0] == 1);
    CHECK_FALSE(d.requires_grad());
  }

  TEST_CASE("finite checks flag non-finite results") {
    const bool before = finite_checks();
    set_finite_checks(true);
    const auto big = T::from({1}, {1e308});
    CHECK_THROWS_AS(scale(big, 10.0), NumericalError);
    set_finite_checks(false);
    CHECK(std::isinf(scale(big, 10.0)[0]));
    set_finite_checks(before);
  }

  TEST_CASE("grad_check conventions") {
    Rng rng(2);
    const auto x = oracle::random_tensor<double>({3}, rng);
    CHECK(grad_check<double>([](const T&) { return T::scalar(4.0); }, x).max_error == 0.0);
    CHECK_THROWS_AS(grad_check<double>([](const T& v) { return scale(v, 2.0); }, x), ShapeError);
  }
}
