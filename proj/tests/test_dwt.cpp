#include <doctest.h>

#include "oracles.hpp"
#include "wavemix/dwt.hpp"
#include "wavemix/grad_check.hpp"

using namespace wavemix;
using T = Tensor<double>;

TEST_SUITE("dwt") {
  TEST_CASE("constant 2x2 block has only an approximation") {
    const auto y = dwt2_level(T::full({1, 1, 2, 2}, 1.0));
    CHECK(y.shape() == Shape{1, 4, 1, 1});
    CHECK(y[0] == 2.0);
    CHECK(y[1] == 0.0);
    CHECK(y[2] == 0.0);
    CHECK(y[3] == 0.0);
  }

  TEST_CASE("hand-computed 2x2 block") {
    const auto y = dwt2_level(T::from({1, 1, 2, 2}, {1, 2, 3, 4}));
    CHECK(y[0] == 5.0);
    CHECK(y[1] == -1.0);
    CHECK(y[2] == -2.0);
    CHECK(y[3] == 0.0);
  }

  TEST_CASE("matches the separable filter-bank oracle") {
    Rng rng(1);
    const auto x = oracle::random_tensor<double>({2, 3, 6, 8}, rng);
    const auto ref = oracle::haar_level(oracle::to_double(x), 2, 3, 6, 8);
    CHECK(oracle::max_abs_diff(dwt2_level(x), ref) <= 1e-14);
  }

  TEST_CASE("Parseval on a random 8x8") {
    Rng rng(2);
    const auto x = oracle::random_tensor<float>({1, 1, 8, 8}, rng);
    const double a = oracle::squared_norm(x), b = oracle::squared_norm(dwt2_level(x));
    CHECK(std::abs(a - b) <= 1e-5 * a);
  }

  TEST_CASE("linearity") {
    Rng rng(3);
    const auto x = oracle::random_tensor<float>({2, 2, 8, 6}, rng);
    const auto y = oracle::random_tensor<float>({2, 2, 8, 6}, rng);
    const float alpha = 0.7f, beta = -1.3f;
    const auto lhs = dwt2_level(add(scale(x, alpha), scale(y, beta)));
    const auto rhs = add(scale(dwt2_level(x), alpha), scale(dwt2_level(y), beta));
    CHECK(oracle::max_abs_diff(lhs, rhs) <= 1e-6);
  }

  TEST_CASE("inverse level") {
    Rng rng(4);
    const auto x = oracle::random_tensor<float>({2, 3, 10, 12}, rng);
    CHECK(oracle::max_abs_diff(idwt2_level(dwt2_level(x)), x) <= 1e-6);
    const auto z = idwt2_level(Tensor<float>::zeros({1, 4, 3, 3}));
    for (float v : z.data()) CHECK(v == 0.0f);
    auto a_only = Tensor<float>::zeros({1, 4, 2, 2});
    for (int i = 0; i < 4; ++i) a_only.mutable_data()[i] = 2.0f;
    const auto up = idwt2_level(a_only);
    for (float v : up.data()) CHECK(v == 1.0f);
    CHECK_THROWS_AS(idwt2_level(Tensor<float>::zeros({1, 6, 2, 2})), ShapeError);
  }

  TEST_CASE("odd sizes are padded bottom/right and recorded") {
    LevelPad pad;
    const auto y = dwt2_level(T::full({1, 1, 3, 5}, 1.0), &pad);
    CHECK(y.shape() == Shape{1, 4, 2, 3});
    CHECK(pad == LevelPad{1, 1});
    LevelPad none;
    dwt2_level(T::zeros({1, 1, 4, 4}), &none);
    CHECK(none == LevelPad{0, 0});
  }

  TEST_CASE("pyramid sizes") {
    const auto p32 = dwt2_pyramid(Tensor<float>::zeros({1, 2, 32, 32}), 4);
    REQUIRE(p32.depth() == 4);
    const Index expect32[] = {16, 8, 4, 2};
    for (int l = 0; l < 4; ++l) {
      CHECK(p32.levels[l].shape() == Shape{1, 8, expect32[l], expect32[l]});
    }
    const auto p64 = dwt2_pyramid(Tensor<float>::zeros({1, 3, 64, 64}), 1);
    CHECK(p64.depth() == 1);
    CHECK(p64.levels[0].shape() == Shape{1, 12, 32, 32});

    const auto p28 = dwt2_pyramid(Tensor<float>::zeros({1, 1, 28, 28}), 4);
    const Index expect28[] = {14, 7, 4, 2};
    for (int l = 0; l < 4; ++l) CHECK(p28.levels[l].dim(2) == expect28[l]);
    CHECK(p28.pads[0] == LevelPad{0, 0});
    CHECK(p28.pads[1] == LevelPad{0, 0});
    CHECK(p28.pads[2] == LevelPad{1, 1});
    CHECK(p28.pads[3] == LevelPad{0, 0});
    CHECK(level_sizes(28, 28, 4) == std::vector<std::pair<Index, Index>>{{14, 14}, {7, 7}, {4, 4}, {2, 2}});
    CHECK_THROWS(dwt2_pyramid(Tensor<float>::zeros({1, 1, 8, 8}), 4));
  }

  TEST_CASE("pyramid approximation equals repeated single levels") {
    Rng rng(5);
    const auto x = oracle::random_tensor<float>({2, 2, 28, 20}, rng);
    const auto p = dwt2_pyramid(x, 3);
    auto a = x;
    for (std::size_t l = 1; l <= 3; ++l) {
      a = slice_channels(dwt2_level(a), 0, 2);
      CHECK(oracle::max_abs_diff(p.subband(l, 0), a) == 0.0);
    }
    CHECK(oracle::max_abs_diff(reconstruct(p), x) <= 1e-5);
  }

  TEST_CASE("compute_levels") {
    CHECK(compute_levels(32, 32) == 4);
    CHECK(compute_levels(64, 64) == 5);
    CHECK(compute_levels(4, 4) == 1);
    CHECK(compute_levels(28, 28) == 4);
    CHECK(compute_levels(64, 32) == 4);
    CHECK_THROWS(compute_levels(3, 8));
  }

  TEST_CASE("backward is the adjoint and passes grad_check") {
    Rng rng(6);
    const auto x = oracle::random_tensor<double>({2, 2, 6, 6}, rng);
    CHECK(grad_check<double>([](const T& v) { return sum(dwt2_level(v)); }, x).max_error <= 1e-8);
    const auto w = oracle::random_tensor<double>({2, 8, 3, 3}, rng);
    CHECK(grad_check<double>([&](const T& v) { return sum(mul(dwt2_level(v), w)); }, x).max_error <= 1e-8);
    const auto odd = oracle::random_tensor<double>({1, 2, 7, 5}, rng);
    const auto w2 = oracle::random_tensor<double>({1, 8, 4, 3}, rng);
    CHECK(grad_check<double>([&](const T& v) { return sum(mul(dwt2_level(v), w2)); }, odd).max_error <= 1e-8);

    auto leaf = x.detach().set_requires_grad(true);
    backward(sum(mul(dwt2_level(leaf), w)));
    // d<Wx, w>/dx = W^T w = idwt(w)
    const auto expect = idwt2_level(w);
    const std::vector<double> grad(leaf.grad().begin(), leaf.grad().end());
    CHECK(oracle::max_abs_diff(grad, oracle::to_double(expect)) <= 1e-12);
  }
}
