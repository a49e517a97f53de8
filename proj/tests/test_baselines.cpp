#include <doctest.h>

#include "oracles.hpp"
#include "wavemix/baselines.hpp"

using namespace wavemix;

TEST_SUITE("baselines") {
  TEST_CASE("DFT table entries") {
    const DftTable t(4);
    CHECK(t.cos[0] == 1.0);
    CHECK(std::abs(t.cos[1 * 4 + 1]) <= 1e-15);
    CHECK(t.sin[1 * 4 + 1] == doctest::Approx(1.0));
    CHECK(t.cos[2 * 4 + 3] == doctest::Approx(std::cos(2 * std::numbers::pi * 6 / 4)));
  }

  TEST_CASE("spatially constant input has a DC-only spatial spectrum") {
    // fourier_mix with a 1-point channel table is the plain 2D DFT
    const Index H = 6, W = 5;
    auto x = Tensor<double>::zeros({1, 3, H, W});
    for (Index c = 0; c < 3; ++c)
      for (Index p = 0; p < H * W; ++p) x.mutable_data()[static_cast<std::size_t>(c * H * W + p)] = 1.0 + c;
    const auto y = fourier_mix(x, DftTable(3), DftTable(H), DftTable(W));
    for (Index c = 0; c < 3; ++c)
      for (Index p = 1; p < H * W; ++p) CHECK(std::abs(y[c * H * W + p]) <= 1e-5);
    // DC bin, channel 0: sum over all entries
    CHECK(y[0] == doctest::Approx(H * W * 6.0));
  }

  TEST_CASE("mixing stage matches the direct DFT oracle on 20 cases") {
    Rng rng(10);
    for (int rep = 0; rep < 20; ++rep) {
      const Index B = 1 + static_cast<Index>(rng.below(2)), C = 1 + static_cast<Index>(rng.below(5));
      const Index H = 1 + static_cast<Index>(rng.below(6)), W = 1 + static_cast<Index>(rng.below(6));
      const auto x = oracle::random_tensor<float>({B, C, H, W}, rng);
      const auto ref = oracle::dft3_real(oracle::to_double(x), B, C, H, W);
      const auto y = fourier_mix(x, DftTable(C), DftTable(H), DftTable(W));
      CHECK(oracle::max_abs_diff(y, ref) <= 1e-5 * std::sqrt(static_cast<double>(C * H * W)));
    }
    Rng r2(11);
    const auto x = oracle::random_tensor<double>({1, 4, 4, 4}, r2);
    FNet2DBlock<double> block(4, 4, 4, r2);
    CHECK(oracle::max_abs_diff(block.mix(x), oracle::dft3_real(oracle::to_double(x), 1, 4, 4, 4)) <= 1e-5);
  }

  TEST_CASE("mixing stage is self-adjoint") {
    Rng rng(12);
    const auto x = oracle::random_tensor<double>({2, 3, 5, 4}, rng);
    const auto y = oracle::random_tensor<double>({2, 3, 5, 4}, rng);
    const DftTable c(3), h(5), w(4);
    CHECK(std::abs(oracle::dot(fourier_mix(x, c, h, w), y) - oracle::dot(x, fourier_mix(y, c, h, w))) <= 1e-10);
  }

  TEST_CASE("size mismatches are rejected") {
    Rng rng(1);
    CHECK_THROWS_AS(fourier_mix(Tensor<float>::zeros({1, 3, 4, 4}), DftTable(3), DftTable(4), DftTable(5)), ShapeError);
    FNet2DBlock<float> fnet(8, 8, 8, rng);
    CHECK_THROWS_AS(fnet.forward(Tensor<float>::zeros({1, 8, 8, 6}), false), ShapeError);
    MLPMixer2DBlock<float> mixer(8, 8, 8, rng);
    CHECK_THROWS_AS(mixer.forward(Tensor<float>::zeros({1, 8, 6, 8}), false), ShapeError);
    CHECK_THROWS_AS(mixer.forward(Tensor<float>::zeros({1, 4, 8, 8}), false), ShapeError);
  }

  TEST_CASE("shape preservation at 32x32 with C=64") {
    Rng rng(2);
    const auto x = oracle::random_tensor<float>({8, 64, 32, 32}, rng);
    FNet2DBlock<float> fnet(64, 32, 32, rng);
    CHECK(fnet.forward(x, true).shape() == x.shape());
    MLPMixer2DBlock<float> mixer(64, 32, 32, rng);
    CHECK(mixer.forward(x, true).shape() == x.shape());
  }

  TEST_CASE("FNet2D counts only feed-forward and norm parameters") {
    Rng rng(3);
    FNet2DBlock<float> fnet(16, 8, 8, rng);
    CHECK(fnet.parameter_count() == (16 * 32 + 32) + (32 * 16 + 16) + 2 * 16);
    MLPMixer2DBlock<float> mixer(16, 8, 6, rng);
    const Index expect = 2 * (2 * 16) + (6 * 6 + 6) + (8 * 8 + 8) + 2 * 16 + (16 * 32 + 32) + (32 * 16 + 16);
    CHECK(mixer.parameter_count() == expect);
  }

  TEST_CASE("width MLP is equivariant to row permutations") {
    Rng rng(4);
    MLPMixer2DBlock<double> mixer(3, 5, 6, rng);
    const auto x = oracle::random_tensor<double>({2, 3, 5, 6}, rng);
    auto swapped = x.detach();
    auto sw = swapped.mutable_data();
    const Index r0 = 1, r1 = 3;
    for (Index b = 0; b < 2; ++b)
      for (Index c = 0; c < 3; ++c)
        for (Index j = 0; j < 6; ++j) std::swap(sw[static_cast<std::size_t>(((b * 3 + c) * 5 + r0) * 6 + j)],
                                                sw[static_cast<std::size_t>(((b * 3 + c) * 5 + r1) * 6 + j)]);
    const auto y = mixer.width_mlp(x), ys = mixer.width_mlp(swapped);
    double diff = 0;
    for (Index b = 0; b < 2; ++b)
      for (Index c = 0; c < 3; ++c)
        for (Index i = 0; i < 5; ++i) {
          const Index src = i == r0 ? r1 : i == r1 ? r0 : i;
          for (Index j = 0; j < 6; ++j)
            diff = std::max(diff, std::abs(ys[((b * 3 + c) * 5 + i) * 6 + j] - y[((b * 3 + c) * 5 + src) * 6 + j]));
        }
    CHECK(diff <= 1e-12);
  }

  TEST_CASE("zero weights reduce the mixer to the identity") {
    Rng rng(5);
    MLPMixer2DBlock<double> mixer(4, 6, 6, rng);
    Registry<double> reg;
    mixer.register_into("m", reg);
    zero_parameters(reg);
    const auto x = oracle::random_tensor<double>({2, 4, 6, 6}, rng);
    CHECK(oracle::max_abs_diff(mixer.forward(x, false), x) == 0.0);
  }
}
