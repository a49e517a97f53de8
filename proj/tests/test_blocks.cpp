#include <doctest.h>

#include "oracles.hpp"
#include "wavemix/baselines.hpp"
#include "wavemix/blocks.hpp"
#include "wavemix/dwt.hpp"
#include "wavemix/grad_check.hpp"

using namespace wavemix;

namespace {

template <typename B>
void check_zero_identity(B& block, Index c, Index h, Index w) {
  Rng rng(17);
  Registry<float> reg;
  block.register_into("b", reg);
  zero_parameters(reg);
  const auto x = oracle::random_tensor<float>({2, c, h, w}, rng);
  const auto y = block.forward(x, false);
  CHECK(y.shape() == x.shape());
  CHECK(oracle::max_abs_diff(y, x) == 0.0);
}

// Independent count: every registered parameter tensor's element count.
template <typename T>
Index enumerate(const MixingBlock<T>& block) {
  Registry<T> reg;
  block.register_into("b", reg);
  Index n = 0;
  for (const auto& p : reg.parameters) n += p.tensor.numel();
  return n;
}

Index conv_params(Index in, Index out, Index kh, Index kw, Index groups = 1) { return out * (in / groups) * kh * kw + out; }

template <typename Block>
void grad_check_block(Block& block, const char* name) {
  INFO(name);
  Rng rng(3);
  const auto x = oracle::random_tensor<double>({2, 8, 8, 8}, rng);
  const auto probe = oracle::random_tensor<double>({2, 8, 8, 8}, rng);
  const auto f = [&](const Tensor<double>& v) { return sum(mul(block.forward(v, true), probe)); };
  CHECK(grad_check<double>(f, x).max_error <= 1e-3);
  Registry<double> reg;
  block.register_into("b", reg);
  const auto fp = [&]() { return sum(mul(block.forward(x, true), probe)); };
  CHECK(grad_check_params<double>(fp, reg.parameter_tensors(), 1e-6, 6, 1).max_error <= 1e-3);
}

}  // namespace

TEST_SUITE("blocks") {
  TEST_CASE("level channel split sums to C with remainder on the finest levels") {
    CHECK(split_level_channels(16, 4) == std::vector<Index>{4, 4, 4, 4});
    CHECK(split_level_channels(64, 5) == std::vector<Index>{13, 13, 13, 13, 12});
    CHECK(split_level_channels(10, 4) == std::vector<Index>{3, 3, 2, 2});
    CHECK_THROWS(split_level_channels(3, 4));
  }

  TEST_CASE("WaveMix block preserves shape") {
    Rng rng(1);
    WaveMixBlock<float> block({16, 4, 2}, rng);
    const auto x = oracle::random_tensor<float>({8, 16, 32, 32}, rng);
    CHECK(block.forward(x, true).shape() == x.shape());
    CHECK(block.forward(x, false).shape() == x.shape());
    WaveMixBlock<float> odd({16, 4, 2}, rng);
    CHECK(odd.forward(oracle::random_tensor<float>({2, 16, 28, 28}, rng), true).shape() == Shape{2, 16, 28, 28});
    WaveMixBlock<float> rect({12, 2, 2}, rng);
    CHECK(rect.forward(oracle::random_tensor<float>({1, 12, 9, 13}, rng), true).shape() == Shape{1, 12, 9, 13});
    CHECK_THROWS_AS(block.forward(Tensor<float>::zeros({1, 8, 32, 32}), false), ShapeError);
  }

  TEST_CASE("WaveMix-Lite block preserves shape") {
    Rng rng(2);
    WaveMixLiteBlock<float> block({128, 2}, rng);
    const auto x = oracle::random_tensor<float>({64, 128, 32, 32}, rng);
    CHECK(block.forward(x, true).shape() == x.shape());
    WaveMixLiteBlock<float> odd({16, 2}, rng);
    CHECK(odd.forward(oracle::random_tensor<float>({2, 16, 7, 9}, rng), true).shape() == Shape{2, 16, 7, 9});
    CHECK_THROWS(WaveMixLiteBlock<float>({30, 2}, rng));
    CHECK_THROWS_AS(block.forward(Tensor<float>::zeros({1, 64, 8, 8}), false), ShapeError);
  }

  TEST_CASE("zero weights give the identity in eval mode") {
    for (Index size : {28, 32}) {
      Rng rng(5);
      WaveMixBlock<float> wm({16, compute_levels(size, size), 2}, rng);
      check_zero_identity(wm, 16, size, size);
      WaveMixLiteBlock<float> lite({16, 2}, rng);
      check_zero_identity(lite, 16, size, size);
      FNet2DBlock<float> fnet(16, size, size, rng);
      check_zero_identity(fnet, 16, size, size);
      MLPMixer2DBlock<float> mixer(16, size, size, rng);
      check_zero_identity(mixer, 16, size, size);
    }
  }

  TEST_CASE("parameter counts: closed form, enumeration and hand sums") {
    Rng rng(0);
    CHECK(conv_params(64, 16, 1, 1) == 4 * 16 * 16 + 16);
    CHECK(conv_params(16, 16, 5, 5, 16) == 25 * 16 + 16);

    for (auto [c, l] : {std::pair<Index, int>{16, 4}, {32, 4}, {64, 5}, {10, 3}}) {
      WaveMixBlock<float> block({c, l, 2}, rng);
      Index hand = 0;
      const auto split = split_level_channels(c, l);
      for (int k = 1; k <= l; ++k) {
        const Index f = Index{1} << k;
        hand += conv_params(4 * c, 2 * c, 1, 1) + conv_params(2 * c, c, 1, 1) + conv_params(c, split[k - 1], f, f);
      }
      hand += conv_params(c, c, 5, 5, c) + 2 * c;
      CHECK(enumerate(block) == hand);
      CHECK(block.parameter_count() == hand);
      CHECK(WaveMixBlock<float>::closed_form_parameter_count({c, l, 2}) == hand);
    }

    WaveMixLiteBlock<float> lite({128, 2}, rng);
    const Index hand = (128 * 32 + 32) + (128 * 256 + 256) + (256 * 128 + 128) + (128 * 128 * 16 + 128) + 256;
    CHECK(enumerate(lite) == hand);
    CHECK(WaveMixLiteBlock<float>::closed_form_parameter_count({128, 2}) == hand);
  }

  TEST_CASE("stacked blocks preserve shape") {
    Rng rng(9);
    auto x = oracle::random_tensor<float>({2, 16, 28, 28}, rng);
    std::vector<std::unique_ptr<MixingBlock<float>>> stack;
    for (int i = 0; i < 3; ++i) stack.push_back(std::make_unique<WaveMixBlock<float>>(WaveMixBlockOptions{16, 4, 2}, rng));
    stack.push_back(std::make_unique<WaveMixLiteBlock<float>>(WaveMixLiteBlockOptions{16, 2}, rng));
    for (auto& b : stack) x = b->forward(x, true);
    CHECK(x.shape() == Shape{2, 16, 28, 28});
  }

  TEST_CASE("grad_check through full blocks") {
    Rng rng(12);
    WaveMixBlock<double> wm({8, 3, 2}, rng);
    grad_check_block(wm, "wavemix");
    WaveMixLiteBlock<double> lite({8, 2}, rng);
    grad_check_block(lite, "wavemix_lite");
    FNet2DBlock<double> fnet(8, 8, 8, rng);
    grad_check_block(fnet, "fnet2d");
    MLPMixer2DBlock<double> mixer(8, 8, 8, rng);
    grad_check_block(mixer, "mlpmixer2d");
  }
}
