#pragma once

#include "wavemix/blocks.hpp"

namespace wavemix {

/// cos / sin tables of an n-point DFT: F[j][k] = cos(2*pi*j*k/n) - i sin(...).
struct DftTable {
  Index n = 0;
  std::vector<double> cos, sin;  // n*n, symmetric
  explicit DftTable(Index n = 0);
};

/// Re(DFT_C(DFT_H(DFT_W x))) with complex intermediates. The operator is real,
/// linear and symmetric, so it is its own adjoint.
template <typename T>
Tensor<T> fourier_mix(const Tensor<T>& x, const DftTable& channels, const DftTable& height,
                      const DftTable& width);

/// Fourier mixing -> 1x1 (C -> fC) -> GELU -> 1x1 (fC -> C) -> batchnorm -> + x
template <typename T>
class FNet2DBlock final : public MixingBlock<T> {
 public:
  FNet2DBlock(Index channels, Index height, Index width, Rng& rng, Index expansion = 2);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  void register_into(const std::string& prefix, Registry<T>& reg) const override;
  Index channels() const override { return dft_c_.n; }
  std::string_view kind() const override { return "fnet2d"; }

  /// Mixing stage alone.
  Tensor<T> mix(const Tensor<T>& x) const;

 private:
  DftTable dft_c_, dft_h_, dft_w_;
  Conv2d<T> expand_, project_;
  BatchNorm2d<T> norm_;
};

/// LN -> dense over W -> GELU -> LN -> dense over H -> GELU -> batchnorm
/// -> 1x1 (C -> fC) -> GELU -> 1x1 (fC -> C) -> + x
template <typename T>
class MLPMixer2DBlock final : public MixingBlock<T> {
 public:
  MLPMixer2DBlock(Index channels, Index height, Index width, Rng& rng, Index expansion = 2);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  void register_into(const std::string& prefix, Registry<T>& reg) const override;
  Index channels() const override { return channels_; }
  std::string_view kind() const override { return "mlpmixer2d"; }

  /// Output of the width MLP (after its GELU), for equivariance checks.
  Tensor<T> width_mlp(const Tensor<T>& x) const;

  ChannelLayerNorm<T> norm_w, norm_h;
  Linear<T> dense_w, dense_h;
  BatchNorm2d<T> norm_c;
  Conv2d<T> expand, project;

 private:
  void check_input(const Tensor<T>& x) const;
  Index channels_, height_, width_;
};

}  // namespace wavemix
