#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "wavemix/nn.hpp"
#include "wavemix/rng.hpp"

namespace wavemix {

/// Shape-preserving token-mixing block: (B,C,H,W) -> (B,C,H,W).
template <typename T>
class MixingBlock {
 public:
  virtual ~MixingBlock() = default;
  virtual Tensor<T> forward(const Tensor<T>& x, bool training) = 0;
  virtual void register_into(const std::string& prefix, Registry<T>& reg) const = 0;
  virtual Index channels() const = 0;
  virtual std::string_view kind() const = 0;

  Index parameter_count() const;
};

struct WaveMixBlockOptions {
  Index channels = 16;
  int levels = 4;
  /// Hidden width of each per-level MLP as a multiple of `channels`.
  Index mlp_expansion = 2;
};

/// Output channels per level: floor(C/L), plus one on the first C mod L
/// (finest) levels, summing to C.
std::vector<Index> split_level_channels(Index channels, int levels);

/// Multi-level block:
///   DWT pyramid -> per level: 1x1 (4C -> fC) -> GELU -> 1x1 (fC -> C)
///   -> transposed conv (C -> c_l, kernel = stride = 2^l) -> crop to (H,W)
///   -> concat -> depthwise 5x5 -> GELU -> batchnorm -> + x
template <typename T>
class WaveMixBlock final : public MixingBlock<T> {
 public:
  WaveMixBlock(const WaveMixBlockOptions& options, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  void register_into(const std::string& prefix, Registry<T>& reg) const override;
  Index channels() const override { return options_.channels; }
  std::string_view kind() const override { return "wavemix"; }
  const WaveMixBlockOptions& options() const { return options_; }

  /// Closed-form learnable-scalar count.
  static Index closed_form_parameter_count(const WaveMixBlockOptions& options);

 private:
  struct Level {
    Conv2d<T> mix;
    Conv2d<T> reduce;
    ConvTranspose2d<T> upsample;
  };
  WaveMixBlockOptions options_;
  std::vector<Level> levels_;
  Conv2d<T> depthwise_;
  BatchNorm2d<T> norm_;
};

struct WaveMixLiteBlockOptions {
  Index channels = 128;
  Index expansion = 2;
};

/// Single-level block:
///   1x1 (C -> C/4) -> DWT (C/4 -> C, half size) -> 1x1 (C -> fC) -> GELU
///   -> 1x1 (fC -> C) -> transposed conv (C -> C, k4 s2 p1) -> crop
///   -> batchnorm -> + x
template <typename T>
class WaveMixLiteBlock final : public MixingBlock<T> {
 public:
  WaveMixLiteBlock(const WaveMixLiteBlockOptions& options, Rng& rng);

  Tensor<T> forward(const Tensor<T>& x, bool training) override;
  void register_into(const std::string& prefix, Registry<T>& reg) const override;
  Index channels() const override { return options_.channels; }
  std::string_view kind() const override { return "wavemix_lite"; }

  static Index closed_form_parameter_count(const WaveMixLiteBlockOptions& options);

 private:
  WaveMixLiteBlockOptions options_;
  Conv2d<T> reduce_;
  Conv2d<T> expand_;
  Conv2d<T> project_;
  ConvTranspose2d<T> upsample_;
  BatchNorm2d<T> norm_;
};

}  // namespace wavemix
