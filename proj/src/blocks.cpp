#include "wavemix/blocks.hpp"

#include <stdexcept>

#include "wavemix/dwt.hpp"

namespace wavemix {

template <typename T>
Index MixingBlock<T>::parameter_count() const {
  Registry<T> reg;
  register_into("", reg);
  return reg.parameter_count();
}

std::vector<Index> split_level_channels(Index channels, int levels) {
  if (levels < 1) throw std::invalid_argument("split_level_channels: need at least one level");
  if (channels < levels) {
    throw std::invalid_argument("split_level_channels: " + std::to_string(channels) + " channels cannot cover " +
                                std::to_string(levels) + " levels");
  }
  std::vector<Index> out(static_cast<std::size_t>(levels), channels / levels);
  for (Index l = 0; l < channels % levels; ++l) out[static_cast<std::size_t>(l)] += 1;
  return out;
}

namespace {

ConvSpec pointwise(Index in, Index out) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

void check_channels(Index got, Index expected, const char* block) {
  if (got != expected) {
    throw ShapeError(std::string(block) + ": expected " + std::to_string(expected) + " channels, got " +
                     std::to_string(got));
  }
}

}  // namespace

// ---------------------------------------------------------------- WaveMix

template <typename T>
WaveMixBlock<T>::WaveMixBlock(const WaveMixBlockOptions& options, Rng& rng)
    : options_(options), norm_(options.channels) {
  const Index c = options.channels;
  if (options.mlp_expansion < 1) throw std::invalid_argument("WaveMixBlock: mlp_expansion must be >= 1");
  const auto split = split_level_channels(c, options.levels);
  const Index hidden = options.mlp_expansion * c;
  for (int l = 1; l <= options.levels; ++l) {
    const Index scale = Index{1} << l;
    ConvSpec up;
    up.in_channels = c;
    up.out_channels = split[static_cast<std::size_t>(l - 1)];
    up.kernel_h = up.kernel_w = scale;
    up.geometry.stride_h = up.geometry.stride_w = scale;
    levels_.push_back(Level{Conv2d<T>(pointwise(4 * c, hidden), rng), Conv2d<T>(pointwise(hidden, c), rng),
                            ConvTranspose2d<T>(up, rng)});
  }
  ConvSpec dw;
  dw.in_channels = dw.out_channels = c;
  dw.kernel_h = dw.kernel_w = 5;
  dw.geometry.pad_h = dw.geometry.pad_w = 2;
  dw.geometry.groups = c;
  depthwise_ = Conv2d<T>(dw, rng);
}

template <typename T>
Tensor<T> WaveMixBlock<T>::forward(const Tensor<T>& x, bool training) {
  detail::require_rank(x.shape(), 4, "WaveMixBlock");
  check_channels(x.dim(1), options_.channels, "WaveMixBlock");
  const Index h = x.dim(2), w = x.dim(3);
  const SubbandPyramid<T> pyr = dwt2_pyramid(x, options_.levels);
  std::vector<Tensor<T>> parts;
  parts.reserve(levels_.size());
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const Level& lv = levels_[l];
    Tensor<T> y = lv.reduce(gelu(lv.mix(pyr.levels[l])));
    y = lv.upsample(y);
    parts.push_back(crop2d(y, 0, 0, h, w));
  }
  Tensor<T> mixed = concat_channels<T>(parts);
  mixed = norm_(gelu(depthwise_(mixed)), training);
  return add(mixed, x);
}

template <typename T>
void WaveMixBlock<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  for (std::size_t l = 0; l < levels_.size(); ++l) {
    const std::string p = prefix + ".level" + std::to_string(l + 1);
    levels_[l].mix.register_into(p + ".mix", reg);
    levels_[l].reduce.register_into(p + ".reduce", reg);
    levels_[l].upsample.register_into(p + ".upsample", reg);
  }
  depthwise_.register_into(prefix + ".depthwise", reg);
  norm_.register_into(prefix + ".norm", reg);
}

template <typename T>
Index WaveMixBlock<T>::closed_form_parameter_count(const WaveMixBlockOptions& o) {
  const Index c = o.channels, hidden = o.mlp_expansion * c;
  const auto split = split_level_channels(c, o.levels);
  Index n = 0;
  for (int l = 1; l <= o.levels; ++l) {
    const Index cl = split[static_cast<std::size_t>(l - 1)];
    const Index k = Index{1} << l;
    n += 4 * c * hidden + hidden;  // mix
    n += hidden * c + c;           // reduce
    n += c * cl * k * k + cl;      // upsample
  }
  n += 25 * c + c;  // depthwise
  n += 2 * c;       // batchnorm
  return n;
}

// ---------------------------------------------------------------- WaveMix-Lite

template <typename T>
WaveMixLiteBlock<T>::WaveMixLiteBlock(const WaveMixLiteBlockOptions& options, Rng& rng)
    : options_(options), norm_(options.channels) {
  const Index c = options.channels;
  if (c % 4 != 0 || c < 4) {
    throw std::invalid_argument("WaveMixLiteBlock: embedding dimension " + std::to_string(c) +
                                " must be a positive multiple of 4");
  }
  if (options.expansion < 1) throw std::invalid_argument("WaveMixLiteBlock: expansion must be >= 1");
  reduce_ = Conv2d<T>(pointwise(c, c / 4), rng);
  expand_ = Conv2d<T>(pointwise(c, options.expansion * c), rng);
  project_ = Conv2d<T>(pointwise(options.expansion * c, c), rng);
  ConvSpec up;
  up.in_channels = up.out_channels = c;
  up.kernel_h = up.kernel_w = 4;
  up.geometry.stride_h = up.geometry.stride_w = 2;
  up.geometry.pad_h = up.geometry.pad_w = 1;
  upsample_ = ConvTranspose2d<T>(up, rng);
}

template <typename T>
Tensor<T> WaveMixLiteBlock<T>::forward(const Tensor<T>& x, bool training) {
  detail::require_rank(x.shape(), 4, "WaveMixLiteBlock");
  check_channels(x.dim(1), options_.channels, "WaveMixLiteBlock");
  const Index h = x.dim(2), w = x.dim(3);
  Tensor<T> y = dwt2_level(reduce_(x));
  y = project_(gelu(expand_(y)));
  y = crop2d(upsample_(y), 0, 0, h, w);
  return add(norm_(y, training), x);
}

template <typename T>
void WaveMixLiteBlock<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  reduce_.register_into(prefix + ".reduce", reg);
  expand_.register_into(prefix + ".expand", reg);
  project_.register_into(prefix + ".project", reg);
  upsample_.register_into(prefix + ".upsample", reg);
  norm_.register_into(prefix + ".norm", reg);
}

template <typename T>
Index WaveMixLiteBlock<T>::closed_form_parameter_count(const WaveMixLiteBlockOptions& o) {
  const Index c = o.channels, hidden = o.expansion * c;
  return (c * (c / 4) + c / 4) + (c * hidden + hidden) + (hidden * c + c) + (c * c * 16 + c) + 2 * c;
}

template class MixingBlock<float>;
template class MixingBlock<double>;
template class WaveMixBlock<float>;
template class WaveMixBlock<double>;
template class WaveMixLiteBlock<float>;
template class WaveMixLiteBlock<double>;

}  // namespace wavemix
