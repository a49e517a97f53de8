#include "wavemix/baselines.hpp"

#include <cmath>
#include <numbers>

namespace wavemix {

using detail::grad_sink;
using detail::make_output;

DftTable::DftTable(Index n_) : n(n_) {
  if (n < 0) throw std::invalid_argument("DftTable: negative length");
  cos.resize(static_cast<std::size_t>(n * n));
  sin.resize(cos.size());
  for (Index j = 0; j < n; ++j) {
    for (Index k = 0; k < n; ++k) {
      // reduce j*k mod n first so large products keep full angular precision
      const double angle = 2.0 * std::numbers::pi * static_cast<double>((j * k) % n) / static_cast<double>(n);
      cos[static_cast<std::size_t>(j * n + k)] = std::cos(angle);
      sin[static_cast<std::size_t>(j * n + k)] = std::sin(angle);
    }
  }
}

namespace {

// In-place complex DFT along one axis of a (C,H,W) volume held as re/im.
void dft_axis(std::vector<double>& re, std::vector<double>& im, const Index dims[3], int axis, const DftTable& t,
              std::vector<double>& scratch_re, std::vector<double>& scratch_im) {
  const Index strides[3] = {dims[1] * dims[2], dims[2], 1};
  const Index n = dims[axis], s = strides[axis];
  const Index total = dims[0] * dims[1] * dims[2];
  scratch_re.assign(static_cast<std::size_t>(n), 0.0);
  scratch_im.assign(static_cast<std::size_t>(n), 0.0);
  for (Index base = 0; base < total; ++base) {
    if ((base / s) % n != 0) continue;  // visit each line once, at its first element
    for (Index k = 0; k < n; ++k) {
      double ar = 0.0, ai = 0.0;
      for (Index j = 0; j < n; ++j) {
        const double c = t.cos[static_cast<std::size_t>(j * n + k)];
        const double sn = t.sin[static_cast<std::size_t>(j * n + k)];
        const double xr = re[static_cast<std::size_t>(base + j * s)];
        const double xi = im[static_cast<std::size_t>(base + j * s)];
        ar += xr * c + xi * sn;
        ai += xi * c - xr * sn;
      }
      scratch_re[static_cast<std::size_t>(k)] = ar;
      scratch_im[static_cast<std::size_t>(k)] = ai;
    }
    for (Index k = 0; k < n; ++k) {
      re[static_cast<std::size_t>(base + k * s)] = scratch_re[static_cast<std::size_t>(k)];
      im[static_cast<std::size_t>(base + k * s)] = scratch_im[static_cast<std::size_t>(k)];
    }
  }
}

template <typename T>
void fourier_mix_values(const T* x, Index batch, const Index dims[3], const DftTable& tc, const DftTable& th,
                        const DftTable& tw, T* out, bool accumulate) {
  const Index vol = dims[0] * dims[1] * dims[2];
  std::vector<double> re(static_cast<std::size_t>(vol)), im(re.size()), sr, si;
  for (Index b = 0; b < batch; ++b) {
    for (Index i = 0; i < vol; ++i) {
      re[static_cast<std::size_t>(i)] = static_cast<double>(x[b * vol + i]);
      im[static_cast<std::size_t>(i)] = 0.0;
    }
    dft_axis(re, im, dims, 2, tw, sr, si);
    dft_axis(re, im, dims, 1, th, sr, si);
    dft_axis(re, im, dims, 0, tc, sr, si);
    for (Index i = 0; i < vol; ++i) {
      const T v = static_cast<T>(re[static_cast<std::size_t>(i)]);
      if (accumulate) {
        out[b * vol + i] += v;
      } else {
        out[b * vol + i] = v;
      }
    }
  }
}

void check_table(const DftTable& t, Index got, const char* axis) {
  if (t.n != got) {
    throw ShapeError(std::string("fourier_mix: ") + axis + " extent " + std::to_string(got) +
                     " does not match the precomputed DFT length " + std::to_string(t.n));
  }
}

ConvSpec pointwise(Index in, Index out) {
  ConvSpec s;
  s.in_channels = in;
  s.out_channels = out;
  return s;
}

}  // namespace

template <typename T>
Tensor<T> fourier_mix(const Tensor<T>& x, const DftTable& tc, const DftTable& th, const DftTable& tw) {
  detail::require_rank(x.shape(), 4, "fourier_mix");
  check_table(tc, x.dim(1), "channel");
  check_table(th, x.dim(2), "height");
  check_table(tw, x.dim(3), "width");
  const Index batch = x.dim(0);
  const Index dims[3] = {x.dim(1), x.dim(2), x.dim(3)};
  std::vector<T> out(static_cast<std::size_t>(x.numel()));
  fourier_mix_values(x.data().data(), batch, dims, tc, th, tw, out.data(), false);
  if (!grad_enabled()) return Tensor<T>::from(x.shape(), std::move(out));
  return make_output<T>("fourier_mix", x.shape(), std::move(out), {x},
                        [x, batch, tc, th, tw](const std::vector<T>& g) {
                          if (auto* s = grad_sink(x)) {
                            const Index d[3] = {tc.n, th.n, tw.n};
                            fourier_mix_values(g.data(), batch, d, tc, th, tw, s->data(), true);
                          }
                        });
}

// ---------------------------------------------------------------- FNet2D

template <typename T>
FNet2DBlock<T>::FNet2DBlock(Index channels, Index height, Index width, Rng& rng, Index expansion)
    : dft_c_(channels), dft_h_(height), dft_w_(width), norm_(channels) {
  if (channels < 1 || height < 1 || width < 1) throw std::invalid_argument("FNet2DBlock: extents must be positive");
  if (expansion < 1) throw std::invalid_argument("FNet2DBlock: expansion must be >= 1");
  expand_ = Conv2d<T>(pointwise(channels, expansion * channels), rng);
  project_ = Conv2d<T>(pointwise(expansion * channels, channels), rng);
}

template <typename T>
Tensor<T> FNet2DBlock<T>::mix(const Tensor<T>& x) const {
  return fourier_mix(x, dft_c_, dft_h_, dft_w_);
}

template <typename T>
Tensor<T> FNet2DBlock<T>::forward(const Tensor<T>& x, bool training) {
  Tensor<T> y = project_(gelu(expand_(mix(x))));
  return add(norm_(y, training), x);
}

template <typename T>
void FNet2DBlock<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  expand_.register_into(prefix + ".expand", reg);
  project_.register_into(prefix + ".project", reg);
  norm_.register_into(prefix + ".norm", reg);
}

// ---------------------------------------------------------------- MLP-Mixer 2D

template <typename T>
MLPMixer2DBlock<T>::MLPMixer2DBlock(Index channels, Index height, Index width, Rng& rng, Index expansion)
    : norm_w(channels),
      norm_h(channels),
      dense_w(width, width, rng),
      dense_h(height, height, rng),
      norm_c(channels),
      expand(pointwise(channels, expansion * channels), rng),
      project(pointwise(expansion * channels, channels), rng),
      channels_(channels),
      height_(height),
      width_(width) {
  if (expansion < 1) throw std::invalid_argument("MLPMixer2DBlock: expansion must be >= 1");
}

template <typename T>
void MLPMixer2DBlock<T>::check_input(const Tensor<T>& x) const {
  detail::require_rank(x.shape(), 4, "MLPMixer2DBlock");
  if (x.dim(1) != channels_ || x.dim(2) != height_ || x.dim(3) != width_) {
    throw ShapeError("MLPMixer2DBlock: built for (C,H,W) = (" + std::to_string(channels_) + "," +
                     std::to_string(height_) + "," + std::to_string(width_) + "), got " + to_string(x.shape()));
  }
}

template <typename T>
Tensor<T> MLPMixer2DBlock<T>::width_mlp(const Tensor<T>& x) const {
  check_input(x);
  const Shape s = x.shape();
  Tensor<T> rows = reshape(norm_w(x), {s[0] * s[1] * s[2], s[3]});
  return reshape(gelu(dense_w(rows)), s);
}

template <typename T>
Tensor<T> MLPMixer2DBlock<T>::forward(const Tensor<T>& x, bool training) {
  const Shape s = x.shape();
  Tensor<T> y = width_mlp(x);
  y = transpose_hw(norm_h(y));  // (B,C,W,H)
  y = reshape(gelu(dense_h(reshape(y, {s[0] * s[1] * s[3], s[2]}))), {s[0], s[1], s[3], s[2]});
  y = transpose_hw(y);
  y = project(gelu(expand(norm_c(y, training))));
  return add(y, x);
}

template <typename T>
void MLPMixer2DBlock<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  norm_w.register_into(prefix + ".norm_w", reg);
  dense_w.register_into(prefix + ".dense_w", reg);
  norm_h.register_into(prefix + ".norm_h", reg);
  dense_h.register_into(prefix + ".dense_h", reg);
  norm_c.register_into(prefix + ".norm_c", reg);
  expand.register_into(prefix + ".expand", reg);
  project.register_into(prefix + ".project", reg);
}

#define WAVEMIX_INSTANTIATE(T)                                                                          \
  template Tensor<T> fourier_mix<T>(const Tensor<T>&, const DftTable&, const DftTable&, const DftTable&); \
  template class FNet2DBlock<T>;                                                                        \
  template class MLPMixer2DBlock<T>;

WAVEMIX_INSTANTIATE(float)
WAVEMIX_INSTANTIATE(double)

#undef WAVEMIX_INSTANTIATE

}  // namespace wavemix
