#include "wavemix/nn.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "gemm.hpp"

namespace wavemix {

using detail::grad_sink;
using detail::make_output;

Index conv_output_size(Index input, Index kernel, Index stride, Index pad) {
  return (input + 2 * pad - kernel) / stride + 1;
}

Index conv_transposed_output_size(Index input, Index kernel, Index stride, Index pad) {
  return (input - 1) * stride - 2 * pad + kernel;
}

double init_bound(Index fan_in) { return 1.0 / std::sqrt(static_cast<double>(std::max<Index>(fan_in, 1))); }

namespace {

struct ConvDims {
  Index batch, in_c, in_h, in_w;     // tensor fed to the correlation
  Index out_c, out_h, out_w;         // correlation output
  Index kh, kw;
  ConvGeometry g;
  Index in_per_group() const { return in_c / g.groups; }
  Index out_per_group() const { return out_c / g.groups; }
  bool pointwise() const {
    return kh == 1 && kw == 1 && g.stride_h == 1 && g.stride_w == 1 && g.pad_h == 0 && g.pad_w == 0;
  }
  bool depthwise() const { return in_per_group() == 1 && out_per_group() == 1; }
};

// cols (channels*kh*kw, out_h*out_w) gathered from one image's channel block.
template <typename T>
void im2col(const T* x, Index channels, const ConvDims& d, T* cols) {
  const Index plane_out = d.out_h * d.out_w;
  for (Index c = 0; c < channels; ++c) {
    const T* xc = x + c * d.in_h * d.in_w;
    for (Index i = 0; i < d.kh; ++i) {
      for (Index j = 0; j < d.kw; ++j) {
        T* row = cols + ((c * d.kh + i) * d.kw + j) * plane_out;
        for (Index oh = 0; oh < d.out_h; ++oh) {
          const Index ih = oh * d.g.stride_h - d.g.pad_h + i;
          T* dst = row + oh * d.out_w;
          if (ih < 0 || ih >= d.in_h) {
            std::fill_n(dst, d.out_w, T(0));
            continue;
          }
          const T* src = xc + ih * d.in_w;
          for (Index ow = 0; ow < d.out_w; ++ow) {
            const Index iw = ow * d.g.stride_w - d.g.pad_w + j;
            dst[ow] = (iw >= 0 && iw < d.in_w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

// Scatter-add of cols back onto the image grid; the adjoint of im2col.
template <typename T>
void col2im(const T* cols, Index channels, const ConvDims& d, T* x) {
  const Index plane_out = d.out_h * d.out_w;
  for (Index c = 0; c < channels; ++c) {
    T* xc = x + c * d.in_h * d.in_w;
    for (Index i = 0; i < d.kh; ++i) {
      for (Index j = 0; j < d.kw; ++j) {
        const T* row = cols + ((c * d.kh + i) * d.kw + j) * plane_out;
        for (Index oh = 0; oh < d.out_h; ++oh) {
          const Index ih = oh * d.g.stride_h - d.g.pad_h + i;
          if (ih < 0 || ih >= d.in_h) continue;
          const T* src = row + oh * d.out_w;
          T* dst = xc + ih * d.in_w;
          for (Index ow = 0; ow < d.out_w; ++ow) {
            const Index iw = ow * d.g.stride_w - d.g.pad_w + j;
            if (iw >= 0 && iw < d.in_w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

// Output columns [lo, hi) whose tap j lands inside the input row.
inline std::pair<Index, Index> valid_columns(const ConvDims& d, Index j) {
  const Index sw = d.g.stride_w, off = j - d.g.pad_w;
  Index lo = off >= 0 ? 0 : (-off + sw - 1) / sw;
  Index hi = d.in_w - off <= 0 ? 0 : (d.in_w - off + sw - 1) / sw;
  hi = std::min(hi, d.out_w);
  return {lo, std::max(lo, hi)};
}

// Correlation of one image (in_c planes) into out (out_c planes), accumulating.
template <typename T>
void correlate(const T* x, const T* w, const ConvDims& d, T* out, std::vector<T>& scratch) {
  const Index cin = d.in_per_group(), cout = d.out_per_group();
  const Index k = cin * d.kh * d.kw, p = d.out_h * d.out_w, plane_in = d.in_h * d.in_w;
  if (d.depthwise()) {
    for (Index c = 0; c < d.in_c; ++c) {
      const T* xc = x + c * plane_in;
      const T* wc = w + c * d.kh * d.kw;
      T* oc = out + c * p;
      for (Index i = 0; i < d.kh; ++i) {
        for (Index j = 0; j < d.kw; ++j) {
          const T wv = wc[i * d.kw + j];
          const auto [lo, hi] = valid_columns(d, j);
          const Index sw = d.g.stride_w, off = j - d.g.pad_w;
          for (Index oh = 0; oh < d.out_h; ++oh) {
            const Index ih = oh * d.g.stride_h - d.g.pad_h + i;
            if (ih < 0 || ih >= d.in_h) continue;
            const T* src = xc + ih * d.in_w + off;
            T* dst = oc + oh * d.out_w;
            if (sw == 1) {
              for (Index ow = lo; ow < hi; ++ow) dst[ow] += wv * src[ow];
            } else {
              for (Index ow = lo; ow < hi; ++ow) dst[ow] += wv * src[ow * sw];
            }
          }
        }
      }
    }
    return;
  }
  for (Index grp = 0; grp < d.g.groups; ++grp) {
    const T* xg = x + grp * cin * plane_in;
    const T* cols = xg;
    if (!d.pointwise()) {
      scratch.resize(static_cast<std::size_t>(k * p));
      im2col(xg, cin, d, scratch.data());
      cols = scratch.data();
    }
    detail::gemm<T>(false, false, cout, p, k, w + grp * cout * k, cols, out + grp * cout * p, true);
  }
}

// Gradients of correlate(): weights from (x, gout); input grad into gx.
template <typename T>
void correlate_backward(const T* x, const T* w, const T* gout, const ConvDims& d, T* gx, T* gw,
                        std::vector<T>& scratch, std::vector<T>& scratch2) {
  const Index cin = d.in_per_group(), cout = d.out_per_group();
  const Index k = cin * d.kh * d.kw, p = d.out_h * d.out_w, plane_in = d.in_h * d.in_w;
  if (d.depthwise()) {
    for (Index c = 0; c < d.in_c; ++c) {
      const T* xc = x ? x + c * plane_in : nullptr;
      const T* wc = w + c * d.kh * d.kw;
      const T* gc = gout + c * p;
      T* gxc = gx ? gx + c * plane_in : nullptr;
      T* gwc = gw ? gw + c * d.kh * d.kw : nullptr;
      for (Index i = 0; i < d.kh; ++i) {
        for (Index j = 0; j < d.kw; ++j) {
          const T wv = wc[i * d.kw + j];
          const auto [lo, hi] = valid_columns(d, j);
          const Index sw = d.g.stride_w, off = j - d.g.pad_w;
          T acc = T(0);
          for (Index oh = 0; oh < d.out_h; ++oh) {
            const Index ih = oh * d.g.stride_h - d.g.pad_h + i;
            if (ih < 0 || ih >= d.in_h) continue;
            const T* gr = gc + oh * d.out_w;
            if (gwc) {
              const T* src = xc + ih * d.in_w + off;
              for (Index ow = lo; ow < hi; ++ow) acc += gr[ow] * src[ow * sw];
            }
            if (gxc) {
              T* dst = gxc + ih * d.in_w + off;
              for (Index ow = lo; ow < hi; ++ow) dst[ow * sw] += wv * gr[ow];
            }
          }
          if (gwc) gwc[i * d.kw + j] += acc;
        }
      }
    }
    return;
  }
  for (Index grp = 0; grp < d.g.groups; ++grp) {
    const T* xg = x ? x + grp * cin * plane_in : nullptr;
    const T* og = gout + grp * cout * p;
    const T* wg = w + grp * cout * k;
    if (d.pointwise()) {
      if (gw) detail::gemm<T>(false, true, cout, k, p, og, xg, gw + grp * cout * k, true);
      if (gx) detail::gemm<T>(true, false, k, p, cout, wg, og, gx + grp * cin * plane_in, true);
      continue;
    }
    if (gw) {
      scratch.resize(static_cast<std::size_t>(k * p));
      im2col(xg, cin, d, scratch.data());
      detail::gemm<T>(false, true, cout, k, p, og, scratch.data(), gw + grp * cout * k, true);
    }
    if (gx) {
      scratch2.resize(static_cast<std::size_t>(k * p));
      detail::gemm<T>(true, false, k, p, cout, wg, og, scratch2.data(), false);
      col2im(scratch2.data(), cin, d, gx + grp * cin * plane_in);
    }
  }
}

void check_groups(Index in_c, Index out_c, Index groups, const char* op) {
  if (groups < 1 || in_c % groups != 0 || out_c % groups != 0) {
    throw ShapeError(std::string(op) + ": channels " + std::to_string(in_c) + "->" + std::to_string(out_c) +
                     " not divisible by groups " + std::to_string(groups));
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias, const ConvGeometry& g) {
  detail::require_rank(x.shape(), 4, "conv2d");
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  ConvDims d{};
  d.batch = x.dim(0);
  d.in_c = x.dim(1);
  d.in_h = x.dim(2);
  d.in_w = x.dim(3);
  d.out_c = weight.dim(0);
  d.kh = weight.dim(2);
  d.kw = weight.dim(3);
  d.g = g;
  check_groups(d.in_c, d.out_c, g.groups, "conv2d");
  if (weight.dim(1) * g.groups != d.in_c) {
    throw ShapeError("conv2d: input has " + std::to_string(d.in_c) + " channels, weight expects " +
                     std::to_string(weight.dim(1) * g.groups));
  }
  if (bias.defined() && bias.numel() != d.out_c) throw ShapeError("conv2d: bias size mismatch");
  d.out_h = conv_output_size(d.in_h, d.kh, g.stride_h, g.pad_h);
  d.out_w = conv_output_size(d.in_w, d.kw, g.stride_w, g.pad_w);
  if (d.out_h < 1 || d.out_w < 1) throw ShapeError("conv2d: input " + to_string(x.shape()) + " smaller than kernel");

  const Index plane_out = d.out_h * d.out_w;
  std::vector<T> out(static_cast<std::size_t>(d.batch * d.out_c * plane_out), T(0));
  std::vector<T> scratch;
  auto xv = x.data();
  auto wv = weight.data();
  for (Index b = 0; b < d.batch; ++b) {
    T* ob = out.data() + b * d.out_c * plane_out;
    if (bias.defined()) {
      for (Index c = 0; c < d.out_c; ++c) std::fill_n(ob + c * plane_out, plane_out, bias[c]);
    }
    correlate(xv.data() + b * d.in_c * d.in_h * d.in_w, wv.data(), d, ob, scratch);
  }
  return make_output<T>(
      "conv2d", {d.batch, d.out_c, d.out_h, d.out_w}, std::move(out), {x, weight, bias},
      [x, weight, bias, d](const std::vector<T>& gout) {
        auto* gx = grad_sink(x);
        auto* gw = grad_sink(weight);
        const Index plane_in = d.in_h * d.in_w, plane_out = d.out_h * d.out_w;
        std::vector<T> s1, s2;
        for (Index b = 0; b < d.batch; ++b) {
          correlate_backward(x.data().data() + b * d.in_c * plane_in, weight.data().data(),
                             gout.data() + b * d.out_c * plane_out, d, gx ? gx->data() + b * d.in_c * plane_in : nullptr,
                             gw ? gw->data() : nullptr, s1, s2);
        }
        if (bias.defined()) {
          if (auto* gb = grad_sink(bias)) {
            for (Index b = 0; b < d.batch; ++b)
              for (Index c = 0; c < d.out_c; ++c) {
                const T* src = gout.data() + (b * d.out_c + c) * plane_out;
                T acc = T(0);
                for (Index i = 0; i < plane_out; ++i) acc += src[i];
                (*gb)[c] += acc;
              }
          }
        }
      });
}

template <typename T>
Tensor<T> conv2d_transposed(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias,
                            const ConvGeometry& g) {
  detail::require_rank(x.shape(), 4, "conv2d_transposed");
  detail::require_rank(weight.shape(), 4, "conv2d_transposed weight");
  const Index batch = x.dim(0), in_c = x.dim(1), h = x.dim(2), w = x.dim(3);
  if (weight.dim(0) != in_c) {
    throw ShapeError("conv2d_transposed: input has " + std::to_string(in_c) + " channels, weight expects " +
                     std::to_string(weight.dim(0)));
  }
  const Index out_c = weight.dim(1) * g.groups;
  check_groups(in_c, out_c, g.groups, "conv2d_transposed");
  if (bias.defined() && bias.numel() != out_c) throw ShapeError("conv2d_transposed: bias size mismatch");
  const Index kh = weight.dim(2), kw = weight.dim(3);
  const Index out_h = conv_transposed_output_size(h, kh, g.stride_h, g.pad_h);
  const Index out_w = conv_transposed_output_size(w, kw, g.stride_w, g.pad_w);
  if (out_h < 1 || out_w < 1) throw ShapeError("conv2d_transposed: empty output");

  // The forward correlation that this op is the adjoint of maps the output
  // grid (out_c channels) onto the input grid (in_c channels).
  ConvDims d{};
  d.batch = batch;
  d.in_c = out_c;
  d.in_h = out_h;
  d.in_w = out_w;
  d.out_c = in_c;
  d.out_h = h;
  d.out_w = w;
  d.kh = kh;
  d.kw = kw;
  d.g = g;
  if (conv_output_size(out_h, kh, g.stride_h, g.pad_h) != h || conv_output_size(out_w, kw, g.stride_w, g.pad_w) != w) {
    throw ShapeError("conv2d_transposed: geometry is not invertible for input " + to_string(x.shape()));
  }

  const Index plane_in = h * w, plane_out = out_h * out_w;
  std::vector<T> out(static_cast<std::size_t>(batch * out_c * plane_out), T(0));
  auto xv = x.data();
  auto wv = weight.data();
  {
    std::vector<T> s1, s2;
    for (Index b = 0; b < batch; ++b) {
      correlate_backward<T>(nullptr, wv.data(), xv.data() + b * in_c * plane_in, d, out.data() + b * out_c * plane_out,
                            nullptr, s1, s2);
    }
  }
  if (bias.defined()) {
    for (Index b = 0; b < batch; ++b)
      for (Index c = 0; c < out_c; ++c) {
        T* dst = out.data() + (b * out_c + c) * plane_out;
        for (Index i = 0; i < plane_out; ++i) dst[i] += bias[c];
      }
  }
  return make_output<T>(
      "conv2d_transposed", {batch, out_c, out_h, out_w}, std::move(out), {x, weight, bias},
      [x, weight, bias, d](const std::vector<T>& gout) {
        auto* gx = grad_sink(x);
        auto* gw = grad_sink(weight);
        const Index plane_small = d.out_h * d.out_w, plane_big = d.in_h * d.in_w;
        std::vector<T> scratch;
        for (Index b = 0; b < d.batch; ++b) {
          const T* gb = gout.data() + b * d.in_c * plane_big;
          if (gx) correlate(gb, weight.data().data(), d, gx->data() + b * d.out_c * plane_small, scratch);
          if (gw) {
            // dW[ci, co, i, j] = sum_p x[ci, p] * im2col(gout)[co,i,j, p]
            std::vector<T> s1, s2;
            correlate_backward<T>(gb, weight.data().data(), x.data().data() + b * d.out_c * plane_small, d, nullptr,
                                  gw->data(), s1, s2);
          }
        }
        if (bias.defined()) {
          if (auto* gbias = grad_sink(bias)) {
            for (Index b = 0; b < d.batch; ++b)
              for (Index c = 0; c < d.in_c; ++c) {
                const T* src = gout.data() + (b * d.in_c + c) * plane_big;
                T acc = T(0);
                for (Index i = 0; i < plane_big; ++i) acc += src[i];
                (*gbias)[c] += acc;
              }
          }
        }
      });
}

template <typename T>
Tensor<T> gelu(const Tensor<T>& x) {
  auto xv = x.data();
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    const double v = xv[i];
    out[i] = static_cast<T>(0.5 * v * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0)));
  }
  return make_output<T>("gelu", x.shape(), std::move(out), {x}, [x](const std::vector<T>& g) {
    if (auto* s = grad_sink(x)) {
      auto xv = x.data();
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        const double v = xv[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * std::numbers::sqrt2 / 2.0));
        const double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
        (*s)[i] += static_cast<T>(g[i] * (cdf + v * pdf));
      }
    }
  });
}

template <typename T>
Tensor<T> batch_norm2d(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, Tensor<T>& running_mean,
                       Tensor<T>& running_var, bool training, double momentum, double eps) {
  detail::require_rank(x.shape(), 4, "batch_norm2d");
  const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels || running_mean.numel() != channels ||
      running_var.numel() != channels) {
    throw ShapeError("batch_norm2d: parameter size does not match " + std::to_string(channels) + " channels");
  }
  const Index count = batch * plane;
  if (training && count < 2) {
    throw ShapeError("batch_norm2d: training mode needs at least 2 values per channel, got " + std::to_string(count));
  }
  auto xv = x.data();
  std::vector<T> out(xv.size());
  std::vector<T> xhat(xv.size());
  std::vector<double> inv_std(static_cast<std::size_t>(channels));
  auto rm = running_mean.mutable_data();
  auto rv = running_var.mutable_data();
  for (Index c = 0; c < channels; ++c) {
    double mu, var;
    if (training) {
      double acc = 0.0;
      for (Index b = 0; b < batch; ++b) {
        const T* src = xv.data() + (b * channels + c) * plane;
        for (Index i = 0; i < plane; ++i) acc += src[i];
      }
      mu = acc / static_cast<double>(count);
      double sq = 0.0;
      for (Index b = 0; b < batch; ++b) {
        const T* src = xv.data() + (b * channels + c) * plane;
        for (Index i = 0; i < plane; ++i) {
          const double dlt = src[i] - mu;
          sq += dlt * dlt;
        }
      }
      var = sq / static_cast<double>(count);
      rm[c] = static_cast<T>((1.0 - momentum) * rm[c] + momentum * mu);
      rv[c] = static_cast<T>((1.0 - momentum) * rv[c] + momentum * var * static_cast<double>(count) /
                                                          static_cast<double>(count - 1));
    } else {
      mu = rm[c];
      var = rv[c];
    }
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[c] = is;
    const double gm = gamma[c], bt = beta[c];
    for (Index b = 0; b < batch; ++b) {
      const Index off = (b * channels + c) * plane;
      for (Index i = 0; i < plane; ++i) {
        const double n = (xv[off + i] - mu) * is;
        xhat[off + i] = static_cast<T>(n);
        out[off + i] = static_cast<T>(gm * n + bt);
      }
    }
  }
  return make_output<T>(
      "batch_norm2d", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), training, batch, channels,
       plane](const std::vector<T>& g) {
        auto* gx = grad_sink(x);
        auto* gg = grad_sink(gamma);
        auto* gb = grad_sink(beta);
        const double count = static_cast<double>(batch * plane);
        for (Index c = 0; c < channels; ++c) {
          double sum_g = 0.0, sum_gx = 0.0;
          for (Index b = 0; b < batch; ++b) {
            const Index off = (b * channels + c) * plane;
            for (Index i = 0; i < plane; ++i) {
              sum_g += g[off + i];
              sum_gx += static_cast<double>(g[off + i]) * xhat[off + i];
            }
          }
          if (gg) (*gg)[c] += static_cast<T>(sum_gx);
          if (gb) (*gb)[c] += static_cast<T>(sum_g);
          if (!gx) continue;
          const double gm = gamma[c];
          const double is = inv_std[c];
          for (Index b = 0; b < batch; ++b) {
            const Index off = (b * channels + c) * plane;
            for (Index i = 0; i < plane; ++i) {
              double v;
              if (training) {
                v = gm * is * (g[off + i] - sum_g / count - xhat[off + i] * sum_gx / count);
              } else {
                v = gm * is * g[off + i];
              }
              (*gx)[off + i] += static_cast<T>(v);
            }
          }
        }
      });
}

template <typename T>
Tensor<T> dropout(const Tensor<T>& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  auto xv = x.data();
  const T keep_scale = static_cast<T>(1.0 / (1.0 - rate));
  std::vector<T> mask(xv.size());
  std::vector<T> out(xv.size());
  for (std::size_t i = 0; i < xv.size(); ++i) {
    mask[i] = rng.uniform() >= rate ? keep_scale : T(0);
    out[i] = xv[i] * mask[i];
  }
  return make_output<T>("dropout", x.shape(), std::move(out), {x}, [x, mask = std::move(mask)](const std::vector<T>& g) {
    if (auto* s = grad_sink(x)) {
      for (std::size_t i = 0; i < g.size(); ++i) (*s)[i] += g[i] * mask[i];
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& x) {
  detail::require_rank(x.shape(), 4, "global_avg_pool");
  const Index n = x.dim(0) * x.dim(1), plane = x.dim(2) * x.dim(3);
  if (plane < 1) throw ShapeError("global_avg_pool: empty spatial extent");
  auto xv = x.data();
  std::vector<T> out(static_cast<std::size_t>(n));
  for (Index p = 0; p < n; ++p) {
    double acc = 0.0;
    for (Index i = 0; i < plane; ++i) acc += xv[p * plane + i];
    out[p] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return make_output<T>("global_avg_pool", {x.dim(0), x.dim(1)}, std::move(out), {x}, [x, n, plane](const std::vector<T>& g) {
    if (auto* s = grad_sink(x)) {
      const T inv = T(1) / static_cast<T>(plane);
      for (Index p = 0; p < n; ++p)
        for (Index i = 0; i < plane; ++i) (*s)[p * plane + i] += g[p] * inv;
    }
  });
}

template <typename T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(x.shape(), 2, "linear");
  detail::require_rank(weight.shape(), 2, "linear weight");
  const Index n = x.dim(0), in = x.dim(1), out_f = weight.dim(0);
  if (weight.dim(1) != in) {
    throw ShapeError("linear: input features " + std::to_string(in) + " but weight is " + to_string(weight.shape()));
  }
  if (bias.defined() && bias.numel() != out_f) throw ShapeError("linear: bias size mismatch");
  std::vector<T> out(static_cast<std::size_t>(n * out_f), T(0));
  if (bias.defined()) {
    for (Index r = 0; r < n; ++r) std::copy_n(bias.data().data(), out_f, out.data() + r * out_f);
  }
  detail::gemm<T>(false, true, n, out_f, in, x.data().data(), weight.data().data(), out.data(), true);
  return make_output<T>("linear", {n, out_f}, std::move(out), {x, weight, bias},
                        [x, weight, bias, n, in, out_f](const std::vector<T>& g) {
                          if (auto* s = grad_sink(x))
                            detail::gemm<T>(false, false, n, in, out_f, g.data(), weight.data().data(), s->data(), true);
                          if (auto* s = grad_sink(weight))
                            detail::gemm<T>(true, false, out_f, in, n, g.data(), x.data().data(), s->data(), true);
                          if (bias.defined()) {
                            if (auto* s = grad_sink(bias)) {
                              for (Index r = 0; r < n; ++r)
                                for (Index c = 0; c < out_f; ++c) (*s)[c] += g[r * out_f + c];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> softmax_cross_entropy(const Tensor<T>& logits, std::span<const int> labels) {
  detail::require_rank(logits.shape(), 2, "softmax_cross_entropy");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  if (static_cast<Index>(labels.size()) != batch) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  for (int label : labels) {
    if (label < 0 || label >= classes) {
      throw std::out_of_range("softmax_cross_entropy: label " + std::to_string(label) + " outside [0, " +
                              std::to_string(classes) + ")");
    }
  }
  auto z = logits.data();
  std::vector<T> probs(z.size());
  double total = 0.0;
  for (Index b = 0; b < batch; ++b) {
    const T* row = z.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double acc = 0.0;
    for (Index k = 0; k < classes; ++k) acc += std::exp(static_cast<double>(row[k]) - mx);
    const double lse = mx + std::log(acc);
    for (Index k = 0; k < classes; ++k) probs[b * classes + k] = static_cast<T>(std::exp(row[k] - lse));
    total += lse - row[labels[b]];
  }
  std::vector<int> saved(labels.begin(), labels.end());
  return make_output<T>("softmax_cross_entropy", {}, {static_cast<T>(total / static_cast<double>(batch))}, {logits},
                        [logits, probs = std::move(probs), saved = std::move(saved), batch, classes](const std::vector<T>& g) {
                          if (auto* s = grad_sink(logits)) {
                            const T f = g[0] / static_cast<T>(batch);
                            for (Index b = 0; b < batch; ++b)
                              for (Index k = 0; k < classes; ++k) {
                                T p = probs[b * classes + k];
                                if (k == saved[b]) p -= T(1);
                                (*s)[b * classes + k] += f * p;
                              }
                          }
                        });
}

template <typename T>
std::vector<T> softmax_rows(const Tensor<T>& logits) {
  detail::require_rank(logits.shape(), 2, "softmax_rows");
  const Index batch = logits.dim(0), classes = logits.dim(1);
  auto z = logits.data();
  std::vector<T> out(z.size());
  for (Index b = 0; b < batch; ++b) {
    const T* row = z.data() + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double acc = 0.0;
    for (Index k = 0; k < classes; ++k) acc += std::exp(row[k] - mx);
    for (Index k = 0; k < classes; ++k) out[b * classes + k] = static_cast<T>(std::exp(row[k] - mx) / acc);
  }
  return out;
}

template <typename T>
Tensor<T> layer_norm_channels(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta, double eps) {
  detail::require_rank(x.shape(), 4, "layer_norm_channels");
  const Index batch = x.dim(0), channels = x.dim(1), plane = x.dim(2) * x.dim(3);
  if (gamma.numel() != channels || beta.numel() != channels) {
    throw ShapeError("layer_norm_channels: affine size does not match " + std::to_string(channels) + " channels");
  }
  auto xv = x.data();
  std::vector<T> out(xv.size()), xhat(xv.size());
  std::vector<double> inv_std(static_cast<std::size_t>(batch * plane));
  for (Index b = 0; b < batch; ++b) {
    const Index base = b * channels * plane;
    for (Index p = 0; p < plane; ++p) {
      double acc = 0.0;
      for (Index c = 0; c < channels; ++c) acc += xv[base + c * plane + p];
      const double mu = acc / static_cast<double>(channels);
      double sq = 0.0;
      for (Index c = 0; c < channels; ++c) {
        const double dlt = xv[base + c * plane + p] - mu;
        sq += dlt * dlt;
      }
      const double is = 1.0 / std::sqrt(sq / static_cast<double>(channels) + eps);
      inv_std[b * plane + p] = is;
      for (Index c = 0; c < channels; ++c) {
        const Index i = base + c * plane + p;
        const double n = (xv[i] - mu) * is;
        xhat[i] = static_cast<T>(n);
        out[i] = static_cast<T>(gamma[c] * n + beta[c]);
      }
    }
  }
  return make_output<T>(
      "layer_norm_channels", x.shape(), std::move(out), {x, gamma, beta},
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), batch, channels, plane](const std::vector<T>& g) {
        auto* gx = grad_sink(x);
        auto* gg = grad_sink(gamma);
        auto* gb = grad_sink(beta);
        const double n = static_cast<double>(channels);
        for (Index b = 0; b < batch; ++b) {
          const Index base = b * channels * plane;
          for (Index p = 0; p < plane; ++p) {
            double sum_d = 0.0, sum_dx = 0.0;
            for (Index c = 0; c < channels; ++c) {
              const Index i = base + c * plane + p;
              if (gg) (*gg)[c] += g[i] * xhat[i];
              if (gb) (*gb)[c] += g[i];
              const double d = static_cast<double>(g[i]) * gamma[c];
              sum_d += d;
              sum_dx += d * xhat[i];
            }
            if (!gx) continue;
            const double is = inv_std[b * plane + p];
            for (Index c = 0; c < channels; ++c) {
              const Index i = base + c * plane + p;
              const double d = static_cast<double>(g[i]) * gamma[c];
              (*gx)[i] += static_cast<T>(is * (d - sum_d / n - xhat[i] * sum_dx / n));
            }
          }
        }
      });
}

// ---------------------------------------------------------------- layers

template <typename T>
Index Registry<T>::parameter_count() const {
  Index n = 0;
  for (const auto& p : parameters) n += p.tensor.numel();
  return n;
}

template <typename T>
std::vector<Tensor<T>> Registry<T>::parameter_tensors() const {
  std::vector<Tensor<T>> out;
  out.reserve(parameters.size());
  for (const auto& p : parameters) out.push_back(p.tensor);
  return out;
}

namespace {

template <typename T>
Tensor<T> uniform_tensor(Shape shape, double bound, Rng& rng) {
  std::vector<T> v(static_cast<std::size_t>(numel(shape)));
  for (T& x : v) x = static_cast<T>(rng.uniform(-bound, bound));
  return Tensor<T>::from(std::move(shape), std::move(v), true);
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
  check_groups(spec.in_channels, spec.out_channels, spec.geometry.groups, "Conv2d");
  const Index in_g = spec.in_channels / spec.geometry.groups;
  const double bound = init_bound(in_g * spec.kernel_h * spec.kernel_w);
  weight = uniform_tensor<T>({spec.out_channels, in_g, spec.kernel_h, spec.kernel_w}, bound, rng);
  if (spec.bias) bias = uniform_tensor<T>({spec.out_channels}, bound, rng);
}

template <typename T>
Tensor<T> Conv2d<T>::operator()(const Tensor<T>& x) const {
  if (x.rank() == 4 && x.dim(1) != spec_.in_channels) {
    throw ShapeError("Conv2d: expected " + std::to_string(spec_.in_channels) + " input channels, got " +
                     std::to_string(x.dim(1)));
  }
  return conv2d(x, weight, bias, spec_.geometry);
}

template <typename T>
void Conv2d<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  reg.add_parameter(prefix + ".weight", weight);
  if (bias.defined()) reg.add_parameter(prefix + ".bias", bias);
}

template <typename T>
ConvTranspose2d<T>::ConvTranspose2d(const ConvSpec& spec, Rng& rng) : spec_(spec) {
  const auto& g = spec.geometry;
  check_groups(spec.in_channels, spec.out_channels, g.groups, "ConvTranspose2d");
  const Index in_g = spec.in_channels / g.groups;
  // Each output pixel receives ceil(k/s)^2 kernel taps per input channel.
  const Index taps_h = (spec.kernel_h + g.stride_h - 1) / g.stride_h;
  const Index taps_w = (spec.kernel_w + g.stride_w - 1) / g.stride_w;
  const double bound = init_bound(in_g * taps_h * taps_w);
  weight = uniform_tensor<T>({spec.in_channels, spec.out_channels / g.groups, spec.kernel_h, spec.kernel_w}, bound, rng);
  if (spec.bias) bias = uniform_tensor<T>({spec.out_channels}, bound, rng);
}

template <typename T>
Tensor<T> ConvTranspose2d<T>::operator()(const Tensor<T>& x) const {
  return conv2d_transposed(x, weight, bias, spec_.geometry);
}

template <typename T>
void ConvTranspose2d<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  reg.add_parameter(prefix + ".weight", weight);
  if (bias.defined()) reg.add_parameter(prefix + ".bias", bias);
}

template <typename T>
BatchNorm2d<T>::BatchNorm2d(Index channels, double momentum_, double eps_)
    : gamma(Tensor<T>::full({channels}, T(1), true)),
      beta(Tensor<T>::zeros({channels}, true)),
      running_mean(Tensor<T>::zeros({channels})),
      running_var(Tensor<T>::full({channels}, T(1))),
      momentum(momentum_),
      eps(eps_) {}

template <typename T>
Tensor<T> BatchNorm2d<T>::operator()(const Tensor<T>& x, bool training) {
  return batch_norm2d(x, gamma, beta, running_mean, running_var, training, momentum, eps);
}

template <typename T>
void BatchNorm2d<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  reg.add_parameter(prefix + ".gamma", gamma);
  reg.add_parameter(prefix + ".beta", beta);
  reg.add_buffer(prefix + ".running_mean", running_mean);
  reg.add_buffer(prefix + ".running_var", running_var);
}

template <typename T>
Linear<T>::Linear(Index in_features, Index out_features, Rng& rng)
    : weight(uniform_tensor<T>({out_features, in_features}, init_bound(in_features), rng)),
      bias(uniform_tensor<T>({out_features}, init_bound(in_features), rng)) {}

template <typename T>
void Linear<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  reg.add_parameter(prefix + ".weight", weight);
  reg.add_parameter(prefix + ".bias", bias);
}

template <typename T>
ChannelLayerNorm<T>::ChannelLayerNorm(Index channels, double eps_)
    : gamma(Tensor<T>::full({channels}, T(1), true)), beta(Tensor<T>::zeros({channels}, true)), eps(eps_) {}

template <typename T>
void ChannelLayerNorm<T>::register_into(const std::string& prefix, Registry<T>& reg) const {
  reg.add_parameter(prefix + ".gamma", gamma);
  reg.add_parameter(prefix + ".beta", beta);
}

template <typename T>
void zero_parameters(const Registry<T>& reg) {
  for (const auto& p : reg.parameters) {
    Tensor<T> t = p.tensor;
    auto d = t.mutable_data();
    std::fill(d.begin(), d.end(), T(0));
  }
}

#define WAVEMIX_INSTANTIATE(T)                                                                                     \
  template Tensor<T> conv2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&);          \
  template Tensor<T> conv2d_transposed<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, const ConvGeometry&); \
  template Tensor<T> gelu<T>(const Tensor<T>&);                                                                    \
  template Tensor<T> batch_norm2d<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, Tensor<T>&, Tensor<T>&,   \
                                     bool, double, double);                                                        \
  template Tensor<T> dropout<T>(const Tensor<T>&, double, bool, Rng&);                                             \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                                         \
  template Tensor<T> linear<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                              \
  template Tensor<T> softmax_cross_entropy<T>(const Tensor<T>&, std::span<const int>);                             \
  template std::vector<T> softmax_rows<T>(const Tensor<T>&);                                                       \
  template Tensor<T> layer_norm_channels<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, double);         \
  template struct Registry<T>;                                                                                     \
  template class Conv2d<T>;                                                                                        \
  template class ConvTranspose2d<T>;                                                                               \
  template class BatchNorm2d<T>;                                                                                   \
  template class Linear<T>;                                                                                        \
  template class ChannelLayerNorm<T>;                                                                              \
  template void zero_parameters<T>(const Registry<T>&);

WAVEMIX_INSTANTIATE(float)
WAVEMIX_INSTANTIATE(double)

#undef WAVEMIX_INSTANTIATE

}  // namespace wavemix
