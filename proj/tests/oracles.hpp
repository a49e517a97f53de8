#pragma once
// Straight-from-the-definition reference implementations used as test oracles.
// Everything here is double precision and loop-based on purpose.

#include <cmath>
#include <complex>
#include <numbers>
#include <vector>

#include "wavemix/rng.hpp"
#include "wavemix/tensor.hpp"

namespace oracle {

using wavemix::Index;

template <typename T>
wavemix::Tensor<T> random_tensor(wavemix::Shape shape, wavemix::Rng& rng, double scale = 1.0) {
  std::vector<T> v(static_cast<std::size_t>(wavemix::numel(shape)));
  for (auto& x : v) x = static_cast<T>(scale * rng.normal());
  return wavemix::Tensor<T>::from(std::move(shape), std::move(v));
}

template <typename T>
std::vector<double> to_double(const wavemix::Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

template <typename T>
double max_abs_diff(const wavemix::Tensor<T>& a, const std::vector<double>& b) {
  return max_abs_diff(to_double(a), b);
}

template <typename T>
double max_abs_diff(const wavemix::Tensor<T>& a, const wavemix::Tensor<T>& b) {
  return max_abs_diff(to_double(a), to_double(b));
}

template <typename T>
double dot(const wavemix::Tensor<T>& a, const wavemix::Tensor<T>& b) {
  double s = 0.0;
  for (Index i = 0; i < a.numel(); ++i) s += static_cast<double>(a[i]) * static_cast<double>(b[i]);
  return s;
}

template <typename T>
double squared_norm(const wavemix::Tensor<T>& a) {
  return dot(a, a);
}

struct Conv {
  Index batch, cin, h, w, cout, kh, kw, sh = 1, sw = 1, ph = 0, pw = 0, groups = 1;
  Index out_h() const { return (h + 2 * ph - kh) / sh + 1; }
  Index out_w() const { return (w + 2 * pw - kw) / sw + 1; }
  Index tout_h() const { return (h - 1) * sh - 2 * ph + kh; }
  Index tout_w() const { return (w - 1) * sw - 2 * pw + kw; }
};

/// y[b,o,i,j] = bias[o] + sum_{c in group, u, v} w[o, c, u, v] * x[b, c, i*sh - ph + u, j*sw - pw + v]
inline std::vector<double> conv2d(const std::vector<double>& x, const std::vector<double>& w,
                                  const std::vector<double>& bias, const Conv& c) {
  const Index oh = c.out_h(), ow = c.out_w(), cin_g = c.cin / c.groups, cout_g = c.cout / c.groups;
  std::vector<double> y(static_cast<std::size_t>(c.batch * c.cout * oh * ow), 0.0);
  for (Index b = 0; b < c.batch; ++b)
    for (Index o = 0; o < c.cout; ++o)
      for (Index i = 0; i < oh; ++i)
        for (Index j = 0; j < ow; ++j) {
          double s = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
          const Index g = o / cout_g;
          for (Index cl = 0; cl < cin_g; ++cl)
            for (Index u = 0; u < c.kh; ++u)
              for (Index v = 0; v < c.kw; ++v) {
                const Index ii = i * c.sh - c.ph + u, jj = j * c.sw - c.pw + v;
                if (ii < 0 || ii >= c.h || jj < 0 || jj >= c.w) continue;
                const Index ch = g * cin_g + cl;
                s += w[static_cast<std::size_t>(((o * cin_g + cl) * c.kh + u) * c.kw + v)] *
                     x[static_cast<std::size_t>(((b * c.cin + ch) * c.h + ii) * c.w + jj)];
              }
          y[static_cast<std::size_t>(((b * c.cout + o) * oh + i) * ow + j)] = s;
        }
  return y;
}

/// Scatter form: every input pixel stamps its weighted kernel onto the output.
/// w has layout (cin, cout/groups, kh, kw).
inline std::vector<double> conv2d_transposed(const std::vector<double>& x, const std::vector<double>& w,
                                             const std::vector<double>& bias, const Conv& c) {
  const Index oh = c.tout_h(), ow = c.tout_w(), cin_g = c.cin / c.groups, cout_g = c.cout / c.groups;
  std::vector<double> y(static_cast<std::size_t>(c.batch * c.cout * oh * ow), 0.0);
  for (Index b = 0; b < c.batch; ++b) {
    for (Index o = 0; o < c.cout; ++o)
      for (Index p = 0; p < oh * ow; ++p)
        y[static_cast<std::size_t>((b * c.cout + o) * oh * ow + p)] = bias.empty() ? 0.0 : bias[static_cast<std::size_t>(o)];
    for (Index ci = 0; ci < c.cin; ++ci) {
      const Index g = ci / cin_g;
      for (Index i = 0; i < c.h; ++i)
        for (Index j = 0; j < c.w; ++j) {
          const double xv = x[static_cast<std::size_t>(((b * c.cin + ci) * c.h + i) * c.w + j)];
          for (Index ol = 0; ol < cout_g; ++ol)
            for (Index u = 0; u < c.kh; ++u)
              for (Index v = 0; v < c.kw; ++v) {
                const Index oi = i * c.sh - c.ph + u, oj = j * c.sw - c.pw + v;
                if (oi < 0 || oi >= oh || oj < 0 || oj >= ow) continue;
                const Index o = g * cout_g + ol;
                y[static_cast<std::size_t>(((b * c.cout + o) * oh + oi) * ow + oj)] +=
                    xv * w[static_cast<std::size_t>(((ci * cout_g + ol) * c.kh + u) * c.kw + v)];
              }
        }
    }
  }
  return y;
}

/// Re of the full 3D DFT over (C, H, W) of each batch item, summed directly.
inline std::vector<double> dft3_real(const std::vector<double>& x, Index batch, Index C, Index H, Index W) {
  std::vector<double> y(x.size(), 0.0);
  const double tau = 2.0 * std::numbers::pi;
  for (Index b = 0; b < batch; ++b)
    for (Index k = 0; k < C; ++k)
      for (Index u = 0; u < H; ++u)
        for (Index v = 0; v < W; ++v) {
          std::complex<double> s = 0.0;
          for (Index c = 0; c < C; ++c)
            for (Index h = 0; h < H; ++h)
              for (Index w = 0; w < W; ++w) {
                const double phase = tau * (static_cast<double>(k * c) / C + static_cast<double>(u * h) / H +
                                            static_cast<double>(v * w) / W);
                s += x[static_cast<std::size_t>(((b * C + c) * H + h) * W + w)] * std::polar(1.0, -phase);
              }
          y[static_cast<std::size_t>(((b * C + k) * H + u) * W + v)] = s.real();
        }
  return y;
}

/// One Haar level built from the separable 1D filters (1/sqrt2)[1, 1] and
/// (1/sqrt2)[1, -1]: low/high pass along width, then along height. Input
/// dimensions must be even. Output layout [LL | LH_w | HL_w | HH] = [A|Dh|Dv|Dd].
inline std::vector<double> haar_level(const std::vector<double>& x, Index batch, Index C, Index H, Index W) {
  const double r = 1.0 / std::sqrt(2.0);
  const Index h2 = H / 2, w2 = W / 2;
  std::vector<double> y(static_cast<std::size_t>(batch * 4 * C * h2 * w2));
  for (Index b = 0; b < batch; ++b)
    for (Index c = 0; c < C; ++c) {
      // rows filtered along width
      std::vector<double> lo(static_cast<std::size_t>(H * w2)), hi(lo.size());
      for (Index i = 0; i < H; ++i)
        for (Index j = 0; j < w2; ++j) {
          const double p = x[static_cast<std::size_t>(((b * C + c) * H + i) * W + 2 * j)];
          const double q = x[static_cast<std::size_t>(((b * C + c) * H + i) * W + 2 * j + 1)];
          lo[static_cast<std::size_t>(i * w2 + j)] = r * (p + q);
          hi[static_cast<std::size_t>(i * w2 + j)] = r * (p - q);
        }
      for (Index i = 0; i < h2; ++i)
        for (Index j = 0; j < w2; ++j) {
          const auto at = [&](const std::vector<double>& m, Index row) { return m[static_cast<std::size_t>(row * w2 + j)]; };
          const double ll = r * (at(lo, 2 * i) + at(lo, 2 * i + 1));
          const double lh = r * (at(hi, 2 * i) + at(hi, 2 * i + 1));
          const double hl = r * (at(lo, 2 * i) - at(lo, 2 * i + 1));
          const double hh = r * (at(hi, 2 * i) - at(hi, 2 * i + 1));
          const double vals[4] = {ll, lh, hl, hh};
          for (int g = 0; g < 4; ++g)
            y[static_cast<std::size_t>(((b * 4 * C + g * C + c) * h2 + i) * w2 + j)] = vals[g];
        }
    }
  return y;
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

}  // namespace oracle
