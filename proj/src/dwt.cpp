#include "wavemix/dwt.hpp"

#include <algorithm>
#include <string>

namespace wavemix {

using detail::grad_sink;
using detail::make_output;

namespace {

// in (B,C,H,W) with even H,W  ->  out (B,4C,H/2,W/2), accumulate when asked.
template <typename T>
void haar_analysis(const T* in, Index batch, Index channels, Index h, Index w, T* out, bool accumulate) {
  const Index oh = h / 2, ow = w / 2, plane = oh * ow;
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const T* src = in + (b * channels + c) * h * w;
      T* A = out + (b * 4 * channels + c) * plane;
      T* Dh = A + channels * plane;
      T* Dv = Dh + channels * plane;
      T* Dd = Dv + channels * plane;
      for (Index i = 0; i < oh; ++i) {
        const T* top = src + (2 * i) * w;
        const T* bot = top + w;
        for (Index j = 0; j < ow; ++j) {
          const T a = top[2 * j], bb = top[2 * j + 1], cc = bot[2 * j], d = bot[2 * j + 1];
          const T s0 = (a + bb) + (cc + d);
          const T s1 = (a - bb) + (cc - d);
          const T s2 = (a + bb) - (cc + d);
          const T s3 = (a - bb) - (cc - d);
          const Index k = i * ow + j;
          if (accumulate) {
            A[k] += s0 / T(2);
            Dh[k] += s1 / T(2);
            Dv[k] += s2 / T(2);
            Dd[k] += s3 / T(2);
          } else {
            A[k] = s0 / T(2);
            Dh[k] = s1 / T(2);
            Dv[k] = s2 / T(2);
            Dd[k] = s3 / T(2);
          }
        }
      }
    }
  }
}

// in (B,4C,h,w) -> out (B,C,2h,2w)
template <typename T>
void haar_synthesis(const T* in, Index batch, Index channels, Index h, Index w, T* out, bool accumulate) {
  const Index plane = h * w, ow = 2 * w;
  for (Index b = 0; b < batch; ++b) {
    for (Index c = 0; c < channels; ++c) {
      const T* A = in + (b * 4 * channels + c) * plane;
      const T* Dh = A + channels * plane;
      const T* Dv = Dh + channels * plane;
      const T* Dd = Dv + channels * plane;
      T* dst = out + (b * channels + c) * 4 * plane;
      for (Index i = 0; i < h; ++i) {
        T* top = dst + (2 * i) * ow;
        T* bot = top + ow;
        for (Index j = 0; j < w; ++j) {
          const Index k = i * w + j;
          const T aa = A[k], hh = Dh[k], vv = Dv[k], dd = Dd[k];
          const T a = ((aa + hh) + (vv + dd)) / T(2);
          const T bq = ((aa - hh) + (vv - dd)) / T(2);
          const T cq = ((aa + hh) - (vv + dd)) / T(2);
          const T d = ((aa - hh) - (vv - dd)) / T(2);
          if (accumulate) {
            top[2 * j] += a;
            top[2 * j + 1] += bq;
            bot[2 * j] += cq;
            bot[2 * j + 1] += d;
          } else {
            top[2 * j] = a;
            top[2 * j + 1] = bq;
            bot[2 * j] = cq;
            bot[2 * j + 1] = d;
          }
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> dwt2_level(const Tensor<T>& x, LevelPad* pad) {
  detail::require_rank(x.shape(), 4, "dwt2_level");
  const LevelPad applied{x.dim(2) % 2, x.dim(3) % 2};
  if (pad) *pad = applied;
  const Tensor<T> xp = pad2d(x, Pad2d{0, applied.bottom, 0, applied.right});
  const Index batch = xp.dim(0), channels = xp.dim(1), h = xp.dim(2), w = xp.dim(3);
  if (h < 2 || w < 2) throw ShapeError("dwt2_level: input " + to_string(x.shape()) + " is smaller than 2x2");
  std::vector<T> out(static_cast<std::size_t>(xp.numel()));
  haar_analysis(xp.data().data(), batch, channels, h, w, out.data(), false);
  return make_output<T>("dwt2_level", {batch, 4 * channels, h / 2, w / 2}, std::move(out), {xp},
                        [xp, batch, channels, h, w](const std::vector<T>& g) {
                          if (auto* s = grad_sink(xp)) haar_synthesis(g.data(), batch, channels, h / 2, w / 2, s->data(), true);
                        });
}

template <typename T>
Tensor<T> idwt2_level(const Tensor<T>& y) {
  detail::require_rank(y.shape(), 4, "idwt2_level");
  if (y.dim(1) % 4 != 0) {
    throw ShapeError("idwt2_level: channel count " + std::to_string(y.dim(1)) + " is not divisible by 4");
  }
  const Index batch = y.dim(0), channels = y.dim(1) / 4, h = y.dim(2), w = y.dim(3);
  std::vector<T> out(static_cast<std::size_t>(y.numel()));
  haar_synthesis(y.data().data(), batch, channels, h, w, out.data(), false);
  return make_output<T>("idwt2_level", {batch, channels, 2 * h, 2 * w}, std::move(out), {y},
                        [y, batch, channels, h, w](const std::vector<T>& g) {
                          if (auto* s = grad_sink(y)) haar_analysis(g.data(), batch, channels, 2 * h, 2 * w, s->data(), true);
                        });
}

template <typename T>
Tensor<T> SubbandPyramid<T>::subband(std::size_t level, int group) const {
  if (level < 1 || level > levels.size()) throw std::out_of_range("SubbandPyramid: level out of range");
  if (group < 0 || group > 3) throw std::out_of_range("SubbandPyramid: subband group must be 0..3");
  return slice_channels(levels[level - 1], group * channels, channels);
}

template <typename T>
SubbandPyramid<T> dwt2_pyramid(const Tensor<T>& x, int levels) {
  detail::require_rank(x.shape(), 4, "dwt2_pyramid");
  if (levels < 1) throw std::invalid_argument("dwt2_pyramid: need at least one level");
  SubbandPyramid<T> pyr;
  pyr.channels = x.dim(1);
  pyr.height = x.dim(2);
  pyr.width = x.dim(3);
  Tensor<T> approx = x;
  for (int l = 1; l <= levels; ++l) {
    if (approx.dim(2) < 2 || approx.dim(3) < 2) {
      throw std::invalid_argument("dwt2_pyramid: " + std::to_string(levels) + " levels is too many for input " +
                                  to_string(x.shape()) + " (level " + std::to_string(l) + " input is " +
                                  std::to_string(approx.dim(2)) + "x" + std::to_string(approx.dim(3)) + ")");
    }
    LevelPad pad;
    Tensor<T> level = dwt2_level(approx, &pad);
    pyr.pads.push_back(pad);
    pyr.levels.push_back(level);
    if (l < levels) approx = slice_channels(level, 0, pyr.channels);
  }
  return pyr;
}

template <typename T>
Tensor<T> reconstruct(const SubbandPyramid<T>& pyr) {
  if (pyr.levels.empty()) throw std::invalid_argument("reconstruct: empty pyramid");
  const Index c = pyr.channels;
  Tensor<T> approx = idwt2_level(pyr.levels.back());
  for (std::size_t l = pyr.levels.size() - 1; l >= 1; --l) {
    // approx currently reconstructs the A group of level l (1-based), padded.
    const Tensor<T>& level = pyr.levels[l - 1];
    const LevelPad& pad = pyr.pads[l];
    approx = crop2d(approx, 0, 0, approx.dim(2) - pad.bottom, approx.dim(3) - pad.right);
    std::vector<Tensor<T>> parts{approx, slice_channels(level, c, 3 * c)};
    approx = idwt2_level(concat_channels<T>(parts));
  }
  const LevelPad& first = pyr.pads.front();
  return crop2d(approx, 0, 0, approx.dim(2) - first.bottom, approx.dim(3) - first.right);
}

int compute_levels(Index height, Index width) {
  const Index m = std::min(height, width);
  if (m < 4) {
    throw std::invalid_argument("compute_levels: min(H,W) must be at least 4, got " + std::to_string(m));
  }
  int levels = 0;
  for (Index s = m; s > 2; s = (s + 1) / 2) ++levels;
  return levels;
}

std::vector<std::pair<Index, Index>> level_sizes(Index height, Index width, int levels) {
  std::vector<std::pair<Index, Index>> out;
  for (int l = 0; l < levels; ++l) {
    height = (height + 1) / 2;
    width = (width + 1) / 2;
    out.emplace_back(height, width);
  }
  return out;
}

#define WAVEMIX_INSTANTIATE(T)                                            \
  template Tensor<T> dwt2_level<T>(const Tensor<T>&, LevelPad*);          \
  template Tensor<T> idwt2_level<T>(const Tensor<T>&);                    \
  template struct SubbandPyramid<T>;                                      \
  template SubbandPyramid<T> dwt2_pyramid<T>(const Tensor<T>&, int);      \
  template Tensor<T> reconstruct<T>(const SubbandPyramid<T>&);

WAVEMIX_INSTANTIATE(float)
WAVEMIX_INSTANTIATE(double)

#undef WAVEMIX_INSTANTIATE

}  // namespace wavemix
