#pragma once

#include <vector>

#include "wavemix/tensor.hpp"

namespace wavemix {

// Orthonormal 2D Haar transform on disjoint 2x2 blocks
//
//     [a b]      A  = (a + b + c + d) / 2
//     [c d]  ->  Dh = (a - b + c - d) / 2
//                Dv = (a + b - c - d) / 2
//                Dd = (a - b - c + d) / 2
//
// Output channels are grouped by subband: [A | Dh | Dv | Dd], each group
// holding the C input channels in order. The block matrix is symmetric and
// orthogonal, so the inverse, the transpose and the backward pass coincide.

/// Bottom/right zero padding applied before one analysis level.
struct LevelPad {
  Index bottom = 0;
  Index right = 0;
  friend bool operator==(const LevelPad&, const LevelPad&) = default;
};

/// One analysis level. Odd H or W is zero-padded on the bottom/right first;
/// the applied pad is written to `pad` when non-null.
/// (B,C,H,W) -> (B,4C,ceil(H/2),ceil(W/2))
template <typename T>
Tensor<T> dwt2_level(const Tensor<T>& x, LevelPad* pad = nullptr);

/// Exact inverse of an unpadded level. (B,4C,h,w) -> (B,C,2h,2w)
template <typename T>
Tensor<T> idwt2_level(const Tensor<T>& y);

template <typename T>
struct SubbandPyramid {
  /// levels[l-1] has shape (B, 4C, H_l, W_l), H_l = ceil(H_{l-1} / 2).
  std::vector<Tensor<T>> levels;
  std::vector<LevelPad> pads;
  Index channels = 0;
  Index height = 0;
  Index width = 0;

  std::size_t depth() const noexcept { return levels.size(); }
  /// Subband group g in {0: A, 1: Dh, 2: Dv, 3: Dd} of level l (1-based).
  Tensor<T> subband(std::size_t level, int group) const;
};

/// Recursive analysis of the approximation channels. The level l tensor
/// carries its own approximation plus that level's three detail groups.
template <typename T>
SubbandPyramid<T> dwt2_pyramid(const Tensor<T>& x, int levels);

/// Inverts a pyramid level by level, cropping pads, back to (B,C,H,W).
template <typename T>
Tensor<T> reconstruct(const SubbandPyramid<T>& pyramid);

/// Levels needed to bring min(H,W) down to 2x2 by repeated ceil-halving.
/// Requires min(H,W) >= 4.
int compute_levels(Index height, Index width);

/// Spatial extents of each level for an input of the given size.
std::vector<std::pair<Index, Index>> level_sizes(Index height, Index width, int levels);

}  // namespace wavemix
