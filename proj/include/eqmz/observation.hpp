#pragma once

#include "eqmz/group.hpp"
#include "eqmz/nd/tensor.hpp"

namespace eqmz {

/// Rotates every channel of a [C, H, W] observation; the result is [C, W, H]
/// for odd quarter turns.
inline nd::Tensor act_on_observation(Rotation g, const nd::Tensor& x) {
  if (x.rank() != 3) throw std::invalid_argument("act_on_observation: expected [C,H,W], got " + nd::shape_str(x.shape()));
  const int channels = x.dim(0);
  const int height = x.dim(1);
  const int width = x.dim(2);
  if (g.is_identity()) return x;
  const bool swapped = g.k() % 2 == 1;
  nd::Tensor out(nd::Shape{channels, swapped ? width : height, swapped ? height : width});
  for (int r = 0; r < height; ++r) {
    for (int c = 0; c < width; ++c) {
      const auto [nr, nc] = rotate_index(g, r, c, height, width);
      for (int ch = 0; ch < channels; ++ch) out.at(ch, nr, nc) = x.at(ch, r, c);
    }
  }
  return out;
}

}  // namespace eqmz
