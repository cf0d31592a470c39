#pragma once

// The cyclic rotation group C4 and the three ways it acts in this library:
// on grid observations (clockwise quarter turns), on actions (a cyclic shift
// of the four directional moves) and on latent states (a cyclic shift of the
// four latent components).

#include <array>
#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace eqmz {

/// Clockwise rotation by 90*k degrees, k in {0,1,2,3}.
class Rotation {
 public:
  constexpr Rotation() = default;
  constexpr explicit Rotation(int k) : k_(((k % 4) + 4) % 4) {}

  static constexpr Rotation identity() { return Rotation{0}; }
  static constexpr std::array<Rotation, 4> all() {
    return {Rotation{0}, Rotation{1}, Rotation{2}, Rotation{3}};
  }

  constexpr int k() const { return k_; }
  constexpr bool is_identity() const { return k_ == 0; }

  friend constexpr bool operator==(Rotation, Rotation) = default;

 private:
  int k_ = 0;
};

constexpr Rotation compose(Rotation g, Rotation h) { return Rotation{g.k() + h.k()}; }
constexpr Rotation inverse(Rotation g) { return Rotation{4 - g.k()}; }

/// Action identifier. Ids 0..3 are the moves right, down, left, up; larger ids
/// are non-movement actions and are fixed by every rotation.
struct ActionId {
  int id = 0;

  constexpr bool is_move() const { return id >= 0 && id < 4; }
  friend constexpr bool operator==(ActionId, ActionId) = default;
  friend constexpr auto operator<=>(ActionId, ActionId) = default;
};

namespace actions {
inline constexpr ActionId right{0};
inline constexpr ActionId down{1};
inline constexpr ActionId left{2};
inline constexpr ActionId up{3};
inline constexpr ActionId stay{4};
}  // namespace actions

/// Row/column offset of a move; non-movement actions do not move.
constexpr std::pair<int, int> move_delta(ActionId a) {
  switch (a.id) {
    case 0: return {0, 1};
    case 1: return {1, 0};
    case 2: return {0, -1};
    case 3: return {-1, 0};
    default: return {0, 0};
  }
}

constexpr ActionId act_on_action(Rotation g, ActionId a) {
  if (!a.is_move()) return a;
  return ActionId{(a.id + g.k()) % 4};
}

inline std::string action_name(ActionId a) {
  static constexpr const char* names[] = {"right", "down", "left", "up"};
  if (a.is_move()) return names[a.id];
  return a.id == 4 ? "stay" : "action" + std::to_string(a.id);
}

/// Rectangular grid of cells stored row-major.
template <class T>
class Grid2D {
 public:
  Grid2D() = default;
  Grid2D(int height, int width, T fill = T{})
      : height_(height), width_(width), cells_(checked_size(height, width), fill) {}
  Grid2D(int height, int width, std::vector<T> cells)
      : height_(height), width_(width), cells_(std::move(cells)) {
    if (cells_.size() != checked_size(height, width))
      throw std::invalid_argument("Grid2D: cell count does not match " + std::to_string(height) + "x" +
                                  std::to_string(width));
  }

  int height() const { return height_; }
  int width() const { return width_; }
  bool contains(int r, int c) const { return r >= 0 && r < height_ && c >= 0 && c < width_; }

  T& operator()(int r, int c) { return cells_[static_cast<std::size_t>(r) * width_ + c]; }
  const T& operator()(int r, int c) const { return cells_[static_cast<std::size_t>(r) * width_ + c]; }

  const std::vector<T>& cells() const { return cells_; }
  std::vector<T>& cells() { return cells_; }

  friend bool operator==(const Grid2D&, const Grid2D&) = default;

 private:
  static std::size_t checked_size(int height, int width) {
    if (height < 0 || width < 0) throw std::invalid_argument("Grid2D: negative extent");
    return static_cast<std::size_t>(height) * static_cast<std::size_t>(width);
  }

  int height_ = 0;
  int width_ = 0;
  std::vector<T> cells_;
};

/// Where cell (r, c) of an H x W grid lands after g. One clockwise step maps
/// (r, c) to (c, H-1-r) in the W x H result.
inline std::pair<int, int> rotate_index(Rotation g, int r, int c, int height, int width) {
  for (int i = 0; i < g.k(); ++i) {
    const int nr = c;
    const int nc = height - 1 - r;
    r = nr;
    c = nc;
    std::swap(height, width);
  }
  return {r, c};
}

template <class T>
Grid2D<T> act_on_observation(Rotation g, const Grid2D<T>& x) {
  const bool swapped = g.k() % 2 == 1;
  Grid2D<T> out(swapped ? x.width() : x.height(), swapped ? x.height() : x.width());
  for (int r = 0; r < x.height(); ++r) {
    for (int c = 0; c < x.width(); ++c) {
      const auto [nr, nc] = rotate_index(g, r, c, x.height(), x.width());
      out(nr, nc) = x(r, c);
    }
  }
  return out;
}

/// Cyclic shift of a four-component latent: one step sends (z1,z2,z3,z4) to
/// (z2,z3,z4,z1).
template <class T>
std::array<T, 4> act_on_latent(Rotation g, const std::array<T, 4>& z) {
  std::array<T, 4> out;
  for (int i = 0; i < 4; ++i) out[i] = z[(i + g.k()) % 4];
  return out;
}

}  // namespace eqmz
