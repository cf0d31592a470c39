#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <queue>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "eqmz/group.hpp"
#include "eqmz/rng.hpp"

namespace eqmz::env {

class MazeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Position {
  int row = 0;
  int col = 0;

  friend constexpr bool operator==(Position, Position) = default;
  friend constexpr auto operator<=>(Position, Position) = default;
};

inline Position rotate_position(Rotation g, Position p, int side) {
  const auto [r, c] = rotate_index(g, p.row, p.col, side, side);
  return {r, c};
}

/// Square wall mask. Border cells are walls and the corridors form a single
/// connected component; both are checked on construction.
class MazeMap {
 public:
  MazeMap() = default;
  explicit MazeMap(Grid2D<std::uint8_t> walls) : walls_(std::move(walls)) { validate(); }

  int side() const { return walls_.height(); }
  bool wall(int r, int c) const { return walls_(r, c) != 0; }
  bool wall(Position p) const { return wall(p.row, p.col); }
  bool open(Position p) const { return walls_.contains(p.row, p.col) && !wall(p); }
  const Grid2D<std::uint8_t>& walls() const { return walls_; }

  /// Corridor cells in row-major order.
  std::vector<Position> corridor_cells() const {
    std::vector<Position> out;
    for (int r = 0; r < side(); ++r)
      for (int c = 0; c < side(); ++c)
        if (!wall(r, c)) out.push_back({r, c});
    return out;
  }

  friend bool operator==(const MazeMap&, const MazeMap&) = default;

 private:
  void validate() const {
    const int n = walls_.height();
    if (walls_.width() != n) throw MazeError("maze must be square, got " + std::to_string(walls_.height()) + "x" +
                                             std::to_string(walls_.width()));
    if (n < 3) throw MazeError("maze side " + std::to_string(n) + " is too small");
    for (int i = 0; i < n; ++i)
      if (!wall(0, i) || !wall(n - 1, i) || !wall(i, 0) || !wall(i, n - 1))
        throw MazeError("maze border must be walls");
    const auto cells = corridor_cells();
    if (cells.empty()) throw MazeError("maze has no corridor cells");
    Grid2D<std::uint8_t> seen(n, n, 0);
    std::queue<Position> frontier;
    frontier.push(cells.front());
    seen(cells.front().row, cells.front().col) = 1;
    std::size_t reached = 1;
    while (!frontier.empty()) {
      const Position p = frontier.front();
      frontier.pop();
      for (int d = 0; d < 4; ++d) {
        const auto [dr, dc] = move_delta(ActionId{d});
        const Position q{p.row + dr, p.col + dc};
        if (!open(q) || seen(q.row, q.col)) continue;
        seen(q.row, q.col) = 1;
        ++reached;
        frontier.push(q);
      }
    }
    if (reached != cells.size())
      throw MazeError("maze corridors are disconnected (" + std::to_string(reached) + " of " +
                      std::to_string(cells.size()) + " cells reachable)");
  }

  Grid2D<std::uint8_t> walls_;
};

inline MazeMap rotate(Rotation g, const MazeMap& m) { return MazeMap(act_on_observation(g, m.walls())); }

/// Fraction of interior walls between two lattice cells knocked out after
/// the spanning tree is carved, giving the maze loops.
inline constexpr double default_loop_fraction = 0.15;

/// Recursive backtracker over the odd lattice of an odd-sided grid, followed
/// by loop carving. Even sides use the next smaller odd lattice and add one
/// more wall row and column.
inline MazeMap generate_maze(std::uint64_t seed, int side, double loop_fraction = default_loop_fraction) {
  if (side < 5) throw MazeError("maze side must be at least 5, got " + std::to_string(side));
  const int lattice = side % 2 == 1 ? side : side - 1;
  const int cells = (lattice - 1) / 2;
  RngStream rng(seed);
  Grid2D<std::uint8_t> walls(side, side, 1);
  Grid2D<std::uint8_t> visited(cells, cells, 0);
  auto carve = [&](int r, int c) { walls(2 * r + 1, 2 * c + 1) = 0; };

  std::vector<std::pair<int, int>> stack{{0, 0}};
  visited(0, 0) = 1;
  carve(0, 0);
  while (!stack.empty()) {
    const auto [r, c] = stack.back();
    std::array<std::pair<int, int>, 4> options{};
    int n = 0;
    for (int d = 0; d < 4; ++d) {
      const auto [dr, dc] = move_delta(ActionId{d});
      const int nr = r + dr;
      const int nc = c + dc;
      if (nr >= 0 && nr < cells && nc >= 0 && nc < cells && !visited(nr, nc)) options[n++] = {nr, nc};
    }
    if (n == 0) {
      stack.pop_back();
      continue;
    }
    const auto [nr, nc] = options[rng.uniform_index(static_cast<std::uint64_t>(n))];
    walls(r + nr + 1, c + nc + 1) = 0;  // the wall between the two lattice cells
    visited(nr, nc) = 1;
    carve(nr, nc);
    stack.push_back({nr, nc});
  }

  for (int r = 1; r < lattice - 1; ++r) {
    for (int c = 1; c < lattice - 1; ++c) {
      const bool between_rows = r % 2 == 0 && c % 2 == 1;
      const bool between_cols = r % 2 == 1 && c % 2 == 0;
      if (!(between_rows || between_cols) || !walls(r, c)) continue;
      if (rng.uniform01() < loop_fraction) walls(r, c) = 0;
    }
  }
  return MazeMap(std::move(walls));
}

/// '#' for walls, '.' for corridors, one '\n'-terminated line per row.
inline std::string to_ascii(const MazeMap& m) {
  std::string s;
  s.reserve(static_cast<std::size_t>(m.side()) * (m.side() + 1));
  for (int r = 0; r < m.side(); ++r) {
    for (int c = 0; c < m.side(); ++c) s += m.wall(r, c) ? '#' : '.';
    s += '\n';
  }
  return s;
}

inline MazeMap parse_ascii(const std::string& text) {
  std::istringstream in(text);
  std::string line;
  std::vector<std::string> rows;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    for (char ch : line)
      if (ch != '#' && ch != '.')
        throw MazeError("map line " + std::to_string(line_no) + ": unexpected character '" + std::string(1, ch) + "'");
    rows.push_back(line);
  }
  if (rows.empty()) throw MazeError("map is empty");
  const int n = static_cast<int>(rows.size());
  Grid2D<std::uint8_t> walls(n, n, 1);
  for (int r = 0; r < n; ++r) {
    if (static_cast<int>(rows[r].size()) != n)
      throw MazeError("map row " + std::to_string(r + 1) + " has length " + std::to_string(rows[r].size()) +
                      ", expected " + std::to_string(n));
    for (int c = 0; c < n; ++c) walls(r, c) = rows[r][c] == '#' ? 1 : 0;
  }
  return MazeMap(std::move(walls));
}

inline void save_map(const std::string& path, const MazeMap& m) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MazeError("cannot write map file " + path);
  out << to_ascii(m);
  if (!out) throw MazeError("write failed for map file " + path);
}

inline MazeMap load_map(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MazeError("cannot read map file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_ascii(ss.str());
  } catch (const MazeError& e) {
    throw MazeError(path + ": " + e.what());
  }
}

/// Lexicographically smallest ASCII rendering over the four rotations.
inline std::string canonical_form(const MazeMap& m) {
  std::string best = to_ascii(m);
  for (int k = 1; k < 4; ++k) best = std::min(best, to_ascii(rotate(Rotation{k}, m)));
  return best;
}

}  // namespace eqmz::env
