#pragma once

// Train / rotated / different map splits and their manifest file.
//
// Manifest format, one record per line, '#' starts a comment:
//
//   side <n>
//   seed <s>
//   X  <file> <generator seed>
//   RX <file> <source X file> <quarter turns 1..3>
//   Y  <file> <generator seed>
//
// File names are relative to the manifest's directory.

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "eqmz/env/maze.hpp"

namespace eqmz::env {

struct SplitEntry {
  std::string file;
  MazeMap maze;
  std::uint64_t seed = 0;  // generator seed (X and Y)
  int source = -1;         // index into X (RX only)
  Rotation rotation{};     // RX only
};

struct Splits {
  int side = 0;
  std::uint64_t seed = 0;
  std::vector<SplitEntry> train;    // X
  std::vector<SplitEntry> rotated;  // RX, three per X entry in order k = 1, 2, 3
  std::vector<SplitEntry> different;  // Y
};

inline std::string indexed_name(const std::string& prefix, int i, const std::string& suffix = "") {
  char buf[16];
  std::snprintf(buf, sizeof buf, "%03d", i);
  return prefix + buf + suffix + ".txt";
}

/// Y must avoid every canonical form of X (which covers RX as well).
inline Splits make_splits(std::uint64_t seed, int n_train, int n_eval, int side, int max_attempts_per_map = 1000) {
  if (n_train < 1) throw MazeError("make_splits: need at least one training map");
  if (n_eval < 0) throw MazeError("make_splits: negative evaluation map count");
  Splits sp;
  sp.side = side;
  sp.seed = seed;
  std::set<std::string> seen;
  std::uint64_t stream = 0;
  const std::uint64_t budget = static_cast<std::uint64_t>(max_attempts_per_map) * (n_train + n_eval);
  auto next = [&](const char* which) {
    for (;;) {
      if (stream >= budget)
        throw MazeError(std::string("make_splits: generator exhausted after ") + std::to_string(stream) +
                        " attempts while filling " + which + " (side " + std::to_string(side) + ", have " +
                        std::to_string(sp.train.size()) + " X and " + std::to_string(sp.different.size()) + " Y maps)");
      const std::uint64_t s = mix_seed(seed, stream++);
      MazeMap m = generate_maze(s, side);
      if (seen.insert(canonical_form(m)).second) return std::make_pair(s, std::move(m));
    }
  };
  for (int i = 0; i < n_train; ++i) {
    auto [s, m] = next("X");
    sp.train.push_back({indexed_name("x_", i), std::move(m), s, -1, {}});
  }
  for (int i = 0; i < n_train; ++i) {
    for (int k = 1; k < 4; ++k) {
      const auto& x = sp.train[static_cast<std::size_t>(i)];
      sp.rotated.push_back(
          {indexed_name("rx_", i, "_r" + std::to_string(k)), rotate(Rotation{k}, x.maze), x.seed, i, Rotation{k}});
    }
  }
  for (int i = 0; i < n_eval; ++i) {
    auto [s, m] = next("Y");
    sp.different.push_back({indexed_name("y_", i), std::move(m), s, -1, {}});
  }
  return sp;
}

/// True when no rotation of `candidate` equals a map in `train`.
inline bool disjoint_from(const MazeMap& candidate, const std::vector<SplitEntry>& train) {
  const std::string c = canonical_form(candidate);
  for (const auto& e : train)
    if (canonical_form(e.maze) == c) return false;
  return true;
}

inline std::string manifest_text(const Splits& sp) {
  std::ostringstream out;
  out << "# eqmz split manifest v1\n";
  out << "side " << sp.side << '\n';
  out << "seed " << sp.seed << '\n';
  for (const auto& e : sp.train) out << "X " << e.file << ' ' << e.seed << '\n';
  for (const auto& e : sp.rotated)
    out << "RX " << e.file << ' ' << sp.train[static_cast<std::size_t>(e.source)].file << ' ' << e.rotation.k() << '\n';
  for (const auto& e : sp.different) out << "Y " << e.file << ' ' << e.seed << '\n';
  return out.str();
}

inline void write_splits(const std::filesystem::path& dir, const Splits& sp) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw MazeError("cannot create directory " + dir.string() + ": " + ec.message());
  for (const auto* group : {&sp.train, &sp.rotated, &sp.different})
    for (const auto& e : *group) save_map((dir / e.file).string(), e.maze);
  const auto path = dir / "manifest.txt";
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw MazeError("cannot write manifest " + path.string());
  out << manifest_text(sp);
  if (!out) throw MazeError("write failed for manifest " + path.string());
}

inline Splits read_splits(const std::filesystem::path& manifest) {
  std::ifstream in(manifest, std::ios::binary);
  if (!in) throw MazeError("cannot read manifest " + manifest.string());
  const auto dir = manifest.parent_path();
  Splits sp;
  std::string line;
  int line_no = 0;
  auto fail = [&](const std::string& why) {
    throw MazeError(manifest.string() + ":" + std::to_string(line_no) + ": " + why);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string kind;
    ls >> kind;
    if (kind == "side") {
      if (!(ls >> sp.side)) fail("bad side");
    } else if (kind == "seed") {
      if (!(ls >> sp.seed)) fail("bad seed");
    } else if (kind == "X" || kind == "Y") {
      SplitEntry e;
      if (!(ls >> e.file >> e.seed)) fail("expected <file> <seed>");
      e.maze = load_map((dir / e.file).string());
      (kind == "X" ? sp.train : sp.different).push_back(std::move(e));
    } else if (kind == "RX") {
      SplitEntry e;
      std::string source;
      int k = 0;
      if (!(ls >> e.file >> source >> k) || k < 1 || k > 3) fail("expected <file> <source> <1..3>");
      for (std::size_t i = 0; i < sp.train.size(); ++i)
        if (sp.train[i].file == source) e.source = static_cast<int>(i);
      if (e.source < 0) fail("RX source " + source + " is not a preceding X entry");
      e.rotation = Rotation{k};
      e.seed = sp.train[static_cast<std::size_t>(e.source)].seed;
      e.maze = load_map((dir / e.file).string());
      sp.rotated.push_back(std::move(e));
    } else {
      fail("unknown record '" + kind + "'");
    }
  }
  return sp;
}

}  // namespace eqmz::env
