#pragma once

// Checkpoint file layout (version 1). Text lines end in '\n'; tensor payloads
// are raw little-endian IEEE-754 doubles.
//
//   EQMZ-CHECKPOINT 1
//   meta <key> <value up to end of line>        (zero or more, key-sorted)
//   tensors <count>
//   tensor <name> <rank> <d0> ... <d(rank-1)>   (count times, name-sorted)
//   <8 * numel bytes>
//   end
//
// Keys and tensor names contain no whitespace; meta values contain no
// newline. Writing the same content always yields the same bytes.

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

#include "eqmz/nd/params.hpp"

namespace eqmz::nd {

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Checkpoint {
  std::map<std::string, std::string> meta;
  ParamStore params;
};

namespace detail {

inline void check_token(const std::string& s, const char* what) {
  if (s.empty() || s.find_first_of(" \t\r\n") != std::string::npos)
    throw CheckpointError(std::string("checkpoint ") + what + " '" + s + "' is empty or contains whitespace");
}

inline void write_f64_le(std::ostream& out, double v) {
  auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xff);
  out.write(bytes, 8);
}

inline double read_f64_le(std::istream& in) {
  unsigned char bytes[8];
  in.read(reinterpret_cast<char*>(bytes), 8);
  if (!in) throw CheckpointError("checkpoint truncated inside tensor data");
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(bytes[i]) << (8 * i);
  return std::bit_cast<double>(bits);
}

inline std::string read_line(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw CheckpointError("checkpoint truncated");
  return line;
}

}  // namespace detail

inline void write_checkpoint(std::ostream& out, const Checkpoint& ckpt) {
  out << "EQMZ-CHECKPOINT 1\n";
  for (const auto& [key, value] : ckpt.meta) {
    detail::check_token(key, "meta key");
    if (value.find('\n') != std::string::npos) throw CheckpointError("checkpoint meta value for '" + key + "' has a newline");
    out << "meta " << key << ' ' << value << '\n';
  }
  out << "tensors " << ckpt.params.tensors().size() << '\n';
  for (const auto& [name, t] : ckpt.params.tensors()) {
    detail::check_token(name, "tensor name");
    out << "tensor " << name << ' ' << t.rank();
    for (int d : t.shape()) out << ' ' << d;
    out << '\n';
    for (double v : t.values()) detail::write_f64_le(out, v);
  }
  out << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& in) {
  Checkpoint ckpt;
  if (detail::read_line(in) != "EQMZ-CHECKPOINT 1") throw CheckpointError("not a version 1 checkpoint");
  std::string line = detail::read_line(in);
  while (line.rfind("meta ", 0) == 0) {
    const auto sep = line.find(' ', 5);
    if (sep == std::string::npos) throw CheckpointError("malformed meta line: " + line);
    ckpt.meta[line.substr(5, sep - 5)] = line.substr(sep + 1);
    line = detail::read_line(in);
  }
  std::istringstream header(line);
  std::string word;
  std::size_t count = 0;
  if (!(header >> word >> count) || word != "tensors") throw CheckpointError("expected tensor count, got: " + line);
  for (std::size_t k = 0; k < count; ++k) {
    std::istringstream th(detail::read_line(in));
    std::string name;
    int rank = 0;
    if (!(th >> word >> name >> rank) || word != "tensor" || rank < 0)
      throw CheckpointError("malformed tensor header for entry " + std::to_string(k));
    Shape shape(static_cast<std::size_t>(rank));
    for (int& d : shape)
      if (!(th >> d) || d < 0) throw CheckpointError("malformed shape for tensor " + name);
    Tensor t(shape);
    for (double& v : t.values()) v = detail::read_f64_le(in);
    ckpt.params.set(name, std::move(t));
  }
  if (detail::read_line(in) != "end") throw CheckpointError("missing checkpoint trailer");
  return ckpt;
}

inline void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError("cannot open " + path + " for writing");
  write_checkpoint(out, ckpt);
  if (!out) throw CheckpointError("write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint " + path);
  try {
    return read_checkpoint(in);
  } catch (const CheckpointError& e) {
    throw CheckpointError(path + ": " + e.what());
  }
}

}  // namespace eqmz::nd
