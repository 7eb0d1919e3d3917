// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "ript/diffcore/tensor.hpp"

namespace ript::diffcore {

// Text container of named tensors. Values are written as C99 hex floats so a
// save/load round trip is exact and identical parameters give identical bytes.
//
//   ript-checkpoint 1
//   meta <key> <value>
//   tensor <name> <rank> <d0> ... <dn>
//   <values, 8 per line>
//   end
struct Checkpoint {
  static constexpr int kVersion = 1;
  std::map<std::string, std::string> meta;
  std::vector<std::pair<std::string, Tensor>> tensors;

  const Tensor& get(const std::string& name) const {
    for (const auto& [n, t] : tensors)
      if (n == name) return t;
    throw std::out_of_range("checkpoint: no tensor named '" + name + "'");
  }
};

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

inline std::string hexfloat(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

inline void write_checkpoint(std::ostream& os, const Checkpoint& ckpt) {
  os << "ript-checkpoint " << Checkpoint::kVersion << '\n';
  for (const auto& [k, v] : ckpt.meta) {
    if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
      throw CheckpointError("checkpoint: metadata '" + k + "' contains whitespace");
    os << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& [name, t] : ckpt.tensors) {
    os << "tensor " << name << ' ' << t.shape.size();
    for (auto d : t.shape) os << ' ' << d;
    os << '\n';
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      os << hexfloat(t.values[i]) << ((i % 8 == 7 || i + 1 == t.values.size()) ? '\n' : ' ');
    }
  }
  os << "end\n";
}

inline Checkpoint read_checkpoint(std::istream& is) {
  Checkpoint ckpt;
  std::string word;
  int version = 0;
  if (!(is >> word >> version) || word != "ript-checkpoint")
    throw CheckpointError("checkpoint: missing header");
  if (version != Checkpoint::kVersion)
    throw CheckpointError("checkpoint: unsupported version " + std::to_string(version));
  while (is >> word) {
    if (word == "end") return ckpt;
    if (word == "meta") {
      std::string key, value;
      is >> key;
      std::getline(is >> std::ws, value);
      ckpt.meta[key] = value;
    } else if (word == "tensor") {
      std::string name;
      std::size_t rank = 0;
      is >> name >> rank;
      Shape shape(rank);
      for (auto& d : shape) is >> d;
      std::vector<double> values(element_count(shape));
      for (auto& v : values) {
        std::string tok;
        if (!(is >> tok)) throw CheckpointError("checkpoint: truncated tensor '" + name + "'");
        char* end = nullptr;
        v = std::strtod(tok.c_str(), &end);
        if (end == tok.c_str()) throw CheckpointError("checkpoint: bad value '" + tok + "'");
      }
      ckpt.tensors.emplace_back(name, Tensor(std::move(shape), std::move(values)));
    } else {
      throw CheckpointError("checkpoint: unexpected token '" + word + "'");
    }
    if (!is) throw CheckpointError("checkpoint: malformed record");
  }
  throw CheckpointError("checkpoint: missing end marker");
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary);
  if (!os) throw CheckpointError("checkpoint: cannot open " + path.string() + " for writing");
  write_checkpoint(os, ckpt);
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw CheckpointError("checkpoint: cannot open " + path.string());
  return read_checkpoint(is);
}

}  // namespace ript::diffcore
