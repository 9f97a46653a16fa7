#pragma once

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "usdaf/core/optim.hpp"

namespace usdaf::det {

// Checkpoint layout:
//
//   USDAF-CHECKPOINT 1\n
//   params <N>\n
//   <name> <rank> <dim_0> ... <dim_rank-1> <offset>\n      (N lines)
//   data <total>\n
//   <total little-endian IEEE-754 float64 values>
//
// <offset> counts float64 values from the start of the data block.

inline constexpr const char* kCheckpointMagic = "USDAF-CHECKPOINT";
inline constexpr int kCheckpointVersion = 1;

struct CheckpointEntry {
  std::string name;
  ad::Shape shape;
  std::size_t offset = 0;
  std::vector<double> values;
};

inline void save_checkpoint(const std::string& path, const ad::ParameterSet& params) {
  static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write checkpoint " + path);
  out << kCheckpointMagic << ' ' << kCheckpointVersion << '\n' << "params " << params.size() << '\n';
  std::size_t offset = 0;
  for (const auto& [name, t] : params) {
    if (name.find_first_of(" \n\t") != std::string::npos) throw IoError("parameter name contains whitespace: " + name);
    out << name << ' ' << t.rank();
    for (auto d : t.shape()) out << ' ' << d;
    out << ' ' << offset << '\n';
    offset += t.size();
  }
  out << "data " << offset << '\n';
  for (const auto& [name, t] : params) {
    out.write(reinterpret_cast<const char*>(t.values().data()), static_cast<std::streamsize>(t.size() * sizeof(double)));
  }
  if (!out) throw IoError("failed writing checkpoint " + path);
}

inline std::vector<CheckpointEntry> read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint " + path);
  std::string magic, word;
  int version = 0;
  std::size_t count = 0, total = 0;
  in >> magic >> version >> word >> count;
  if (magic != kCheckpointMagic || version != kCheckpointVersion || word != "params") throw IoError("not a checkpoint: " + path);
  std::vector<CheckpointEntry> entries(count);
  for (auto& e : entries) {
    std::size_t rank = 0;
    in >> e.name >> rank;
    e.shape.resize(rank);
    for (auto& d : e.shape) in >> d;
    in >> e.offset;
  }
  in >> word >> total;
  if (word != "data" || !in) throw IoError("corrupt checkpoint header: " + path);
  in.get();  // newline before the binary block
  std::vector<double> data(total);
  in.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(total * sizeof(double)));
  if (!in) throw IoError("truncated checkpoint: " + path);
  for (auto& e : entries) {
    const auto n = ad::numel(e.shape);
    if (e.offset + n > total) throw IoError("checkpoint entry out of range: " + e.name);
    e.values.assign(data.begin() + static_cast<std::ptrdiff_t>(e.offset),
                    data.begin() + static_cast<std::ptrdiff_t>(e.offset + n));
  }
  return entries;
}

/// Copies stored values into matching parameters; every parameter must be present.
inline void load_checkpoint(const std::string& path, const ad::ParameterSet& params) {
  std::map<std::string, CheckpointEntry> by_name;
  for (auto& e : read_checkpoint(path)) by_name.emplace(e.name, std::move(e));
  for (const auto& [name, t] : params) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw IoError("checkpoint lacks parameter " + name);
    if (it->second.shape != t.shape()) throw IoError("checkpoint shape mismatch for " + name);
    auto dst = ad::Tensor(t).mutable_values();
    std::copy(it->second.values.begin(), it->second.values.end(), dst.begin());
  }
}

}  // namespace usdaf::det
