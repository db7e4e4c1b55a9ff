#pragma once

// Checkpoints: magic "PCKP", uint32 entry count, then per entry a uint32 name
// length, the name bytes, and one tensor record in the tensor-file layout.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "pcaus/io/tensor_file.hpp"
#include "pcaus/nn/layers.hpp"

namespace pcaus::nn {

inline void save_checkpoint(const Module& module, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write checkpoint " + path.string());
  const auto state = module.named_state();
  os.write("PCKP", 4);
  io::detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(state.size()));
  for (const auto& [name, t] : state) {
    io::detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    std::vector<std::uint64_t> shape(t.shape().begin(), t.shape().end());
    io::write_tensor(os, shape, t.data());
  }
  if (!os) throw std::runtime_error("failed writing checkpoint " + path.string());
}

// Loads every entry of the module's state; names and shapes must match.
inline void load_checkpoint(Module& module, const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  char magic[4];
  if (!is || !is.read(magic, 4) || std::string(magic, 4) != "PCKP") {
    throw std::runtime_error("not a checkpoint: " + path.string());
  }
  const auto count = io::detail::get<std::uint32_t>(is, path.string());
  std::map<std::string, io::TensorData> entries;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto len = io::detail::get<std::uint32_t>(is, path.string());
    std::string name(len, '\0');
    if (!is.read(name.data(), len)) throw std::runtime_error("truncated checkpoint " + path.string());
    entries.emplace(name, io::read_tensor(is, path.string() + ":" + name));
  }
  for (auto& [name, t] : module.named_state()) {
    auto it = entries.find(name);
    if (it == entries.end()) throw std::runtime_error("checkpoint " + path.string() + " lacks " + name);
    std::vector<std::uint64_t> shape(t.shape().begin(), t.shape().end());
    if (it->second.shape != shape) {
      throw std::runtime_error("checkpoint entry " + name + " has shape mismatch");
    }
    Tensor dst = t;
    std::copy(it->second.values.begin(), it->second.values.end(), dst.mutable_data());
  }
}

using StateSnapshot = std::vector<std::vector<float>>;

inline StateSnapshot snapshot_state(const Module& module) {
  StateSnapshot out;
  for (const auto& [name, t] : module.named_state()) out.emplace_back(t.values().begin(), t.values().end());
  return out;
}

inline void restore_state(Module& module, const StateSnapshot& snapshot) {
  const auto state = module.named_state();
  if (state.size() != snapshot.size()) throw std::invalid_argument("restore_state: entry count mismatch");
  for (std::size_t i = 0; i < state.size(); ++i) {
    if (static_cast<std::int64_t>(snapshot[i].size()) != state[i].second.numel()) {
      throw std::invalid_argument("restore_state: size mismatch for " + state[i].first);
    }
    std::copy(snapshot[i].begin(), snapshot[i].end(), state[i].second.mutable_data());
  }
}

// Copies parameters and buffers between modules of identical structure.
inline void copy_state(const Module& from, Module& to) { restore_state(to, snapshot_state(from)); }

}  // namespace pcaus::nn
