#pragma once

// Binary tensor files: 4-byte magic "PCT1", uint32 rank, rank x uint64 dims,
// then float32 values in row-major order. All integers and floats are
// little-endian.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace pcaus::io {

static_assert(std::endian::native == std::endian::little, "tensor files assume a little-endian host");

struct TensorData {
  std::vector<std::uint64_t> shape;
  std::vector<float> values;
};

inline constexpr char kTensorMagic[4] = {'P', 'C', 'T', '1'};

namespace detail {

template <class T>
void put(std::ostream& os, T v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
T get(std::istream& is, const std::string& what) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T))) throw std::runtime_error("truncated " + what);
  return v;
}

}  // namespace detail

inline void write_tensor(std::ostream& os, const std::vector<std::uint64_t>& shape, const float* values) {
  os.write(kTensorMagic, 4);
  detail::put<std::uint32_t>(os, static_cast<std::uint32_t>(shape.size()));
  std::uint64_t n = 1;
  for (auto d : shape) {
    detail::put<std::uint64_t>(os, d);
    n *= d;
  }
  os.write(reinterpret_cast<const char*>(values), static_cast<std::streamsize>(n * sizeof(float)));
}

inline TensorData read_tensor(std::istream& is, const std::string& what) {
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kTensorMagic, 4) != 0) {
    throw std::runtime_error(what + ": not a tensor file");
  }
  TensorData t;
  const auto rank = detail::get<std::uint32_t>(is, what);
  if (rank > 8) throw std::runtime_error(what + ": implausible rank " + std::to_string(rank));
  std::uint64_t n = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    t.shape.push_back(detail::get<std::uint64_t>(is, what));
    n *= t.shape.back();
  }
  t.values.resize(n);
  if (!is.read(reinterpret_cast<char*>(t.values.data()), static_cast<std::streamsize>(n * sizeof(float)))) {
    throw std::runtime_error(what + ": truncated tensor data");
  }
  return t;
}

inline void save_tensor_file(const std::filesystem::path& path, const std::vector<std::uint64_t>& shape,
                             const float* values) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write " + path.string());
  write_tensor(os, shape, values);
  if (!os) throw std::runtime_error("failed writing " + path.string());
}

inline TensorData load_tensor_file(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open " + path.string());
  return read_tensor(is, path.string());
}

}  // namespace pcaus::io
