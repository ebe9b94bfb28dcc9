#ifndef DAOVFL_SERIALIZE_HPP_
#define DAOVFL_SERIALIZE_HPP_

// Binary network bundles.
//
// Layout (little-endian):
//   char[8]  "DVFLNETS"
//   u32      format version (1)
//   u32      number of networks
//   per network:
//     u32    number of layers
//     per layer:
//       u32  activation tag (0 linear, 1 relu, 2 tanh, 3 sigmoid)
//       u32  rows (input width), u32 cols (output width)
//       f64  rows*cols weights, row-major
//       f64  cols biases

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"

namespace daovfl {

static_assert(std::endian::native == std::endian::little,
              "network bundle format assumes a little-endian host");

inline constexpr char kNetMagic[8] = {'D', 'V', 'F', 'L', 'N', 'E', 'T', 'S'};
inline constexpr std::uint32_t kNetFormatVersion = 1;

namespace detail {

inline void put_u32(std::ostream& os, std::uint32_t v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof v);
}
inline void put_f64s(std::ostream& os, const double* p, std::size_t n) {
  os.write(reinterpret_cast<const char*>(p), static_cast<std::streamsize>(n * sizeof(double)));
}
inline std::uint32_t get_u32(std::istream& is) {
  std::uint32_t v = 0;
  if (!is.read(reinterpret_cast<char*>(&v), sizeof v)) throw IoError("truncated network bundle");
  return v;
}
inline void get_f64s(std::istream& is, double* p, std::size_t n) {
  if (!is.read(reinterpret_cast<char*>(p), static_cast<std::streamsize>(n * sizeof(double)))) {
    throw IoError("truncated network bundle");
  }
}

}  // namespace detail

inline void write_nets(std::ostream& os, const std::vector<const DenseNet*>& nets) {
  os.write(kNetMagic, sizeof kNetMagic);
  detail::put_u32(os, kNetFormatVersion);
  detail::put_u32(os, static_cast<std::uint32_t>(nets.size()));
  for (const DenseNet* net : nets) {
    detail::put_u32(os, static_cast<std::uint32_t>(net->layers.size()));
    for (const auto& l : net->layers) {
      detail::put_u32(os, static_cast<std::uint32_t>(l.activation));
      detail::put_u32(os, static_cast<std::uint32_t>(l.weight.rows()));
      detail::put_u32(os, static_cast<std::uint32_t>(l.weight.cols()));
      detail::put_f64s(os, l.weight.data().data(), l.weight.size());
      detail::put_f64s(os, l.bias.data(), l.bias.size());
    }
  }
}

inline std::vector<DenseNet> read_nets(std::istream& is) {
  char magic[8];
  if (!is.read(magic, sizeof magic) || std::memcmp(magic, kNetMagic, sizeof magic) != 0) {
    throw IoError("not a network bundle (bad magic)");
  }
  if (const auto v = detail::get_u32(is); v != kNetFormatVersion) {
    throw IoError("unsupported network bundle version " + std::to_string(v));
  }
  const std::uint32_t count = detail::get_u32(is);
  std::vector<DenseNet> nets(count);
  for (auto& net : nets) {
    const std::uint32_t layers = detail::get_u32(is);
    for (std::uint32_t i = 0; i < layers; ++i) {
      const std::uint32_t tag = detail::get_u32(is);
      if (tag > 3) throw IoError("bad activation tag " + std::to_string(tag));
      const std::uint32_t rows = detail::get_u32(is);
      const std::uint32_t cols = detail::get_u32(is);
      Layer l{Mat(rows, cols), std::vector<double>(cols), static_cast<Activation>(tag)};
      detail::get_f64s(is, l.weight.data().data(), l.weight.size());
      detail::get_f64s(is, l.bias.data(), l.bias.size());
      net.layers.push_back(std::move(l));
    }
    net.check();
  }
  return nets;
}

inline void save_nets(const std::filesystem::path& path, const std::vector<const DenseNet*>& nets) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  write_nets(os, nets);
  if (!os) throw IoError("write failed: " + path.string());
}

inline std::vector<DenseNet> load_nets(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  try {
    return read_nets(is);
  } catch (const IoError& e) {
    throw IoError(path.string() + ": " + e.what());
  }
}

}  // namespace daovfl

#endif  // DAOVFL_SERIALIZE_HPP_
