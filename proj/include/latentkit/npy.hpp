#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "latentkit/error.hpp"
#include "latentkit/linalg.hpp"

// Reader/writer for NumPy .npy files restricted to little-endian float64 ("<f8"),
// C order. Writes format version 1.0; reads 1.0 and 2.0.
namespace latentkit::npy {

static_assert(std::endian::native == std::endian::little, "npy I/O assumes a little-endian host");

struct Array {
  std::vector<std::size_t> shape;
  std::vector<double> data;
};

namespace detail {

inline constexpr char kMagic[] = "\x93NUMPY";

inline std::string shape_tuple(const std::vector<std::size_t>& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    s += std::to_string(shape[i]);
    if (shape.size() == 1 || i + 1 < shape.size()) s += ",";
    if (i + 1 < shape.size()) s += " ";
  }
  return s + ")";
}

// Value following `'key':` in the header dictionary, trimmed.
inline std::string dict_value(const std::string& header, const std::string& key) {
  const std::string needle = "'" + key + "'";
  const auto k = header.find(needle);
  if (k == std::string::npos) throw FormatError("npy header missing key " + needle);
  auto p = header.find(':', k + needle.size());
  if (p == std::string::npos) throw FormatError("npy header malformed near " + needle);
  ++p;
  while (p < header.size() && header[p] == ' ') ++p;
  std::size_t end = p;
  if (p < header.size() && header[p] == '(') {
    end = header.find(')', p);
    if (end == std::string::npos) throw FormatError("npy header has unterminated shape");
    ++end;
  } else {
    end = header.find_first_of(",}", p);
    if (end == std::string::npos) throw FormatError("npy header malformed near " + needle);
  }
  return header.substr(p, end - p);
}

inline std::vector<std::size_t> parse_shape(const std::string& tuple) {
  std::vector<std::size_t> shape;
  std::string inner = tuple.substr(1, tuple.size() - 2);
  std::stringstream ss(inner);
  std::string item;
  while (std::getline(ss, item, ',')) {
    const auto b = item.find_first_not_of(' ');
    if (b == std::string::npos) continue;
    const auto e = item.find_last_not_of(' ');
    const std::string digits = item.substr(b, e - b + 1);
    if (digits.empty() || digits.find_first_not_of("0123456789") != std::string::npos)
      throw FormatError("npy shape entry is not a non-negative integer: '" + digits + "'");
    shape.push_back(static_cast<std::size_t>(std::stoull(digits)));
  }
  return shape;
}

}  // namespace detail

inline void write(const std::filesystem::path& path, const std::vector<std::size_t>& shape,
                  std::span<const double> data) {
  std::size_t count = 1;
  for (auto s : shape) count *= s;
  if (count != data.size()) throw InvalidArgument("npy write: shape does not match data size");

  std::string header = "{'descr': '<f8', 'fortran_order': False, 'shape': " +
                       detail::shape_tuple(shape) + ", }";
  // magic(6) + version(2) + length(2) + header + '\n' is padded to 64 bytes.
  const std::size_t unpadded = 10 + header.size() + 1;
  header.append((64 - unpadded % 64) % 64, ' ');
  header += '\n';
  if (header.size() > 0xFFFF) throw InvalidArgument("npy header too long for format 1.0");

  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(detail::kMagic, 6);
  const char version[2] = {1, 0};
  out.write(version, 2);
  const auto len = static_cast<std::uint16_t>(header.size());
  const char len_bytes[2] = {static_cast<char>(len & 0xFF), static_cast<char>(len >> 8)};
  out.write(len_bytes, 2);
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  out.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(double)));
  if (!out) throw FormatError("failed writing " + path.string());
}

inline Array read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open " + path.string());
  char magic[6];
  in.read(magic, 6);
  if (!in || std::memcmp(magic, detail::kMagic, 6) != 0)
    throw FormatError(path.string() + " is not an npy file");
  unsigned char version[2];
  in.read(reinterpret_cast<char*>(version), 2);
  std::size_t header_len = 0;
  if (version[0] == 1) {
    unsigned char b[2];
    in.read(reinterpret_cast<char*>(b), 2);
    header_len = b[0] | (static_cast<std::size_t>(b[1]) << 8);
  } else if (version[0] == 2) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    header_len = b[0] | (static_cast<std::size_t>(b[1]) << 8) |
                 (static_cast<std::size_t>(b[2]) << 16) | (static_cast<std::size_t>(b[3]) << 24);
  } else {
    throw FormatError("unsupported npy version " + std::to_string(version[0]));
  }
  std::string header(header_len, '\0');
  in.read(header.data(), static_cast<std::streamsize>(header_len));
  if (!in) throw FormatError(path.string() + ": truncated npy header");

  const std::string descr = detail::dict_value(header, "descr");
  if (descr != "'<f8'")
    throw FormatError(path.string() + ": unsupported dtype " + descr + " (expected '<f8')");
  if (detail::dict_value(header, "fortran_order") != "False")
    throw FormatError(path.string() + ": Fortran-order arrays are not supported");

  Array arr;
  arr.shape = detail::parse_shape(detail::dict_value(header, "shape"));
  std::size_t count = 1;
  for (auto s : arr.shape) count *= s;
  arr.data.resize(count);
  in.read(reinterpret_cast<char*>(arr.data.data()),
          static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw FormatError(path.string() + ": truncated npy payload");
  return arr;
}

inline void write_matrix(const std::filesystem::path& path, const Matrix& m) {
  write(path, {m.rows(), m.cols()}, m.data());
}

inline void write_vector(const std::filesystem::path& path, std::span<const double> v) {
  write(path, {v.size()}, v);
}

// 2-D arrays load as-is; a 1-D array of length n loads as an n x 1 column.
inline Matrix read_matrix(const std::filesystem::path& path) {
  Array a = read(path);
  if (a.shape.size() == 1) return Matrix(a.shape[0], 1, std::move(a.data));
  if (a.shape.size() != 2)
    throw FormatError(path.string() + ": expected a 1-D or 2-D array, got " +
                      std::to_string(a.shape.size()) + "-D");
  return Matrix(a.shape[0], a.shape[1], std::move(a.data));
}

// Accepts shape (n,), (n, 1) or (1, n).
inline Vector read_vector(const std::filesystem::path& path) {
  Array a = read(path);
  const bool ok = a.shape.size() == 1 ||
                  (a.shape.size() == 2 && (a.shape[0] == 1 || a.shape[1] == 1));
  if (!ok) throw FormatError(path.string() + ": expected a vector");
  return std::move(a.data);
}

}  // namespace latentkit::npy
