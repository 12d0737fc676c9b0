// aud/binary_io.hpp
//
// Little helpers for the versioned binary files (feature cache, checkpoints).
// Values are stored in host byte order; all supported targets are
// little-endian.

#ifndef AUD_BINARY_IO_HPP_
#define AUD_BINARY_IO_HPP_

#include "aud/common.hpp"

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>

namespace aud::bin {

template <typename T>
void write_pod(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_pod(std::istream& in) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!in) throw Error("unexpected end of binary stream");
  return v;
}

inline void write_string(std::ostream& out, const std::string& s) {
  write_pod<std::uint32_t>(out, static_cast<std::uint32_t>(s.size()));
  out.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& in) {
  const auto n = read_pod<std::uint32_t>(in);
  if (n > (1u << 24)) throw Error("corrupt string length in binary stream");
  std::string s(n, '\0');
  in.read(s.data(), n);
  if (!in) throw Error("unexpected end of binary stream");
  return s;
}

// Row-major element order so files do not depend on Eigen's storage order.
template <typename Derived>
void write_matrix(std::ostream& out, const Eigen::MatrixBase<Derived>& m) {
  write_pod<std::int64_t>(out, m.rows());
  write_pod<std::int64_t>(out, m.cols());
  for (Eigen::Index r = 0; r < m.rows(); ++r)
    for (Eigen::Index c = 0; c < m.cols(); ++c) write_pod<double>(out, m(r, c));
}

inline MatrixXd read_matrix(std::istream& in) {
  const auto rows = read_pod<std::int64_t>(in);
  const auto cols = read_pod<std::int64_t>(in);
  if (rows < 0 || cols < 0 || rows * cols > (std::int64_t{1} << 32))
    throw Error("corrupt matrix shape in binary stream");
  MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = read_pod<double>(in);
  return m;
}

inline void expect_magic(std::istream& in, const std::string& magic, const std::string& what) {
  std::string got(magic.size(), '\0');
  in.read(got.data(), static_cast<std::streamsize>(magic.size()));
  if (!in || got != magic) throw Error(what + ": bad magic");
}

}  // namespace aud::bin

#endif  // AUD_BINARY_IO_HPP_
