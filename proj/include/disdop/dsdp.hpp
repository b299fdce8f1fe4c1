#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>
#include <string>
#include <vector>

#include "disdop/errors.hpp"
#include "disdop/matrix.hpp"

namespace disdop {

/// ".dsdp" tensor container. The byte layout is little-endian regardless of
/// the host:
///
///   magic    4 bytes, "DSDP"
///   version  u32, currently 1
///   dtype    u8, 1 = 64-bit real, 2 = unsigned 8-bit (masks)
///   ndim     u8
///   dims     ndim x u64
///   payload  row-major values
enum class Dtype : std::uint8_t { F64 = 1, U8 = 2 };

struct Tensor {
  Dtype dtype = Dtype::F64;
  std::vector<std::uint64_t> dims;
  std::vector<double> f64;       // payload when dtype == F64
  std::vector<std::uint8_t> u8;  // payload when dtype == U8

  std::uint64_t element_count() const {
    std::uint64_t n = 1;
    for (std::uint64_t d : dims) {
      if (d != 0 && n > std::numeric_limits<std::uint64_t>::max() / d)
        throw LengthMismatch("tensor dims product overflows");
      n *= d;
    }
    return n;
  }

  static Tensor from_matrix(const Matrix& m) {
    Tensor t;
    t.dtype = Dtype::F64;
    t.dims = {m.rows(), m.cols()};
    t.f64 = m.storage();
    return t;
  }

  static Tensor from_mask(const ByteMatrix& m) {
    Tensor t;
    t.dtype = Dtype::U8;
    t.dims = {m.rows(), m.cols()};
    t.u8 = m.storage();
    return t;
  }

  static Tensor from_vector(const Vector& v) {
    Tensor t;
    t.dtype = Dtype::F64;
    t.dims = {v.size()};
    t.f64 = v;
    return t;
  }

  Matrix to_matrix() const {
    if (dtype != Dtype::F64 || dims.size() != 2)
      throw DimensionMismatch("tensor is not a 2-D f64 matrix");
    Matrix m(static_cast<std::size_t>(dims[0]),
             static_cast<std::size_t>(dims[1]));
    m.storage() = f64;
    return m;
  }

  ByteMatrix to_mask() const {
    if (dtype != Dtype::U8 || dims.size() != 2)
      throw DimensionMismatch("tensor is not a 2-D u8 mask");
    ByteMatrix m(static_cast<std::size_t>(dims[0]),
                 static_cast<std::size_t>(dims[1]));
    m.storage() = u8;
    return m;
  }

  Vector to_vector() const {
    if (dtype != Dtype::F64 || dims.size() != 1)
      throw DimensionMismatch("tensor is not a 1-D f64 vector");
    return f64;
  }
};

namespace detail {

inline void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i)
    out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}

inline std::uint32_t get_u32(const std::string& buf, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(buf[at + i]))
         << (8 * i);
  return v;
}

inline std::uint64_t get_u64(const std::string& buf, std::size_t at) {
  std::uint64_t v = 0;
  for (int i = 0; i < 8; ++i)
    v |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[at + i]))
         << (8 * i);
  return v;
}

}  // namespace detail

inline void save_tensor(const std::filesystem::path& path, const Tensor& t) {
  const std::uint64_t count = t.element_count();
  const bool is_f64 = t.dtype == Dtype::F64;
  if (t.dtype != Dtype::F64 && t.dtype != Dtype::U8)
    throw UnsupportedDtype("unknown dtype code on save");
  if ((is_f64 ? t.f64.size() : t.u8.size()) != count)
    throw LengthMismatch("tensor payload size does not match dims");
  if (t.dims.size() > 255) throw LengthMismatch("tensor rank exceeds 255");

  std::string buf;
  buf.reserve(10 + 8 * t.dims.size() + count * (is_f64 ? 8 : 1));
  buf += "DSDP";
  detail::put_u32(buf, 1);
  buf.push_back(static_cast<char>(static_cast<std::uint8_t>(t.dtype)));
  buf.push_back(static_cast<char>(t.dims.size()));
  for (std::uint64_t d : t.dims) detail::put_u64(buf, d);
  if (is_f64) {
    for (double x : t.f64) detail::put_u64(buf, std::bit_cast<std::uint64_t>(x));
  } else {
    buf.append(reinterpret_cast<const char*>(t.u8.data()), t.u8.size());
  }

  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoFailure("cannot open for writing: " + path.string());
  os.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  os.flush();
  if (!os) throw IoFailure("write failed: " + path.string());
}

inline Tensor load_tensor(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoFailure("cannot open: " + path.string());
  std::string buf((std::istreambuf_iterator<char>(is)),
                  std::istreambuf_iterator<char>());
  if (is.bad()) throw IoFailure("read failed: " + path.string());

  if (buf.size() < 4 || buf.compare(0, 4, "DSDP") != 0)
    throw BadMagic("not a .dsdp file: " + path.string());
  if (buf.size() < 10) throw LengthMismatch("truncated header: " + path.string());

  const std::uint32_t version = detail::get_u32(buf, 4);
  if (version != 1)
    throw UnsupportedVersion("unsupported version " + std::to_string(version));

  const auto dtype_code = static_cast<std::uint8_t>(buf[8]);
  if (dtype_code != 1 && dtype_code != 2)
    throw UnsupportedDtype("unknown dtype code " + std::to_string(dtype_code));

  const auto ndim = static_cast<std::uint8_t>(buf[9]);
  const std::size_t dims_end = 10 + 8 * static_cast<std::size_t>(ndim);
  if (buf.size() < dims_end)
    throw LengthMismatch("truncated dims: " + path.string());

  Tensor t;
  t.dtype = static_cast<Dtype>(dtype_code);
  t.dims.resize(ndim);
  for (std::size_t i = 0; i < ndim; ++i)
    t.dims[i] = detail::get_u64(buf, 10 + 8 * i);

  const std::uint64_t count = t.element_count();
  const std::uint64_t esize = t.dtype == Dtype::F64 ? 8 : 1;
  if (count > std::numeric_limits<std::uint64_t>::max() / esize)
    throw LengthMismatch("tensor payload size overflows");
  const std::uint64_t expected = count * esize;
  if (buf.size() - dims_end != expected)
    throw LengthMismatch("payload length mismatch: " + path.string());

  if (t.dtype == Dtype::F64) {
    t.f64.resize(count);
    for (std::uint64_t i = 0; i < count; ++i)
      t.f64[i] = std::bit_cast<double>(detail::get_u64(buf, dims_end + 8 * i));
  } else {
    t.u8.assign(buf.begin() + static_cast<std::ptrdiff_t>(dims_end), buf.end());
  }
  return t;
}

}  // namespace disdop
