#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

#include "disdop/errors.hpp"

namespace disdop {

/// Dense row-major matrix over a trivially copyable element type.
/// Matrix carries 64-bit real payloads, ByteMatrix binary masks.
template <typename T>
class BasicMatrix {
 public:
  BasicMatrix() = default;
  BasicMatrix(std::size_t rows, std::size_t cols, T fill = T{})
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  static BasicMatrix from_rows(
      std::initializer_list<std::initializer_list<T>> rows) {
    BasicMatrix m;
    m.rows_ = rows.size();
    m.cols_ = rows.size() == 0 ? 0 : rows.begin()->size();
    m.data_.reserve(m.rows_ * m.cols_);
    for (const auto& r : rows) {
      if (r.size() != m.cols_)
        throw DimensionMismatch("ragged row in matrix literal");
      m.data_.insert(m.data_.end(), r.begin(), r.end());
    }
    return m;
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }

  T& operator()(std::size_t i, std::size_t j) noexcept {
    return data_[i * cols_ + j];
  }
  const T& operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * cols_ + j];
  }

  std::span<T> row(std::size_t i) noexcept {
    return {data_.data() + i * cols_, cols_};
  }
  std::span<const T> row(std::size_t i) const noexcept {
    return {data_.data() + i * cols_, cols_};
  }

  std::vector<T>& storage() noexcept { return data_; }
  const std::vector<T>& storage() const noexcept { return data_; }

  bool operator==(const BasicMatrix&) const = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<T> data_;
};

using Matrix = BasicMatrix<double>;
using ByteMatrix = BasicMatrix<std::uint8_t>;
using Vector = std::vector<double>;

// Reductions accumulate strictly left to right so results never depend on
// chunking or thread count.

inline double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionMismatch("dot: length mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) acc += a[k] * b[k];
  return acc;
}

inline double l2_norm(std::span<const double> a) {
  double acc = 0.0;
  for (double x : a) acc += x * x;
  return std::sqrt(acc);
}

inline double squared_distance(std::span<const double> a,
                               std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionMismatch("squared_distance: length mismatch");
  double acc = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const double d = a[k] - b[k];
    acc += d * d;
  }
  return acc;
}

inline double frobenius_norm(const Matrix& m) {
  double acc = 0.0;
  for (double x : m.storage()) acc += x * x;
  return std::sqrt(acc);
}

inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionMismatch("matmul: inner dimensions differ");
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double acc = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) acc += a(i, k) * b(k, j);
      out(i, j) = acc;
    }
  }
  return out;
}

}  // namespace disdop
