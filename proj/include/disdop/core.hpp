#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>

#include "disdop/errors.hpp"
#include "disdop/matrix.hpp"

namespace disdop {

/// Norms and standard deviations at or below this threshold count as zero.
inline constexpr double kZeroNormTol = 1e-12;

struct Grid {
  std::size_t h = 0;
  std::size_t w = 0;
  bool operator==(const Grid&) const = default;
};

/// N x D patch-feature matrix, one row per patch token. The optional grid
/// ties row order to a row-major H x W layout with H * W == N.
struct FeatureMap {
  Matrix data;
  std::optional<Grid> grid;

  std::size_t patches() const { return data.rows(); }
  std::size_t dim() const { return data.cols(); }

  void validate() const {
    if (data.rows() == 0 || data.cols() == 0)
      throw DimensionMismatch("feature map must be at least 1x1");
    for (double x : data.storage())
      if (!std::isfinite(x)) throw Error("feature map has non-finite entries");
    if (grid && grid->h * grid->w != data.rows())
      throw DimensionMismatch("grid H*W does not match patch count");
  }
};

/// Pairwise cosine similarity of a feature map with itself. Symmetric,
/// unit diagonal, entries in [-1, 1] up to rounding.
struct SimilarityMatrix {
  Matrix data;

  std::size_t size() const { return data.rows(); }

  void validate(double tol = 1e-12) const {
    if (data.rows() != data.cols())
      throw DimensionMismatch("similarity matrix must be square");
    const std::size_t n = data.rows();
    for (std::size_t i = 0; i < n; ++i) {
      if (std::abs(data(i, i) - 1.0) > tol)
        throw Error("similarity diagonal deviates from 1");
      for (std::size_t j = 0; j < n; ++j) {
        if (std::abs(data(i, j) - data(j, i)) > tol)
          throw Error("similarity matrix is not symmetric");
        if (data(i, j) > 1.0 + tol || data(i, j) < -1.0 - tol)
          throw Error("similarity entry outside [-1, 1]");
      }
    }
  }
};

/// Divides every row by its L2 norm. Throws ZeroRow for degenerate rows.
inline Matrix l2_normalize_rows(const Matrix& m) {
  Matrix out(m.rows(), m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const double norm = l2_norm(m.row(i));
    if (norm <= kZeroNormTol) throw ZeroRow(i);
    for (std::size_t j = 0; j < m.cols(); ++j) out(i, j) = m(i, j) / norm;
  }
  return out;
}

/// S[i][j] = cos(f_i, f_j). Rows are normalized once, then S = R * R^T;
/// the upper triangle is mirrored so symmetry holds exactly.
inline SimilarityMatrix cosine_self_similarity(const FeatureMap& f) {
  const Matrix r = l2_normalize_rows(f.data);
  const std::size_t n = r.rows();
  Matrix s(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = dot(r.row(i), r.row(j));
      s(i, j) = v;
      s(j, i) = v;
    }
  }
  return SimilarityMatrix{std::move(s)};
}

/// 1 - cos(a, b), with the cosine clamped into [-1, 1] so the result stays
/// in [0, 2]. Throws ZeroVector when either norm is (near-)zero.
inline double cosine_distance(std::span<const double> a,
                              std::span<const double> b) {
  if (a.size() != b.size())
    throw DimensionMismatch("cosine_distance: length mismatch");
  const double na = l2_norm(a);
  const double nb = l2_norm(b);
  if (na <= kZeroNormTol || nb <= kZeroNormTol) throw ZeroVector();
  const double c = std::clamp(dot(a, b) / (na * nb), -1.0, 1.0);
  return 1.0 - c;
}

/// Row-wise softmax over kept entries only, at temperature tau. The row
/// maximum over kept entries is subtracted before exponentiation; masked
/// entries are exactly zero. Throws EmptyRow when a row keeps nothing.
inline Matrix masked_row_softmax(const Matrix& scores, const ByteMatrix& keep,
                                 double tau) {
  if (scores.rows() != keep.rows() || scores.cols() != keep.cols())
    throw DimensionMismatch("masked_row_softmax: keep mask shape mismatch");
  if (!(tau > 0.0)) throw InvalidConfig("softmax temperature must be > 0");

  Matrix out(scores.rows(), scores.cols(), 0.0);
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    double rowmax = 0.0;
    bool any = false;
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      if (!keep(i, j)) continue;
      if (!any || scores(i, j) > rowmax) rowmax = scores(i, j);
      any = true;
    }
    if (!any) throw EmptyRow(i);

    double sum = 0.0;
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      if (!keep(i, j)) continue;
      const double e = std::exp((scores(i, j) - rowmax) / tau);
      out(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < scores.cols(); ++j) {
      if (keep(i, j)) out(i, j) /= sum;
    }
  }
  return out;
}

namespace detail {

struct Standardized {
  Vector y;
  double mean = 0.0;
  double sigma = 0.0;  // population standard deviation
};

inline Standardized standardize(std::span<const double> v) {
  const std::size_t d = v.size();
  if (d < 2) throw DimensionMismatch("layer_normalize needs dimension >= 2");
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(d);
  double var = 0.0;
  for (double x : v) {
    const double c = x - mean;
    var += c * c;
  }
  var /= static_cast<double>(d);
  const double sigma = std::sqrt(var);
  if (sigma <= kZeroNormTol) throw ConstantVector();
  Standardized out;
  out.mean = mean;
  out.sigma = sigma;
  out.y.resize(d);
  for (std::size_t k = 0; k < d; ++k) out.y[k] = (v[k] - mean) / sigma;
  return out;
}

}  // namespace detail

/// Parameter-free standardization: (v - mean) / std, with the population
/// standard deviation. Throws ConstantVector when std <= 1e-12.
inline Vector layer_normalize(std::span<const double> v) {
  return detail::standardize(v).y;
}

}  // namespace disdop
