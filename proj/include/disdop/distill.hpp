#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>

#include "disdop/core.hpp"
#include "disdop/errors.hpp"
#include "disdop/matrix.hpp"

namespace disdop::distill {

struct BackboneLossConfig {
  double tau_t = 0.1;         // teacher attention temperature (sharp)
  double tau_s = 1.0;         // student attention temperature (smooth)
  double lambda_cosine = 1.0;
  double lambda_attn = 1.0;

  void validate() const {
    if (!(tau_t > 0.0)) throw InvalidConfig("backbone.tau_t must be > 0");
    if (!(tau_s > 0.0)) throw InvalidConfig("backbone.tau_s must be > 0");
    if (lambda_cosine < 0.0)
      throw InvalidConfig("backbone.lambda_cosine must be >= 0");
    if (lambda_attn < 0.0)
      throw InvalidConfig("backbone.lambda_attn must be >= 0");
    if (lambda_cosine == 0.0 && lambda_attn == 0.0)
      throw InvalidConfig("backbone loss weights must not both be zero");
  }
};

/// Loss value plus gradient with respect to the student features.
struct LossResult {
  double value = 0.0;
  Matrix grad_student;
};

/// Projects each student patch through the Ds x Dt channel map, then
/// resamples the Hs x Ws grid to Ht x Wt with bilinear interpolation in
/// the align-corners-false convention (cell centers at (i + 0.5) / H,
/// border replication at the edges).
inline FeatureMap align_student(const FeatureMap& f_student, Grid target_grid,
                                std::size_t target_dim,
                                const Matrix& projection) {
  if (!f_student.grid)
    throw MissingGrid("align_student needs a student grid");
  const Grid src = *f_student.grid;
  if (src.h * src.w != f_student.patches())
    throw DimensionMismatch("student grid H*W does not match patch count");
  if (target_grid.h == 0 || target_grid.w == 0)
    throw DimensionMismatch("target grid must be at least 1x1");
  if (projection.rows() != f_student.dim())
    throw DimensionMismatch("projection rows differ from student channels");
  if (projection.cols() != target_dim)
    throw DimensionMismatch("projection cols differ from target channels");

  const Matrix proj = matmul(f_student.data, projection);

  const std::size_t ht = target_grid.h;
  const std::size_t wt = target_grid.w;
  Matrix out(ht * wt, target_dim);
  const auto clamp_idx = [](long v, std::size_t n) {
    return static_cast<std::size_t>(
        std::clamp(v, long{0}, static_cast<long>(n) - 1));
  };
  for (std::size_t r = 0; r < ht; ++r) {
    const double y = (static_cast<double>(r) + 0.5) *
                         (static_cast<double>(src.h) / static_cast<double>(ht)) -
                     0.5;
    const long y0 = static_cast<long>(std::floor(y));
    const double dy = y - static_cast<double>(y0);
    const std::size_t ya = clamp_idx(y0, src.h);
    const std::size_t yb = clamp_idx(y0 + 1, src.h);
    for (std::size_t c = 0; c < wt; ++c) {
      const double x = (static_cast<double>(c) + 0.5) *
                           (static_cast<double>(src.w) /
                            static_cast<double>(wt)) -
                       0.5;
      const long x0 = static_cast<long>(std::floor(x));
      const double dx = x - static_cast<double>(x0);
      const std::size_t xa = clamp_idx(x0, src.w);
      const std::size_t xb = clamp_idx(x0 + 1, src.w);

      const std::size_t o = r * wt + c;
      for (std::size_t ch = 0; ch < target_dim; ++ch) {
        out(o, ch) = (1.0 - dy) * (1.0 - dx) * proj(ya * src.w + xa, ch) +
                     (1.0 - dy) * dx * proj(ya * src.w + xb, ch) +
                     dy * (1.0 - dx) * proj(yb * src.w + xa, ch) +
                     dy * dx * proj(yb * src.w + xb, ch);
      }
    }
  }
  return FeatureMap{std::move(out), target_grid};
}

/// L = (1/N) sum_i (1 - cos(f_t^i, f_s^i)), cosine clamped into [-1, 1].
/// Gradient per student row:
///   -(1/N) * (f_t / (|f_t| |f_s|) - cos_i * f_s / |f_s|^2)
inline LossResult cosine_distill_loss(const FeatureMap& f_teacher,
                                      const FeatureMap& f_student) {
  if (f_teacher.patches() != f_student.patches() ||
      f_teacher.dim() != f_student.dim())
    throw DimensionMismatch("cosine loss needs matching teacher and student");
  const std::size_t n = f_teacher.patches();
  if (n == 0) throw DimensionMismatch("cosine loss needs at least one patch");
  const std::size_t d = f_teacher.dim();
  const double inv_n = 1.0 / static_cast<double>(n);

  LossResult res;
  res.grad_student = Matrix(n, d);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = f_teacher.data.row(i);
    const auto s = f_student.data.row(i);
    const double nt = l2_norm(t);
    if (nt <= kZeroNormTol) throw ZeroRow(i);
    const double ns = l2_norm(s);
    if (ns <= kZeroNormTol) throw ZeroRow(i);
    const double c = std::clamp(dot(t, s) / (nt * ns), -1.0, 1.0);
    acc += 1.0 - c;
    for (std::size_t k = 0; k < d; ++k) {
      res.grad_student(i, k) =
          -inv_n * (t[k] / (nt * ns) - c * s[k] / (ns * ns));
    }
  }
  res.value = acc * inv_n;
  return res;
}

namespace detail {

inline Matrix gram(const Matrix& f) {
  const std::size_t n = f.rows();
  Matrix g(n, n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      const double v = dot(f.row(i), f.row(j));
      g(i, j) = v;
      g(j, i) = v;
    }
  }
  return g;
}

/// Row softmax of z / tau, stabilized by the row maximum.
inline Matrix row_softmax_scaled(const Matrix& z, double tau) {
  const std::size_t n = z.rows();
  Matrix p(n, z.cols());
  for (std::size_t i = 0; i < n; ++i) {
    double rowmax = z(i, 0);
    for (std::size_t j = 1; j < z.cols(); ++j) rowmax = std::max(rowmax, z(i, j));
    double sum = 0.0;
    for (std::size_t j = 0; j < z.cols(); ++j) {
      const double e = std::exp((z(i, j) - rowmax) / tau);
      p(i, j) = e;
      sum += e;
    }
    for (std::size_t j = 0; j < z.cols(); ++j) p(i, j) /= sum;
  }
  return p;
}

}  // namespace detail

/// Attention-map distillation. With P = row_softmax(F F^T / tau),
///   L = (1/N) sum_i KL(P_t[i] || P_s[i]).
/// Teacher and student may have different channel widths. The gradient in
/// the student features is ((W + W^T) / tau_s) F_s with
/// W = (P_s - P_t) / N.
inline LossResult attention_distill_loss(const FeatureMap& f_teacher,
                                         const FeatureMap& f_student,
                                         double tau_t, double tau_s) {
  if (f_teacher.patches() != f_student.patches())
    throw DimensionMismatch("attention loss needs matching patch counts");
  const std::size_t n = f_teacher.patches();
  if (n < 2)
    throw DimensionMismatch("attention loss needs at least 2 patches");
  if (!(tau_t > 0.0) || !(tau_s > 0.0))
    throw InvalidConfig("attention temperatures must be > 0");

  const Matrix pt = detail::row_softmax_scaled(detail::gram(f_teacher.data),
                                               tau_t);
  const Matrix ps = detail::row_softmax_scaled(detail::gram(f_student.data),
                                               tau_s);
  const double inv_n = 1.0 / static_cast<double>(n);

  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double q = pt(i, j);
      if (q > 0.0) acc += q * (std::log(q) - std::log(ps(i, j)));
    }
  }

  // W = (P_s - P_t) / N, dL/dF_s = ((W + W^T) / tau_s) F_s.
  const std::size_t d = f_student.dim();
  LossResult res;
  res.value = acc * inv_n;
  res.grad_student = Matrix(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < d; ++k) {
      double g = 0.0;
      for (std::size_t j = 0; j < n; ++j) {
        const double w_ij = (ps(i, j) - pt(i, j)) * inv_n;
        const double w_ji = (ps(j, i) - pt(j, i)) * inv_n;
        g += (w_ij + w_ji) * f_student.data(j, k);
      }
      res.grad_student(i, k) = g / tau_s;
    }
  }
  return res;
}

/// Weighted sum of the cosine and attention losses. A component with zero
/// weight is skipped entirely, so a single active unit-weight component
/// reproduces that loss bit for bit.
inline LossResult backbone_loss(const FeatureMap& f_teacher,
                                const FeatureMap& f_student,
                                const BackboneLossConfig& cfg) {
  cfg.validate();
  LossResult total;
  bool first = true;
  const auto accumulate = [&](const LossResult& part, double weight) {
    if (first) {
      total.value = weight * part.value;
      total.grad_student = Matrix(part.grad_student.rows(),
                                  part.grad_student.cols());
      for (std::size_t i = 0; i < part.grad_student.storage().size(); ++i)
        total.grad_student.storage()[i] = weight * part.grad_student.storage()[i];
      first = false;
    } else {
      total.value += weight * part.value;
      for (std::size_t i = 0; i < part.grad_student.storage().size(); ++i)
        total.grad_student.storage()[i] +=
            weight * part.grad_student.storage()[i];
    }
  };
  if (cfg.lambda_cosine > 0.0)
    accumulate(cosine_distill_loss(f_teacher, f_student), cfg.lambda_cosine);
  if (cfg.lambda_attn > 0.0)
    accumulate(attention_distill_loss(f_teacher, f_student, cfg.tau_t,
                                      cfg.tau_s),
               cfg.lambda_attn);
  return total;
}

}  // namespace disdop::distill
