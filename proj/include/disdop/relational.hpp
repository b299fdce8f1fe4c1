#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "disdop/core.hpp"
#include "disdop/errors.hpp"
#include "disdop/matrix.hpp"

namespace disdop::relational {

/// One detection instance: frozen visual feature f_v, frozen global image
/// feature f_g, frozen text embedding t, and the trainable contextual
/// feature f_c. All four share one dimension D.
struct Instance {
  Vector f_v;
  Vector f_g;
  Vector t;
  Vector f_c;
  std::string image_id;
  std::string category_id;
};

/// Learnable mixing weight, stored as the unconstrained scalar rho and
/// mapped through the logistic function so mu always lies in (0, 1).
struct MuParam {
  double rho = 0.0;

  double mu() const { return 1.0 / (1.0 + std::exp(-rho)); }
};

/// Which instance pairs supervise the relational loss.
///   PointWise    only each instance against itself, squared L2
///   WithinImage  pairs sharing an image_id
///   WithinBatch  all N^2 ordered pairs
enum class DistillScope { PointWise, WithinImage, WithinBatch };

/// Loss value with gradients for the trainable quantities: the contextual
/// features (one row per instance) and rho.
struct RelationalLoss {
  double value = 0.0;
  Matrix grad_fc;
  double grad_rho = 0.0;
};

/// Enhanced feature f_eh = layer_normalize(mu * f_g + (1 - mu) * f_v).
inline Vector enhance_feature(std::span<const double> f_g,
                              std::span<const double> f_v, double mu) {
  if (f_g.size() != f_v.size())
    throw DimensionMismatch("enhance_feature: f_g and f_v lengths differ");
  if (!(mu > 0.0 && mu < 1.0))
    throw InvalidConfig("mixing weight mu must lie in (0, 1)");
  Vector mixed(f_g.size());
  for (std::size_t k = 0; k < f_g.size(); ++k)
    mixed[k] = mu * f_g[k] + (1.0 - mu) * f_v[k];
  return layer_normalize(mixed);
}

namespace detail {

inline std::size_t common_dim(std::span<const Instance> batch) {
  const std::size_t d = batch[0].f_c.size();
  for (const Instance& ins : batch) {
    if (ins.f_c.size() != d || ins.f_v.size() != d || ins.f_g.size() != d ||
        ins.t.size() != d)
      throw DimensionMismatch("instance fields must share one dimension");
  }
  return d;
}

}  // namespace detail

/// Point-wise distillation: L = (1/N) sum_i |f_c^i - f_v^i|^2 with
/// gradient (2/N)(f_c^i - f_v^i) per row. rho does not participate.
inline RelationalLoss point_kd_loss(std::span<const Instance> batch) {
  if (batch.empty()) throw EmptyBatch();
  const std::size_t n = batch.size();
  const std::size_t d = detail::common_dim(batch);
  const double inv_n = 1.0 / static_cast<double>(n);

  RelationalLoss res;
  res.grad_fc = Matrix(n, d);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    acc += squared_distance(batch[i].f_c, batch[i].f_v);
    for (std::size_t k = 0; k < d; ++k)
      res.grad_fc(i, k) = 2.0 * inv_n * (batch[i].f_c[k] - batch[i].f_v[k]);
  }
  res.value = acc * inv_n;
  return res;
}

/// Pair count under a scope: N for PointWise, sum of squared per-image
/// counts for WithinImage, N^2 for WithinBatch.
inline std::size_t scope_pair_count(std::span<const Instance> batch,
                                    DistillScope scope) {
  if (batch.empty()) throw EmptyBatch();
  const std::size_t n = batch.size();
  switch (scope) {
    case DistillScope::PointWise:
      return n;
    case DistillScope::WithinBatch:
      return n * n;
    case DistillScope::WithinImage: {
      std::unordered_map<std::string, std::size_t> counts;
      for (const Instance& ins : batch) ++counts[ins.image_id];
      std::size_t total = 0;
      for (const auto& [id, c] : counts) total += c * c;
      return total;
    }
  }
  return 0;
}

/// Relational distillation over cosine-distance structure:
///   L = (1/Z) sum_pairs ((1 - cos(f_c^i, f_eh^j)) - (1 - cos(t^i, t^j)))^2
/// with f_eh^j = layer_normalize(mu f_g^j + (1 - mu) f_v^j) and Z the pair
/// count of the scope. Pairs include i == j. Gradients flow into every
/// f_c^i and, through the enhanced features, into rho; f_v, f_g and t stay
/// frozen. PointWise delegates to point_kd_loss.
inline RelationalLoss relational_distill_loss(std::span<const Instance> batch,
                                              const MuParam& mu_param,
                                              DistillScope scope) {
  if (batch.empty()) throw EmptyBatch();
  if (scope == DistillScope::PointWise) return point_kd_loss(batch);

  const std::size_t n = batch.size();
  const std::size_t d = detail::common_dim(batch);
  if (d < 2)
    throw DimensionMismatch("relational loss needs dimension >= 2");
  const double mu = mu_param.mu();

  // Enhanced features with the standardization statistics kept for the
  // rho chain rule.
  Matrix eh(n, d);
  Vector sigma(n);
  for (std::size_t j = 0; j < n; ++j) {
    Vector mixed(d);
    for (std::size_t k = 0; k < d; ++k)
      mixed[k] = mu * batch[j].f_g[k] + (1.0 - mu) * batch[j].f_v[k];
    const disdop::detail::Standardized st = disdop::detail::standardize(mixed);
    for (std::size_t k = 0; k < d; ++k) eh(j, k) = st.y[k];
    sigma[j] = st.sigma;
  }

  Vector nc(n), ne(n);
  for (std::size_t i = 0; i < n; ++i) {
    nc[i] = l2_norm(batch[i].f_c);
    if (nc[i] <= kZeroNormTol) throw ZeroVector();
    ne[i] = l2_norm(eh.row(i));
    if (ne[i] <= kZeroNormTol) throw ZeroVector();
  }

  const auto in_scope = [&](std::size_t i, std::size_t j) {
    return scope == DistillScope::WithinBatch ||
           batch[i].image_id == batch[j].image_id;
  };

  std::size_t pair_count = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (in_scope(i, j)) ++pair_count;
    }
  }
  const double inv_z = 1.0 / static_cast<double>(pair_count);

  RelationalLoss res;
  res.grad_fc = Matrix(n, d, 0.0);
  Matrix grad_eh(n, d, 0.0);
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const Vector& fc = batch[i].f_c;
    for (std::size_t j = 0; j < n; ++j) {
      if (!in_scope(i, j)) continue;
      const double c =
          std::clamp(dot(fc, eh.row(j)) / (nc[i] * ne[j]), -1.0, 1.0);
      const double dist = 1.0 - c;
      const double e = cosine_distance(batch[i].t, batch[j].t);
      const double r = dist - e;
      acc += r * r;
      const double coef = 2.0 * r;
      for (std::size_t k = 0; k < d; ++k) {
        res.grad_fc(i, k) +=
            coef * (c * fc[k] / (nc[i] * nc[i]) - eh(j, k) / (nc[i] * ne[j]));
        grad_eh(j, k) +=
            coef * (c * eh(j, k) / (ne[j] * ne[j]) - fc[k] / (nc[i] * ne[j]));
      }
    }
  }
  res.value = acc * inv_z;
  for (double& g : res.grad_fc.storage()) g *= inv_z;

  // rho chain: d f_eh / d mu through the standardization, then the
  // logistic derivative mu (1 - mu).
  double dmu = 0.0;
  const double inv_d = 1.0 / static_cast<double>(d);
  for (std::size_t j = 0; j < n; ++j) {
    double mh = 0.0;
    double myh = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double h = batch[j].f_g[k] - batch[j].f_v[k];
      mh += h;
      myh += eh(j, k) * h;
    }
    mh *= inv_d;
    myh *= inv_d;
    double acc_j = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      const double h = batch[j].f_g[k] - batch[j].f_v[k];
      acc_j += grad_eh(j, k) * (h - mh - eh(j, k) * myh) / sigma[j];
    }
    dmu += acc_j * inv_z;
  }
  res.grad_rho = dmu * mu * (1.0 - mu);
  return res;
}

}  // namespace disdop::relational
