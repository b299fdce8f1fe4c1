#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "disdop/core.hpp"
#include "disdop/errors.hpp"
#include "disdop/matrix.hpp"

namespace disdop::fusion {

/// Outlier filtering variants for teacher fusion.
///   SemanticAdaptive  per-row LOF inside each structural neighborhood
///   GlobalLof         one LOF pass over all patches, broadcast to all rows
///   NoFilter          mask stays all-zero
enum class FusionStrategy { SemanticAdaptive, GlobalLof, NoFilter };

struct FusionConfig {
  double gamma = 0.5;        // attention similarity threshold
  double gamma_lof = 0.8;    // structural neighborhood threshold
  double tau_lof = 1.2;      // LOF score above this flags an outlier
  double tau = 0.07;         // attention softmax temperature
  std::size_t k_lof = 5;     // LOF neighbor count
  FusionStrategy strategy = FusionStrategy::SemanticAdaptive;

  void validate() const {
    if (!(gamma >= -1.0 && gamma <= 1.0))
      throw InvalidConfig("fusion.gamma must lie in [-1, 1]");
    if (!(gamma_lof >= -1.0 && gamma_lof <= 1.0))
      throw InvalidConfig("fusion.gamma_lof must lie in [-1, 1]");
    if (!(tau_lof >= 1.0)) throw InvalidConfig("fusion.tau_lof must be >= 1");
    if (!(tau > 0.0)) throw InvalidConfig("fusion.tau must be > 0");
    if (k_lof < 1) throw InvalidConfig("fusion.k_lof must be >= 1");
  }
};

/// Context-dependent outlier decisions: data(i, j) == 1 means patch j is
/// anomalous from row i's viewpoint. The diagonal is always zero.
struct OutlierMask {
  ByteMatrix data;
};

/// Row-stochastic calibrated attention weights.
struct AttentionMatrix {
  Matrix data;

  void validate(double tol = 1e-9) const {
    if (data.rows() != data.cols())
      throw DimensionMismatch("attention matrix must be square");
    for (std::size_t i = 0; i < data.rows(); ++i) {
      double sum = 0.0;
      for (std::size_t j = 0; j < data.cols(); ++j) {
        if (data(i, j) < 0.0) throw Error("negative attention weight");
        sum += data(i, j);
      }
      if (std::abs(sum - 1.0) > tol)
        throw Error("attention row " + std::to_string(i) +
                    " does not sum to 1");
    }
  }
};

/// Per-row index sets N_i = { j : S[i][j] > gamma_lof }, each sorted
/// ascending. Row i always contains i when gamma_lof < 1.
inline std::vector<std::vector<std::size_t>> semantic_neighborhoods(
    const SimilarityMatrix& s, double gamma_lof) {
  const std::size_t n = s.size();
  std::vector<std::vector<std::size_t>> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (s.data(i, j) > gamma_lof) out[i].push_back(j);
    }
  }
  return out;
}

/// Local outlier factor over the selected rows, computed on Euclidean
/// distance between L2-normalized features. Returns one score per index,
/// in the order given.
///
/// Conventions: the effective neighbor count is min(k, m - 1); neighbor
/// sets include every point tied at the k-distance; sets with fewer than
/// 3 points, or whose pairwise distances are all <= 1e-12, score 1
/// everywhere; a point whose mean reachability vanishes has infinite
/// density and scores 1 itself.
inline std::vector<double> lof_scores(const FeatureMap& features,
                                      std::span<const std::size_t> indices,
                                      std::size_t k) {
  const std::size_t m = indices.size();
  if (m < 2)
    throw TooFewPoints("LOF needs at least 2 points, got " + std::to_string(m));
  if (k < 1) throw InvalidConfig("LOF neighbor count must be >= 1");
  for (std::size_t idx : indices) {
    if (idx >= features.patches())
      throw DimensionMismatch("LOF index out of range");
  }
  if (m < 3) return std::vector<double>(m, 1.0);

  const std::size_t d = features.dim();
  Matrix pts(m, d);
  for (std::size_t p = 0; p < m; ++p) {
    const auto row = features.data.row(indices[p]);
    const double norm = l2_norm(row);
    if (norm <= kZeroNormTol) throw ZeroRow(indices[p]);
    for (std::size_t c = 0; c < d; ++c) pts(p, c) = row[c] / norm;
  }

  Matrix dist(m, m, 0.0);
  double dmax = 0.0;
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t q = p + 1; q < m; ++q) {
      const double dd = std::sqrt(squared_distance(pts.row(p), pts.row(q)));
      dist(p, q) = dd;
      dist(q, p) = dd;
      if (dd > dmax) dmax = dd;
    }
  }
  if (dmax <= kZeroNormTol) return std::vector<double>(m, 1.0);

  const std::size_t keff = std::min(k, m - 1);

  std::vector<double> kdist(m);
  {
    std::vector<double> buf;
    buf.reserve(m - 1);
    for (std::size_t p = 0; p < m; ++p) {
      buf.clear();
      for (std::size_t q = 0; q < m; ++q) {
        if (q != p) buf.push_back(dist(p, q));
      }
      std::sort(buf.begin(), buf.end());
      kdist[p] = buf[keff - 1];
    }
  }

  std::vector<std::vector<std::size_t>> nbrs(m);
  for (std::size_t p = 0; p < m; ++p) {
    for (std::size_t q = 0; q < m; ++q) {
      if (q != p && dist(p, q) <= kdist[p]) nbrs[p].push_back(q);
    }
  }

  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> lrd(m);
  for (std::size_t p = 0; p < m; ++p) {
    double acc = 0.0;
    for (std::size_t q : nbrs[p]) acc += std::max(kdist[q], dist(p, q));
    const double mean_reach = acc / static_cast<double>(nbrs[p].size());
    lrd[p] = mean_reach == 0.0 ? inf : 1.0 / mean_reach;
  }

  std::vector<double> scores(m);
  for (std::size_t p = 0; p < m; ++p) {
    if (std::isinf(lrd[p])) {
      scores[p] = 1.0;
      continue;
    }
    double acc = 0.0;
    for (std::size_t q : nbrs[p]) acc += lrd[q] / lrd[p];
    scores[p] = acc / static_cast<double>(nbrs[p].size());
  }
  return scores;
}

/// Builds the N x N outlier mask for the configured strategy. With
/// SemanticAdaptive, patch j is judged separately inside every row's
/// structural neighborhood, so the same patch can be an outlier for one
/// row and an inlier for another. Neighborhoods with fewer than 3 members
/// flag nothing. M[i][i] stays 0.
inline OutlierMask context_outlier_mask(const SimilarityMatrix& s,
                                        const FeatureMap& f_sem,
                                        const FusionConfig& cfg) {
  cfg.validate();
  const std::size_t n = s.size();
  if (s.data.cols() != n)
    throw DimensionMismatch("similarity matrix must be square");
  if (f_sem.patches() != n)
    throw DimensionMismatch("semantic features and similarity size differ");

  ByteMatrix mask(n, n, 0);
  switch (cfg.strategy) {
    case FusionStrategy::NoFilter:
      break;
    case FusionStrategy::GlobalLof: {
      if (n < 3) break;
      std::vector<std::size_t> all(n);
      for (std::size_t j = 0; j < n; ++j) all[j] = j;
      const std::vector<double> scores = lof_scores(f_sem, all, cfg.k_lof);
      for (std::size_t j = 0; j < n; ++j) {
        if (scores[j] > cfg.tau_lof) {
          for (std::size_t i = 0; i < n; ++i) {
            if (i != j) mask(i, j) = 1;
          }
        }
      }
      break;
    }
    case FusionStrategy::SemanticAdaptive: {
      const auto nbs = semantic_neighborhoods(s, cfg.gamma_lof);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& nb = nbs[i];
        if (nb.size() < 3) continue;
        const std::vector<double> scores = lof_scores(f_sem, nb, cfg.k_lof);
        for (std::size_t pos = 0; pos < nb.size(); ++pos) {
          const std::size_t j = nb[pos];
          if (j != i && scores[pos] > cfg.tau_lof) mask(i, j) = 1;
        }
      }
      break;
    }
  }
  return OutlierMask{std::move(mask)};
}

namespace detail {

/// keep(i, j) = 1 iff S[i][j] > gamma and M[i][j] == 0, or j == i.
/// The diagonal always survives, so no attention row can empty out.
inline ByteMatrix attention_keep(const SimilarityMatrix& s,
                                 const OutlierMask& m, double gamma) {
  const std::size_t n = s.size();
  ByteMatrix keep(n, n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      keep(i, j) = (j == i || (s.data(i, j) > gamma && m.data(i, j) == 0))
                       ? std::uint8_t{1}
                       : std::uint8_t{0};
    }
  }
  return keep;
}

}  // namespace detail

/// Masked softmax of the similarity rows: entries survive when above gamma
/// and not flagged, the diagonal always survives, survivors are softmaxed
/// at temperature tau.
inline AttentionMatrix calibrated_attention(const SimilarityMatrix& s,
                                            const OutlierMask& m, double gamma,
                                            double tau) {
  if (m.data.rows() != s.size() || m.data.cols() != s.size())
    throw DimensionMismatch("outlier mask shape differs from similarity");
  const ByteMatrix keep = detail::attention_keep(s, m, gamma);
  return AttentionMatrix{masked_row_softmax(s.data, keep, tau)};
}

/// Fused teacher rows: F[i] = sum_j A[i][j] * f_sem[j]. Each output row is
/// a convex combination of semantic feature rows.
inline FeatureMap fuse_teacher(const AttentionMatrix& a,
                               const FeatureMap& f_sem) {
  if (a.data.cols() != f_sem.patches())
    throw DimensionMismatch("attention and semantic patch counts differ");
  return FeatureMap{matmul(a.data, f_sem.data), f_sem.grid};
}

struct FusionDiagnostics {
  SimilarityMatrix similarity;
  OutlierMask mask;
  AttentionMatrix attention;
  std::vector<std::size_t> row_survivors;  // kept entries per attention row
  std::size_t total_outliers = 0;          // ones in the mask
};

struct FusionResult {
  FeatureMap fused;
  FusionDiagnostics diagnostics;
};

/// Full fusion pass: structural self-similarity, outlier mask, calibrated
/// attention, fused teacher features.
inline FusionResult fuse_pipeline(const FeatureMap& f_struct,
                                  const FeatureMap& f_sem,
                                  const FusionConfig& cfg) {
  cfg.validate();
  if (f_struct.patches() != f_sem.patches())
    throw DimensionMismatch("structural and semantic patch counts differ");

  FusionResult out;
  out.diagnostics.similarity = cosine_self_similarity(f_struct);
  out.diagnostics.mask =
      context_outlier_mask(out.diagnostics.similarity, f_sem, cfg);

  const ByteMatrix keep = detail::attention_keep(out.diagnostics.similarity,
                                                 out.diagnostics.mask,
                                                 cfg.gamma);
  const std::size_t n = f_struct.patches();
  out.diagnostics.row_survivors.assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (keep(i, j)) ++out.diagnostics.row_survivors[i];
    }
  }
  for (std::uint8_t b : out.diagnostics.mask.data.storage())
    out.diagnostics.total_outliers += b;

  out.diagnostics.attention =
      AttentionMatrix{masked_row_softmax(out.diagnostics.similarity.data, keep,
                                         cfg.tau)};
  out.fused = fuse_teacher(out.diagnostics.attention, f_sem);
  return out;
}

}  // namespace disdop::fusion
