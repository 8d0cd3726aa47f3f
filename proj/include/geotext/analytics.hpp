#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <vector>

#include "geotext/model.hpp"

namespace geotext {

/// Partition of P instances; ids contiguous from 0.
struct Clustering {
  std::vector<int32_t> labels;
  int32_t k = 0;

  static Clustering from_labels(const std::vector<int32_t>& raw) {
    Clustering out;
    out.labels.reserve(raw.size());
    std::vector<int32_t> remap;
    for (int32_t v : raw) {
      int32_t id = -1;
      for (size_t j = 0; j < remap.size(); ++j)
        if (remap[j] == v) {
          id = static_cast<int32_t>(j);
          break;
        }
      if (id < 0) {
        id = static_cast<int32_t>(remap.size());
        remap.push_back(v);
      }
      out.labels.push_back(id);
    }
    out.k = static_cast<int32_t>(remap.size());
    return out;
  }

  int n() const { return static_cast<int>(labels.size()); }
};

/// Lloyd's algorithm with k-means++ seeding; an emptied cluster is reseeded to
/// the point farthest from its current center. Rows of points are instances.
inline Clustering kmeans(const MatrixXd& points, int k, uint64_t seed, int max_iters = 100,
                         std::vector<double>* cost_trace = nullptr) {
  const int n = static_cast<int>(points.rows());
  if (k < 1 || k > n) throw std::invalid_argument("kmeans: need 1 <= k <= #points");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::uniform_int_distribution<int> uniform_row(0, n - 1);

  MatrixXd centers(k, points.cols());
  centers.row(0) = points.row(uniform_row(rng));
  VectorXd d2 = VectorXd::Constant(n, std::numeric_limits<double>::max());
  for (int c = 1; c < k; ++c) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) {
      d2[i] = std::min(d2[i], (points.row(i) - centers.row(c - 1)).squaredNorm());
      total += d2[i];
    }
    int pick = uniform_row(rng);
    if (total > 0.0) {
      double u = unif(rng) * total;
      for (int i = 0; i < n; ++i) {
        u -= d2[i];
        if (u <= 0.0) {
          pick = i;
          break;
        }
      }
    }
    centers.row(c) = points.row(pick);
  }

  std::vector<int32_t> labels(n, 0);
  std::vector<int> sizes(k, 0);
  for (int it = 0; it < max_iters; ++it) {
    bool changed = false;
    double cost = 0.0;
    std::fill(sizes.begin(), sizes.end(), 0);
    for (int i = 0; i < n; ++i) {
      int best = 0;
      double bd = (points.row(i) - centers.row(0)).squaredNorm();
      for (int c = 1; c < k; ++c) {
        const double d = (points.row(i) - centers.row(c)).squaredNorm();
        if (d < bd) {
          bd = d;
          best = c;
        }
      }
      if (labels[i] != best) {
        labels[i] = best;
        changed = true;
      }
      ++sizes[best];
      cost += bd;
    }
    if (cost_trace) cost_trace->push_back(cost);
    for (int c = 0; c < k; ++c) {
      if (sizes[c] > 0) continue;
      // Reseed to the point farthest from its assigned center.
      int far = 0;
      double fd = -1.0;
      for (int i = 0; i < n; ++i) {
        const double d = (points.row(i) - centers.row(labels[i])).squaredNorm();
        if (d > fd) {
          fd = d;
          far = i;
        }
      }
      centers.row(c) = points.row(far);
      labels[far] = c;
      changed = true;
    }
    centers.setZero();
    std::fill(sizes.begin(), sizes.end(), 0);
    for (int i = 0; i < n; ++i) {
      centers.row(labels[i]) += points.row(i);
      ++sizes[labels[i]];
    }
    for (int c = 0; c < k; ++c)
      if (sizes[c] > 0) centers.row(c) /= static_cast<double>(sizes[c]);
    if (!changed && it > 0) break;
  }
  Clustering out;
  out.labels = std::move(labels);
  out.k = k;
  return out;
}

namespace detail {

struct PairCounts {
  double same_both = 0.0;   // pairs co-clustered in both partitions
  double same_a = 0.0;      // pairs co-clustered in a
  double same_b = 0.0;
  double total = 0.0;       // n choose 2
};

inline PairCounts contingency_pairs(const Clustering& a, const Clustering& b) {
  if (a.labels.size() != b.labels.size())
    throw std::invalid_argument("rand index: partition length mismatch");
  const double n = static_cast<double>(a.labels.size());
  const auto choose2 = [](double m) { return m * (m - 1.0) / 2.0; };
  MatrixXd table = MatrixXd::Zero(std::max<int32_t>(a.k, 1), std::max<int32_t>(b.k, 1));
  for (size_t i = 0; i < a.labels.size(); ++i) table(a.labels[i], b.labels[i]) += 1.0;
  PairCounts out;
  out.total = choose2(n);
  for (Eigen::Index r = 0; r < table.rows(); ++r)
    for (Eigen::Index c = 0; c < table.cols(); ++c) out.same_both += choose2(table(r, c));
  for (Eigen::Index r = 0; r < table.rows(); ++r) out.same_a += choose2(table.row(r).sum());
  for (Eigen::Index c = 0; c < table.cols(); ++c) out.same_b += choose2(table.col(c).sum());
  return out;
}

}  // namespace detail

/// Fraction of agreeing pairs; 1 iff the partitions are identical.
inline double rand_index(const Clustering& a, const Clustering& b) {
  const detail::PairCounts pc = detail::contingency_pairs(a, b);
  if (pc.total <= 0.0) return 1.0;  // fewer than two instances
  return (pc.total + 2.0 * pc.same_both - pc.same_a - pc.same_b) / pc.total;
}

/// Permutation-model corrected rand index. The degenerate 0/0 case (e.g. both
/// partitions a single cluster) is defined as 1.
inline double adjusted_rand_index(const Clustering& a, const Clustering& b) {
  const detail::PairCounts pc = detail::contingency_pairs(a, b);
  if (pc.total <= 0.0) return 1.0;
  const double expected = pc.same_a * pc.same_b / pc.total;
  const double denom = 0.5 * (pc.same_a + pc.same_b) - expected;
  if (denom == 0.0) return 1.0;
  return (pc.same_both - expected) / denom;
}

/// Torgerson double-centering MDS: top eigenpairs of -J D^2 J / 2, output
/// centered at the origin. Rank-deficient inputs zero the trailing columns.
inline MatrixXd classical_mds(const MatrixXd& points, int dims = 2,
                              bool* rank_deficient = nullptr) {
  const int n = static_cast<int>(points.rows());
  if (n < 2) throw std::invalid_argument("classical_mds: need at least 2 points");
  if (dims < 1) throw std::invalid_argument("classical_mds: dims must be >= 1");
  MatrixXd sq(n, n);
  for (int i = 0; i < n; ++i) {
    sq(i, i) = 0.0;
    for (int j = i + 1; j < n; ++j) {
      const double d = (points.row(i) - points.row(j)).squaredNorm();
      sq(i, j) = d;
      sq(j, i) = d;
    }
  }
  const VectorXd row_mean = sq.rowwise().mean();
  const double grand = row_mean.mean();
  MatrixXd b = -0.5 * sq;
  b.colwise() += 0.5 * row_mean;
  b.rowwise() += 0.5 * row_mean.transpose();
  b.array() -= 0.5 * grand;

  Eigen::SelfAdjointEigenSolver<MatrixXd> eig(b);  // ascending eigenvalues
  MatrixXd coords = MatrixXd::Zero(n, dims);
  bool deficient = false;
  const double scale = std::max(eig.eigenvalues().cwiseAbs().maxCoeff(), 1e-300);
  for (int j = 0; j < dims; ++j) {
    const Eigen::Index src = n - 1 - j;
    if (src < 0 || eig.eigenvalues()[src] <= 1e-12 * scale) {
      deficient = true;
      continue;
    }
    coords.col(j) = eig.eigenvectors().col(src) * std::sqrt(eig.eigenvalues()[src]);
  }
  coords.rowwise() -= coords.colwise().mean();
  if (rank_deficient) *rank_deficient = deficient;
  return coords;
}

/// Per-event comparison of fused vs individually fitted geolocation
/// log-likelihoods, with normal-approximation 95% confidence intervals.
struct GofRow {
  int event = 0;
  int n = 0;          // hashtags included in the comparison
  int excluded = 0;   // hashtags with fewer than 2 geotags
  double fused_mean = 0.0, fused_lo = 0.0, fused_hi = 0.0;
  double baseline_mean = 0.0, baseline_lo = 0.0, baseline_hi = 0.0;
};

inline std::vector<GofRow> goodness_of_fit(
    const ModelState& st, const Dataset& data,
    const std::vector<std::vector<UnitVec3>>& raw_geo) {
  if (static_cast<int>(raw_geo.size()) != data.p())
    throw std::invalid_argument("goodness_of_fit: raw geotag list size mismatch");
  const VectorXd fused = model_geo_loglik(st, data);
  std::vector<std::vector<double>> fused_by_event(st.k()), base_by_event(st.k());
  std::vector<int> excluded(st.k(), 0);
  for (int i = 0; i < data.p(); ++i) {
    const HashtagRecord& rec = data.records[i];
    if (static_cast<int64_t>(raw_geo[i].size()) != rec.n_geo)
      throw std::invalid_argument("goodness_of_fit: raw geotag count mismatch: " + rec.id);
    if (std::max(st.coeffs.col(i).sum(), 0.0) <= kCoeffSumFloor) continue;  // unassigned
    int event = 0;
    st.coeffs.col(i).maxCoeff(&event);
    if (rec.n_geo < 2) {
      ++excluded[event];
      continue;
    }
    const VmfFit fit = vmf_mle(raw_geo[i]);
    double base = 0.0;
    for (const UnitVec3& w : raw_geo[i]) base += vmf_log_pdf(w, fit.params);
    fused_by_event[event].push_back(fused[i]);
    base_by_event[event].push_back(base);
  }
  std::vector<GofRow> rows;
  const auto ci = [](const std::vector<double>& xs, double& mean, double& lo, double& hi) {
    const double m = static_cast<double>(xs.size());
    double sum = 0.0;
    for (double x : xs) sum += x;
    mean = sum / m;
    double var = 0.0;
    for (double x : xs) var += (x - mean) * (x - mean);
    const double half = m > 1 ? 1.96 * std::sqrt(var / (m - 1.0) / m) : 0.0;
    lo = mean - half;
    hi = mean + half;
  };
  for (int k = 0; k < st.k(); ++k) {
    if (fused_by_event[k].empty()) continue;
    GofRow row;
    row.event = k;
    row.n = static_cast<int>(fused_by_event[k].size());
    row.excluded = excluded[k];
    ci(fused_by_event[k], row.fused_mean, row.fused_lo, row.fused_hi);
    ci(base_by_event[k], row.baseline_mean, row.baseline_lo, row.baseline_hi);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace geotext
