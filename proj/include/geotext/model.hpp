#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geotext/multinomial.hpp"
#include "geotext/sphere.hpp"

namespace geotext {

using Eigen::MatrixXd;

// Floor applied to sum_k c_ik wherever coefficients are normalized; the QP can
// legitimately drive a noise hashtag's coefficients to all zeros.
inline constexpr double kCoeffSumFloor = 1e-10;

/// One hashtag instance: sparse word counts plus the geotag sufficient
/// statistic (vector sum of unit directions and their count).
struct HashtagRecord {
  std::string id;
  WordCounts counts;
  Vec3 geo_sum = Vec3::Zero();
  int64_t n_geo = 0;
};

struct Dataset {
  std::vector<HashtagRecord> records;
  Dictionary dictionary;

  int p() const { return static_cast<int>(records.size()); }
  int32_t word_dim() const { return dictionary.size(); }

  void validate() const {
    dictionary.validate();
    if (records.empty()) throw std::invalid_argument("Dataset: no records");
    for (const HashtagRecord& r : records) {
      if (r.counts.total < 1)
        throw std::invalid_argument("Dataset: record without words: " + r.id);
      r.counts.validate(word_dim());
      if (r.n_geo < 0) throw std::invalid_argument("Dataset: negative geotag count");
      if (r.geo_sum.norm() > static_cast<double>(r.n_geo) * (1.0 + 1e-9))
        throw std::invalid_argument("Dataset: geo_sum longer than geotag count: " + r.id);
    }
  }
};

/// Per-event vMF prior (beta, s) and posterior (b, r) state.
struct EventGeo {
  UnitVec3 beta;
  double s = 1.0;
  UnitVec3 b;
  double r = 0.0;  // posterior concentration; diagnostics only
};

/// Gaussian posterior over the stacked event-word scores, kept factored:
/// mean X is K x (D-1); the covariance exists only as (F^{-1}, Delta) with
/// Phi = I_{D-1} (x) F^{-1} - 11^T (x) Delta.
struct WordScorePosterior {
  MatrixXd X;
  MatrixXd F_inv;
  MatrixXd Delta;
};

/// Bound anchor psi_i = scores^T coeffs.col(i), stored factored so that no
/// P x D object is ever materialized.
struct BoundAnchor {
  MatrixXd scores;  // K x (D-1)
  MatrixXd coeffs;  // K x P snapshot taken when the anchor was set

  VectorXd psi(int i) const { return scores.transpose() * coeffs.col(i); }
};

struct ModelState {
  MatrixXd coeffs;  // K x P, nonnegative
  std::vector<EventGeo> events;
  WordScorePosterior word_scores;
  VectorXd kappas;  // per hashtag; 0 where n_geo == 0 (reported as absent)
  BoundAnchor anchor;

  int k() const { return static_cast<int>(coeffs.rows()); }
  int p() const { return static_cast<int>(coeffs.cols()); }
  Eigen::Index word_dim() const { return word_scores.X.cols() + 1; }

  VectorXd bound_point(int i) const { return anchor.psi(i); }

  /// c_i / max(sum_k c_ik, floor).
  VectorXd normalized_coeffs(int i) const {
    const double s = std::max(coeffs.col(i).sum(), kCoeffSumFloor);
    return coeffs.col(i) / s;
  }
};

namespace detail {

/// Streams z_i = h_i\D - M_i p_psi + M_i A psi_i for every hashtag, with
/// psi_i read from the anchor. Buffers are reused; fn(i, psi, p_psi, z).
template <class Fn>
inline void for_each_transformed(const ModelState& st, const Dataset& data, Fn&& fn) {
  const Eigen::Index d1 = st.word_scores.X.cols();
  const double dim = static_cast<double>(d1 + 1);
  VectorXd psi(d1), p(d1), z(d1);
  for (int i = 0; i < data.p(); ++i) {
    psi.noalias() = st.anchor.scores.transpose() * st.anchor.coeffs.col(i);
    softmax_head_into(psi, p);
    const HashtagRecord& rec = data.records[i];
    const double m = static_cast<double>(rec.counts.total);
    const double shift = m * psi.sum() / (2.0 * dim);
    z = (0.5 * m) * psi - m * p;
    z.array() -= shift;
    for (size_t j = 0; j < rec.counts.index.size(); ++j)
      if (rec.counts.index[j] < d1)
        z[rec.counts.index[j]] += static_cast<double>(rec.counts.count[j]);
    fn(i, psi, p, z);
  }
}

inline MatrixXd geo_sum_matrix(const Dataset& data) {
  MatrixXd gs(3, data.p());
  for (int i = 0; i < data.p(); ++i) gs.col(i) = data.records[i].geo_sum;
  return gs;
}

inline MatrixXd event_direction_matrix(const ModelState& st) {
  MatrixXd b(3, st.k());
  for (int k = 0; k < st.k(); ++k) b.col(k) = st.events[k].b.vec();
  return b;
}

}  // namespace detail

/// The tracked surrogate objective, split into its terms. The bound constant
/// -sum_i M_i c_psi is carried so the trace stays comparable across anchor
/// re-expansions; it cancels in every parameter update.
struct SurrogateParts {
  double vmf = 0.0;
  double mult_quadratic = 0.0;  // -(1/2) Tr[(sum_i M_i C~_i A C~_i' + I)(Phi + phi phi')]
  double mult_linear = 0.0;     // phi' sum_i M_i C~_i A h~_i
  double bound_const = 0.0;     // -sum_i M_i c_psi_i

  double total() const { return vmf + mult_quadratic + mult_linear + bound_const; }
};

/// Shared per-iteration pieces of the coefficient quadratic program:
/// Gamma_i = M_i * gamma_unit.
struct CoeffShared {
  MatrixXd gamma_unit;  // (D-1)^2/2D F^-1 - (D-1)/2D Delta + XX'/2 - (X1)(X1)'/2D
  MatrixXd bt;          // K x 3, rows are the posterior event directions
};

inline CoeffShared make_coeff_shared(const ModelState& st) {
  const double d = static_cast<double>(st.word_dim());
  const double d1 = d - 1.0;
  const MatrixXd& x = st.word_scores.X;
  const VectorXd xsum = x.rowwise().sum();
  CoeffShared out;
  out.gamma_unit = (d1 * d1 / (2.0 * d)) * st.word_scores.F_inv -
                   (d1 / (2.0 * d)) * st.word_scores.Delta;
  out.gamma_unit.noalias() += 0.5 * (x * x.transpose());
  out.gamma_unit.noalias() -= (0.5 / d) * (xsum * xsum.transpose());
  out.gamma_unit = 0.5 * (out.gamma_unit + out.gamma_unit.transpose()).eval();
  out.bt = detail::event_direction_matrix(st).transpose();
  return out;
}

inline SurrogateParts surrogate_objective_parts(const ModelState& st, const Dataset& data) {
  if (st.p() != data.p()) throw std::invalid_argument("surrogate_objective: size mismatch");
  const int kk = st.k();
  const double d = static_cast<double>(st.word_dim());
  const double d1 = d - 1.0;
  SurrogateParts parts;

  // vMF term: sum_k t_k . b_k + sum_k log C(s_k) + sum_i N_i log C(kappa_i),
  // t_k = sum_i (c_ik / sum c_i) kappa_i geo_sum_i + s_k beta_k.
  MatrixXd t = MatrixXd::Zero(3, kk);
  for (int k = 0; k < kk; ++k) {
    t.col(k) = st.events[k].s * st.events[k].beta.vec();
    parts.vmf += vmf_log_norm_const(st.events[k].s);
  }
  for (int i = 0; i < data.p(); ++i) {
    const HashtagRecord& rec = data.records[i];
    if (rec.n_geo > 0) {
      const double w = st.kappas[i] / std::max(st.coeffs.col(i).sum(), kCoeffSumFloor);
      t.noalias() += rec.geo_sum * (w * st.coeffs.col(i)).transpose();
      parts.vmf += static_cast<double>(rec.n_geo) * vmf_log_norm_const(st.kappas[i]);
    }
  }
  for (int k = 0; k < kk; ++k) parts.vmf += t.col(k).dot(st.events[k].b.vec());

  // Multinomial term through the (F, Delta, X) factorization.
  const MatrixXd& x = st.word_scores.X;
  const CoeffShared shared = make_coeff_shared(st);
  double quad_c = 0.0;
  double linear = 0.0;
  double bound = 0.0;
  detail::for_each_transformed(
      st, data, [&](int i, const VectorXd& psi, const VectorXd& p, const VectorXd& z) {
        const double m = static_cast<double>(data.records[i].counts.total);
        const auto c = st.coeffs.col(i);
        quad_c += m * c.dot(shared.gamma_unit * c);
        linear += c.dot(x * z);
        // c_psi = lse(psi) + psi'A psi / 2 - psi'p
        const double psi_a_psi =
            0.5 * psi.squaredNorm() - psi.sum() * psi.sum() / (2.0 * d);
        bound -= m * (lse(psi) + 0.5 * psi_a_psi - psi.dot(p));
      });
  const double trace_part = d1 * (st.word_scores.F_inv.trace() - st.word_scores.Delta.trace()) +
                            x.squaredNorm();
  parts.mult_quadratic = -0.5 * (quad_c + trace_part);
  parts.mult_linear = linear;
  parts.bound_const = bound;
  return parts;
}

inline double surrogate_objective(const ModelState& st, const Dataset& data) {
  return surrogate_objective_parts(st, data).total();
}

/// Per-hashtag geolocation log-likelihood under the fused model:
/// N_i log C(kappa_i) + kappa_i geo_sum_i . (B c_i / |B c_i|).
inline VectorXd model_geo_loglik(const ModelState& st, const Dataset& data,
                                 int* n_degenerate = nullptr) {
  if (st.p() != data.p()) throw std::invalid_argument("model_geo_loglik: size mismatch");
  const MatrixXd b = detail::event_direction_matrix(st);
  VectorXd out(data.p());
  int degenerate = 0;
  for (int i = 0; i < data.p(); ++i) {
    const HashtagRecord& rec = data.records[i];
    if (rec.n_geo == 0) {
      out[i] = 0.0;
      continue;
    }
    const Vec3 mix = b * st.coeffs.col(i);
    const double n = mix.norm();
    if (n < 1e-300) {
      ++degenerate;
      out[i] = static_cast<double>(rec.n_geo) * (-kLog4Pi);
      continue;
    }
    out[i] = static_cast<double>(rec.n_geo) * vmf_log_norm_const(st.kappas[i]) +
             st.kappas[i] * rec.geo_sum.dot(mix / n);
  }
  if (n_degenerate) *n_degenerate = degenerate;
  return out;
}

/// Synthetic corpus specification for the generative model.
struct SyntheticSpec {
  int k = 3;
  int p = 200;
  int d = 50;
  int words_per_hashtag = 200;  // M_i
  int geo_per_hashtag = 50;     // N_i
  std::vector<UnitVec3> true_directions;  // size k, or empty to draw uniformly
  double kappa_min = 50.0;
  double kappa_max = 50.0;
  int active_events = 1;
  double word_score_scale = 1.0;  // sigma_u
  uint64_t seed = 0;

  void validate() const {
    if (k < 1 || p < k) throw std::invalid_argument("SyntheticSpec: need 1 <= K <= P");
    if (d < 2) throw std::invalid_argument("SyntheticSpec: need D >= 2");
    if (words_per_hashtag < 1 || geo_per_hashtag < 1)
      throw std::invalid_argument("SyntheticSpec: counts must be >= 1");
    if (active_events < 1 || active_events > k)
      throw std::invalid_argument("SyntheticSpec: active events must be in [1, K]");
    if (!true_directions.empty() && static_cast<int>(true_directions.size()) != k)
      throw std::invalid_argument("SyntheticSpec: need K true directions");
    if (kappa_min < 0.0 || kappa_max < kappa_min)
      throw std::invalid_argument("SyntheticSpec: bad kappa range");
    if (word_score_scale < 0.0) throw std::invalid_argument("SyntheticSpec: bad sigma_u");
  }
};

struct GroundTruth {
  MatrixXd word_scores;  // K x D, full scores (not pivot-reduced)
  MatrixXd directions;   // 3 x K
  MatrixXd coeffs;       // K x P
  VectorXd kappas;       // P
  std::vector<int> primary_event;              // argmax coefficient per hashtag
  std::vector<std::vector<UnitVec3>> geotags;  // raw draws per hashtag
  int resampled = 0;  // coefficient draws rejected for |V c| = 0
};

inline std::pair<Dataset, GroundTruth> generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unif(0.0, 1.0);

  GroundTruth truth;
  truth.directions.resize(3, spec.k);
  if (spec.true_directions.empty()) {
    for (int k = 0; k < spec.k; ++k) {
      Vec3 v;
      do {
        v = Vec3(gauss(rng), gauss(rng), gauss(rng));
      } while (v.norm() < 1e-8);
      truth.directions.col(k) = v.normalized();
    }
  } else {
    for (int k = 0; k < spec.k; ++k) truth.directions.col(k) = spec.true_directions[k].vec();
  }

  truth.word_scores.resize(spec.k, spec.d);
  for (int k = 0; k < spec.k; ++k)
    for (int d = 0; d < spec.d; ++d)
      truth.word_scores(k, d) = spec.word_score_scale * gauss(rng);

  truth.coeffs = MatrixXd::Zero(spec.k, spec.p);
  truth.kappas.resize(spec.p);
  truth.primary_event.resize(spec.p);
  truth.geotags.resize(spec.p);

  Dataset data;
  data.records.resize(spec.p);
  data.dictionary.words.resize(spec.d);
  for (int d = 0; d < spec.d; ++d) {
    std::string name = std::to_string(d);
    data.dictionary.words[d] = "w" + std::string(6 - std::min<size_t>(6, name.size()), '0') + name;
  }

  std::vector<int> order(spec.k);
  std::vector<double> weights(spec.d);
  for (int i = 0; i < spec.p; ++i) {
    // Sparse nonnegative coefficients; resample on exact direction cancellation.
    VectorXd c = VectorXd::Zero(spec.k);
    Vec3 mix = Vec3::Zero();
    for (int attempt = 0;; ++attempt) {
      if (attempt > 100)
        throw std::runtime_error("generate_synthetic: cannot draw non-degenerate coefficients");
      c.setZero();
      for (int k = 0; k < spec.k; ++k) order[k] = k;
      for (int a = 0; a < spec.active_events; ++a) {
        std::uniform_int_distribution<int> pick(a, spec.k - 1);
        std::swap(order[a], order[pick(rng)]);
        c[order[a]] = 0.5 + unif(rng);
      }
      mix = truth.directions * c;
      if (mix.norm() >= 1e-12) break;
      ++truth.resampled;
    }
    truth.coeffs.col(i) = c;
    int arg = 0;
    c.maxCoeff(&arg);
    truth.primary_event[i] = arg;

    const double kappa =
        spec.kappa_min + (spec.kappa_max - spec.kappa_min) * (spec.kappa_max > spec.kappa_min ? unif(rng) : 0.0);
    truth.kappas[i] = kappa;

    HashtagRecord& rec = data.records[i];
    {
      std::string name = std::to_string(i);
      rec.id = "h" + std::string(6 - std::min<size_t>(6, name.size()), '0') + name;
    }
    truth.geotags[i] = vmf_sample(VmfParams(UnitVec3(mix), kappa), spec.geo_per_hashtag, rng);
    rec.n_geo = spec.geo_per_hashtag;
    rec.geo_sum = Vec3::Zero();
    for (const UnitVec3& w : truth.geotags[i]) rec.geo_sum += w.vec();

    // Multinomial word draws from softmax of the full mixed scores.
    const VectorXd scores = truth.word_scores.transpose() * c;
    const double smax = scores.maxCoeff();
    for (int d = 0; d < spec.d; ++d) weights[d] = std::exp(scores[d] - smax);
    std::discrete_distribution<int> word(weights.begin(), weights.end());
    std::vector<int64_t> counts(spec.d, 0);
    for (int m = 0; m < spec.words_per_hashtag; ++m) ++counts[word(rng)];
    std::vector<std::pair<int32_t, int64_t>> entries;
    for (int d = 0; d < spec.d; ++d)
      if (counts[d] > 0) entries.emplace_back(d, counts[d]);
    rec.counts = WordCounts::from_pairs(std::move(entries));
  }
  data.validate();
  return {std::move(data), std::move(truth)};
}

}  // namespace geotext
