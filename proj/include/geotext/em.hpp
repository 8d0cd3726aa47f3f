#pragma once

#include <Eigen/Dense>

#include <chrono>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "geotext/model.hpp"
#include "geotext/qp.hpp"

namespace geotext {

inline constexpr double kTauClamp = 1.0 - 1e-8;

enum class KappaSolver { kBanerjee, kBisection };

struct FitConfig {
  int k = 2;
  int max_iters = 200;
  double rel_tol = 1e-6;
  double qp_tol = 1e-8;
  int qp_max_iters = 500;
  uint64_t seed = 0;
  bool deterministic = true;
  KappaSolver kappa_solver = KappaSolver::kBanerjee;
  double bisection_tol = 1e-10;

  void validate() const {
    if (k < 1) throw std::invalid_argument("FitConfig: k must be >= 1");
    if (max_iters < 1) throw std::invalid_argument("FitConfig: max_iters must be >= 1");
    if (!(rel_tol > 0.0) || !(qp_tol > 0.0) || !(bisection_tol > 0.0))
      throw std::invalid_argument("FitConfig: tolerances must be > 0");
    if (qp_max_iters < 1) throw std::invalid_argument("FitConfig: qp_max_iters must be >= 1");
  }
};

struct IterationStats {
  double objective = 0.0;
  double vmf_e_ms = 0.0;
  double vmf_m_ms = 0.0;
  double mult_e_ms = 0.0;
  double mult_m_ms = 0.0;
  double coeff_ms = 0.0;
  double objective_ms = 0.0;
  double total_ms = 0.0;
  int64_t qp_iterations = 0;
  int warnings = 0;
};

struct FitTrace {
  std::vector<IterationStats> iterations;
  std::vector<std::string> warnings;  // capped at kMaxStoredWarnings
  int64_t warning_count = 0;
  int objective_decreases = 0;  // drops beyond the relative slack
  bool converged = false;

  static constexpr size_t kMaxStoredWarnings = 100;
  void warn(const std::string& msg) {
    ++warning_count;
    if (warnings.size() < kMaxStoredWarnings) warnings.push_back(msg);
  }
};

namespace detail {

inline double estimate_kappa(double tau, const FitConfig& cfg) {
  return cfg.kappa_solver == KappaSolver::kBisection
             ? solve_kappa_bisection(tau, cfg.bisection_tol)
             : estimate_kappa_banerjee(tau);
}

/// k-means++-style seeding over unit directions, one assignment pass, then a
/// normalized per-cluster resultant. K = 1 degenerates to the global mean.
inline std::vector<UnitVec3> seed_event_directions(const std::vector<Vec3>& dirs, int k,
                                                   std::mt19937_64& rng) {
  std::vector<UnitVec3> out;
  out.reserve(k);
  const auto random_unit = [&rng]() {
    std::normal_distribution<double> gauss(0.0, 1.0);
    Vec3 v;
    do {
      v = Vec3(gauss(rng), gauss(rng), gauss(rng));
    } while (v.norm() < 1e-8);
    return UnitVec3(v);
  };
  if (dirs.empty()) {
    for (int j = 0; j < k; ++j) out.push_back(random_unit());
    return out;
  }
  std::vector<Vec3> centers;
  std::uniform_int_distribution<size_t> first(0, dirs.size() - 1);
  centers.push_back(dirs[first(rng)]);
  std::vector<double> d2(dirs.size());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  while (static_cast<int>(centers.size()) < k) {
    double total = 0.0;
    for (size_t i = 0; i < dirs.size(); ++i) {
      double best = std::numeric_limits<double>::max();
      for (const Vec3& c : centers) best = std::min(best, (dirs[i] - c).squaredNorm());
      d2[i] = best;
      total += best;
    }
    if (total <= 0.0) {
      centers.push_back(random_unit().vec());
      continue;
    }
    double u = unif(rng) * total;
    size_t pick = dirs.size() - 1;
    for (size_t i = 0; i < dirs.size(); ++i) {
      u -= d2[i];
      if (u <= 0.0) {
        pick = i;
        break;
      }
    }
    centers.push_back(dirs[pick]);
  }
  std::vector<Vec3> sums(k, Vec3::Zero());
  for (const Vec3& x : dirs) {
    int best = 0;
    double bd = (x - centers[0]).squaredNorm();
    for (int j = 1; j < k; ++j) {
      const double d = (x - centers[j]).squaredNorm();
      if (d < bd) {
        bd = d;
        best = j;
      }
    }
    sums[best] += x;
  }
  for (int j = 0; j < k; ++j)
    out.push_back(sums[j].norm() > 1e-12 ? UnitVec3(sums[j]) : UnitVec3(centers[j]));
  return out;
}

}  // namespace detail

inline ModelState init_state(const Dataset& data, const FitConfig& cfg) {
  cfg.validate();
  data.validate();
  if (data.p() < cfg.k) throw std::invalid_argument("init_state: fewer hashtags than events");
  std::mt19937_64 rng(cfg.seed);

  ModelState st;
  st.coeffs.resize(cfg.k, data.p());
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  for (int i = 0; i < data.p(); ++i) {
    double sum = 0.0;
    for (int k = 0; k < cfg.k; ++k) {
      st.coeffs(k, i) = unif(rng);
      sum += st.coeffs(k, i);
    }
    st.coeffs.col(i) /= std::max(sum, kCoeffSumFloor);
  }

  std::vector<Vec3> dirs;
  dirs.reserve(data.p());
  for (const HashtagRecord& rec : data.records)
    if (rec.n_geo > 0 && rec.geo_sum.norm() > 1e-12) dirs.push_back(rec.geo_sum.normalized());
  const std::vector<UnitVec3> seeds = detail::seed_event_directions(dirs, cfg.k, rng);
  st.events.resize(cfg.k);
  for (int k = 0; k < cfg.k; ++k) {
    st.events[k].beta = seeds[k];
    st.events[k].s = 1.0;
    st.events[k].b = seeds[k];
    st.events[k].r = 0.0;
  }

  st.kappas = VectorXd::Zero(data.p());
  for (int i = 0; i < data.p(); ++i) {
    const HashtagRecord& rec = data.records[i];
    if (rec.n_geo >= 2) {
      const double tau =
          std::min(rec.geo_sum.norm() / static_cast<double>(rec.n_geo), kTauClamp);
      st.kappas[i] = estimate_kappa_banerjee(tau);
    }
  }

  const Eigen::Index d1 = data.word_dim() - 1;
  st.word_scores.X = MatrixXd::Zero(cfg.k, d1);
  st.word_scores.F_inv = MatrixXd::Identity(cfg.k, cfg.k);
  st.word_scores.Delta = MatrixXd::Zero(cfg.k, cfg.k);
  st.anchor.scores = MatrixXd::Zero(cfg.k, d1);
  st.anchor.coeffs = st.coeffs;
  return st;
}

/// Posterior update for the event directions: b_k = normalize(t_k), r_k = |t_k|
/// with t_k = sum_i (c_ik / sum c_i) kappa_i geo_sum_i + s_k beta_k.
/// Returns the number of zero-norm arguments (those keep the previous b_k).
inline int vmf_e_step(ModelState& st, const Dataset& data) {
  MatrixXd t(3, st.k());
  for (int k = 0; k < st.k(); ++k) t.col(k) = st.events[k].s * st.events[k].beta.vec();
  for (int i = 0; i < data.p(); ++i) {
    const HashtagRecord& rec = data.records[i];
    if (rec.n_geo == 0) continue;
    const double w = st.kappas[i] / std::max(st.coeffs.col(i).sum(), kCoeffSumFloor);
    t.noalias() += rec.geo_sum * (w * st.coeffs.col(i)).transpose();
  }
  int degenerate = 0;
  for (int k = 0; k < st.k(); ++k) {
    const double r = t.col(k).norm();
    st.events[k].r = r;
    if (r > 0.0)
      st.events[k].b = UnitVec3(Vec3(t.col(k)));
    else
      ++degenerate;
  }
  return degenerate;
}

/// Concentration updates: kappa_i from the clamped projection of the mean
/// geotag onto the mixed posterior direction, s_k from beta_k . b_k, then
/// beta_k = b_k. Hashtags without geotags are left untouched.
inline void vmf_m_step(ModelState& st, const Dataset& data, const FitConfig& cfg = {}) {
  const MatrixXd b = detail::event_direction_matrix(st);
  for (int i = 0; i < data.p(); ++i) {
    const HashtagRecord& rec = data.records[i];
    if (rec.n_geo == 0) continue;
    const double denom =
        static_cast<double>(rec.n_geo) * std::max(st.coeffs.col(i).sum(), kCoeffSumFloor);
    const double tau =
        std::clamp(rec.geo_sum.dot(b * st.coeffs.col(i)) / denom, 0.0, kTauClamp);
    st.kappas[i] = detail::estimate_kappa(tau, cfg);
  }
  for (int k = 0; k < st.k(); ++k) {
    const double dot = std::clamp(st.events[k].beta.dot(st.events[k].b), 0.0, kTauClamp);
    st.events[k].s = detail::estimate_kappa(dot, cfg);
    st.events[k].beta = st.events[k].b;
  }
}

/// Word-score posterior via the matrix inversion lemma: only K x K inversions.
/// F = C Lambda_M C'/2 + I; Delta = F^-1 (C Y C') F^-1 with
/// C Y C' = -W - W (F/(D-1) - W)^-1 W, W = C (Lambda_M / 2D) C';
/// X = F^-1 C Z - Delta C Z 1 1'. Returns 1 if the inner solve was regularized.
inline int mult_e_step(ModelState& st, const Dataset& data) {
  const int kk = st.k();
  const double d = static_cast<double>(data.word_dim());
  const Eigen::Index d1 = data.word_dim() - 1;

  VectorXd m(data.p());
  for (int i = 0; i < data.p(); ++i) m[i] = static_cast<double>(data.records[i].counts.total);
  const MatrixXd s_mat = st.coeffs * m.asDiagonal() * st.coeffs.transpose();
  const MatrixXd f = 0.5 * s_mat + MatrixXd::Identity(kk, kk);
  st.word_scores.F_inv = f.ldlt().solve(MatrixXd::Identity(kk, kk));
  st.word_scores.F_inv =
      0.5 * (st.word_scores.F_inv + st.word_scores.F_inv.transpose()).eval();

  const MatrixXd w = s_mat / (2.0 * d);
  MatrixXd inner = f / (d - 1.0) - w;
  int regularized = 0;
  Eigen::LDLT<MatrixXd> inner_ldlt(inner);
  if (inner_ldlt.info() != Eigen::Success || !inner_ldlt.isPositive()) {
    inner += 1e-10 * MatrixXd::Identity(kk, kk);
    inner_ldlt.compute(inner);
    regularized = 1;
  }
  const MatrixXd cyc = -w - w * inner_ldlt.solve(w);
  st.word_scores.Delta = st.word_scores.F_inv * cyc * st.word_scores.F_inv;
  st.word_scores.Delta =
      0.5 * (st.word_scores.Delta + st.word_scores.Delta.transpose()).eval();

  MatrixXd g = MatrixXd::Zero(kk, d1);
  detail::for_each_transformed(
      st, data, [&](int i, const VectorXd&, const VectorXd&, const VectorXd& z) {
        g.noalias() += st.coeffs.col(i) * z.transpose();
      });
  const VectorXd gsum = g.rowwise().sum();
  st.word_scores.X.noalias() = st.word_scores.F_inv * g;
  st.word_scores.X.colwise() -= st.word_scores.Delta * gsum;
  return regularized;
}

/// Re-anchors the bound at psi_i = X' c_i (stored factored).
inline void mult_m_step(ModelState& st) {
  st.anchor.scores = st.word_scores.X;
  st.anchor.coeffs = st.coeffs;
}

/// Quadratic program for one hashtag's coefficients. Gamma_i is M_i times a
/// shared K x K matrix; gamma_i = kappa_i B' geo_sum_i + X z_i.
inline std::pair<MatrixXd, VectorXd> coeff_subproblem(int i, const ModelState& st,
                                                      const Dataset& data) {
  if (i < 0 || i >= data.p()) throw std::invalid_argument("coeff_subproblem: bad index");
  const CoeffShared shared = make_coeff_shared(st);
  const HashtagRecord& rec = data.records[i];
  const VectorXd psi = st.anchor.psi(i);
  const TransformedObs obs = transformed_obs(rec.counts, psi);
  VectorXd gamma = st.word_scores.X * obs.z;
  if (rec.n_geo > 0) gamma.noalias() += st.kappas[i] * (shared.bt * rec.geo_sum);
  return {static_cast<double>(rec.counts.total) * shared.gamma_unit, std::move(gamma)};
}

struct CoeffUpdateStats {
  int64_t qp_iterations = 0;
  int failures = 0;  // non-converged solves; previous coefficients kept
  int capped = 0;
};

inline CoeffUpdateStats update_coefficients(ModelState& st, const Dataset& data,
                                            double qp_tol = 1e-8, int qp_max_iters = 500) {
  const CoeffShared shared = make_coeff_shared(st);
  CoeffUpdateStats stats;
  VectorXd gamma(st.k());
  detail::for_each_transformed(
      st, data, [&](int i, const VectorXd&, const VectorXd&, const VectorXd& z) {
        const HashtagRecord& rec = data.records[i];
        gamma.noalias() = st.word_scores.X * z;
        if (rec.n_geo > 0) gamma.noalias() += st.kappas[i] * (shared.bt * rec.geo_sum);
        QuadProgram prog(static_cast<double>(rec.counts.total) * shared.gamma_unit, gamma);
        const QpResult res = qp_solve(prog, st.coeffs.col(i), qp_tol, qp_max_iters);
        stats.qp_iterations += res.iterations;
        if (res.capped) ++stats.capped;
        if (res.converged)
          st.coeffs.col(i) = res.c;
        else
          ++stats.failures;
      });
  return stats;
}

/// Generalized EM fit, Algorithm-1 step order: vMF E/M, multinomial E/M,
/// coefficient QPs. Stops when the relative objective change drops below
/// rel_tol or max_iters is reached.
inline std::pair<ModelState, FitTrace> fit(const Dataset& data, const FitConfig& cfg) {
  using clock = std::chrono::steady_clock;
  const auto ms_since = [](clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(clock::now() - t0).count();
  };

  ModelState st = init_state(data, cfg);
  FitTrace trace;
  double prev = 0.0;
  bool have_prev = false;
  for (int it = 0; it < cfg.max_iters; ++it) {
    IterationStats stats;
    const int64_t warnings_before = trace.warning_count;
    const auto t_total = clock::now();

    auto t0 = clock::now();
    const int degenerate = vmf_e_step(st, data);
    stats.vmf_e_ms = ms_since(t0);
    if (degenerate > 0)
      trace.warn("iteration " + std::to_string(it + 1) + ": " + std::to_string(degenerate) +
                 " event direction(s) had zero-norm posterior argument");

    t0 = clock::now();
    vmf_m_step(st, data, cfg);
    stats.vmf_m_ms = ms_since(t0);

    t0 = clock::now();
    const int regularized = mult_e_step(st, data);
    stats.mult_e_ms = ms_since(t0);
    if (regularized)
      trace.warn("iteration " + std::to_string(it + 1) + ": inner K x K solve regularized");

    t0 = clock::now();
    mult_m_step(st);
    stats.mult_m_ms = ms_since(t0);

    t0 = clock::now();
    const CoeffUpdateStats coeff = update_coefficients(st, data, cfg.qp_tol, cfg.qp_max_iters);
    stats.coeff_ms = ms_since(t0);
    stats.qp_iterations = coeff.qp_iterations;
    if (coeff.failures > 0)
      trace.warn("iteration " + std::to_string(it + 1) + ": " + std::to_string(coeff.failures) +
                 " coefficient QP(s) kept previous iterate");
    if (coeff.capped > 0)
      trace.warn("iteration " + std::to_string(it + 1) + ": " + std::to_string(coeff.capped) +
                 " coefficient vector(s) hit the magnitude cap");

    t0 = clock::now();
    const double obj = surrogate_objective(st, data);
    stats.objective_ms = ms_since(t0);
    if (!std::isfinite(obj))
      throw std::runtime_error("fit: non-finite objective at iteration " +
                               std::to_string(it + 1));
    stats.objective = obj;

    if (have_prev && obj < prev - 1e-6 * (1.0 + std::abs(prev))) {
      ++trace.objective_decreases;
      trace.warn("iteration " + std::to_string(it + 1) + ": objective decreased from " +
                 std::to_string(prev) + " to " + std::to_string(obj));
    }
    stats.warnings = static_cast<int>(trace.warning_count - warnings_before);
    stats.total_ms = ms_since(t_total);
    trace.iterations.push_back(stats);

    if (have_prev && std::abs(obj - prev) / (1.0 + std::abs(prev)) < cfg.rel_tol) {
      trace.converged = true;
      break;
    }
    prev = obj;
    have_prev = true;
  }
  return {std::move(st), std::move(trace)};
}

}  // namespace geotext
