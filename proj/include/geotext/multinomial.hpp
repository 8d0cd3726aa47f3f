#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

namespace geotext {

using Eigen::VectorXd;

/// Sparse word counts for one hashtag. Indices are strictly increasing,
/// counts >= 1, total carries the number of word draws.
struct WordCounts {
  std::vector<int32_t> index;
  std::vector<int64_t> count;
  int64_t total = 0;

  static WordCounts from_pairs(std::vector<std::pair<int32_t, int64_t>> entries) {
    std::sort(entries.begin(), entries.end());
    WordCounts out;
    for (const auto& [idx, cnt] : entries) {
      if (idx < 0) throw std::invalid_argument("WordCounts: negative word index");
      if (cnt < 1) throw std::invalid_argument("WordCounts: counts must be >= 1");
      if (!out.index.empty() && out.index.back() == idx) {
        out.count.back() += cnt;
      } else {
        out.index.push_back(idx);
        out.count.push_back(cnt);
      }
      out.total += cnt;
    }
    return out;
  }

  size_t nnz() const { return index.size(); }

  void validate(int32_t dim) const {
    int64_t sum = 0;
    int32_t prev = -1;
    for (size_t j = 0; j < index.size(); ++j) {
      if (index[j] <= prev || index[j] >= dim)
        throw std::invalid_argument("WordCounts: bad word index");
      if (count[j] < 1) throw std::invalid_argument("WordCounts: counts must be >= 1");
      prev = index[j];
      sum += count[j];
    }
    if (sum != total) throw std::invalid_argument("WordCounts: total mismatch");
  }
};

/// Ordered dictionary; the pivot word is the last one (index D-1).
struct Dictionary {
  std::vector<std::string> words;

  int32_t size() const { return static_cast<int32_t>(words.size()); }
  int32_t pivot_index() const { return size() - 1; }

  void validate() const {
    if (words.size() < 2) throw std::invalid_argument("Dictionary: need at least 2 words");
    std::unordered_set<std::string> seen(words.begin(), words.end());
    if (seen.size() != words.size())
      throw std::invalid_argument("Dictionary: duplicate words");
  }
};

/// log(1 + sum_d exp(eta_d)); the implicit +1 is the pivot's exp(0).
inline double lse(const VectorXd& eta) {
  const double m = eta.size() > 0 ? std::max(0.0, eta.maxCoeff()) : 0.0;
  double acc = std::exp(-m);
  for (Eigen::Index d = 0; d < eta.size(); ++d) acc += std::exp(eta[d] - m);
  return m + std::log(acc);
}

namespace detail {
inline void softmax_head_into(const VectorXd& eta, VectorXd& p) {
  const double l = lse(eta);
  p.resize(eta.size());
  for (Eigen::Index d = 0; d < eta.size(); ++d) p[d] = std::exp(eta[d] - l);
}
}  // namespace detail

/// Head probabilities exp(eta_d - lse(eta)), d = 1..D-1.
inline VectorXd softmax_head_probs(const VectorXd& eta) {
  VectorXd p;
  detail::softmax_head_into(eta, p);
  return p;
}

/// Full class probabilities of length D; the pivot probability is last.
inline VectorXd softmax_probs(const VectorXd& eta) {
  const double l = lse(eta);
  VectorXd p(eta.size() + 1);
  for (Eigen::Index d = 0; d < eta.size(); ++d) p[d] = std::exp(eta[d] - l);
  p[eta.size()] = std::exp(-l);
  return p;
}

/// A v with A = (I_{D-1} - 11^T/D)/2, applied matrix-free; D = v.size() + 1.
inline VectorXd bohning_A_apply(const VectorXd& v) {
  const double dim = static_cast<double>(v.size() + 1);
  return (0.5 * v.array() - v.sum() / (2.0 * dim)).matrix();
}

/// A^{-1} v = 2 (v + sum(v) 1), from A^{-1} = 2 (I + 11^T).
inline VectorXd bohning_A_inverse_apply(const VectorXd& v) {
  return (2.0 * (v.array() + v.sum())).matrix();
}

struct TransformedObs {
  VectorXd h_tilde;  // A^{-1}(h/M - p_psi) + psi
  VectorXd z;        // M A h_tilde = h - M p_psi + M A psi
};

/// Bound-transformed observation for one hashtag at anchor psi (length D-1).
/// z is computed directly from counts without applying A^{-1}.
inline TransformedObs transformed_obs(const WordCounts& h, const VectorXd& psi) {
  if (h.total < 1) throw std::invalid_argument("transformed_obs: empty word counts");
  const Eigen::Index d1 = psi.size();
  h.validate(static_cast<int32_t>(d1) + 1);
  const double m = static_cast<double>(h.total);
  const VectorXd p = softmax_head_probs(psi);
  VectorXd head = VectorXd::Zero(d1);
  for (size_t j = 0; j < h.index.size(); ++j)
    if (h.index[j] < d1) head[h.index[j]] = static_cast<double>(h.count[j]);
  TransformedObs out;
  out.h_tilde = bohning_A_inverse_apply(head / m - p) + psi;
  out.z = head - m * p + m * bohning_A_apply(psi);
  return out;
}

/// log pmf of the multinomial with natural parameters eta (pivot score 0).
inline double multinomial_log_pmf(const WordCounts& h, const VectorXd& eta) {
  h.validate(static_cast<int32_t>(eta.size()) + 1);
  double out = std::lgamma(static_cast<double>(h.total) + 1.0);
  for (size_t j = 0; j < h.index.size(); ++j) {
    out -= std::lgamma(static_cast<double>(h.count[j]) + 1.0);
    if (h.index[j] < eta.size()) out += static_cast<double>(h.count[j]) * eta[h.index[j]];
  }
  return out - static_cast<double>(h.total) * lse(eta);
}

/// c_psi of the quadratic bound lse(eta) <= eta'A eta / 2 + g_psi'eta + c_psi.
inline double lse_bound_const(const VectorXd& psi) {
  const VectorXd p = softmax_head_probs(psi);
  return lse(psi) + 0.5 * psi.dot(bohning_A_apply(psi)) - psi.dot(p);
}

/// Value of the quadratic upper bound at eta, anchored at psi.
inline double lse_quadratic_bound(const VectorXd& eta, const VectorXd& psi) {
  const VectorXd g = softmax_head_probs(psi) - bohning_A_apply(psi);
  return 0.5 * eta.dot(bohning_A_apply(eta)) + g.dot(eta) + lse_bound_const(psi);
}

}  // namespace geotext
