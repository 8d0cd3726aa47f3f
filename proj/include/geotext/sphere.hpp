#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

namespace geotext {

using Vec3 = Eigen::Vector3d;

inline constexpr double kPi = 3.14159265358979323846;
inline constexpr double kLog2Pi = 1.8378770664093453;
inline constexpr double kLog4Pi = 2.5310242469692907;

/// Direction on the 2-sphere; construction normalizes to unit length.
class UnitVec3 {
 public:
  UnitVec3() : v_(0.0, 0.0, 1.0) {}
  UnitVec3(double x, double y, double z) : UnitVec3(Vec3(x, y, z)) {}
  explicit UnitVec3(const Vec3& v) {
    const double n = v.norm();
    if (!std::isfinite(n) || n <= 0.0)
      throw std::invalid_argument("UnitVec3: vector has no direction");
    v_ = v / n;
  }

  const Vec3& vec() const { return v_; }
  double x() const { return v_.x(); }
  double y() const { return v_.y(); }
  double z() const { return v_.z(); }
  double dot(const UnitVec3& o) const { return v_.dot(o.v_); }
  double dot(const Vec3& o) const { return v_.dot(o); }

 private:
  Vec3 v_;
};

/// Latitude in [-90, 90] degrees; longitude normalized into (-180, 180].
struct GeoCoordinate {
  double lat_deg = 0.0;
  double lon_deg = 0.0;

  static GeoCoordinate of(double lat, double lon) {
    if (!std::isfinite(lat) || !std::isfinite(lon) || lat < -90.0 || lat > 90.0)
      throw std::invalid_argument("GeoCoordinate: latitude out of range");
    lon = std::fmod(lon, 360.0);
    if (lon <= -180.0)
      lon += 360.0;
    else if (lon > 180.0)
      lon -= 360.0;
    return GeoCoordinate{lat, lon};
  }
};

namespace detail {
inline constexpr double kDegToRad = kPi / 180.0;
inline constexpr double kRadToDeg = 180.0 / kPi;
}  // namespace detail

inline UnitVec3 geo_to_cartesian(const GeoCoordinate& g) {
  const GeoCoordinate v = GeoCoordinate::of(g.lat_deg, g.lon_deg);
  const double lat = v.lat_deg * detail::kDegToRad;
  const double lon = v.lon_deg * detail::kDegToRad;
  return UnitVec3(std::cos(lat) * std::cos(lon), std::cos(lat) * std::sin(lon),
                  std::sin(lat));
}

/// Inverse of geo_to_cartesian; the poles map to longitude 0.
inline GeoCoordinate cartesian_to_geo(const UnitVec3& u) {
  const Vec3& v = u.vec();
  const double z = std::clamp(v.z(), -1.0, 1.0);
  double lon = 0.0;
  if (v.x() != 0.0 || v.y() != 0.0) lon = std::atan2(v.y(), v.x()) * detail::kRadToDeg;
  if (lon <= -180.0) lon = 180.0;
  return GeoCoordinate{std::asin(z) * detail::kRadToDeg, lon};
}

/// log C(kappa) with C(k) = k / (2 pi (e^k - e^-k)), the 3-D vMF normalizer.
/// kappa = 0 returns the uniform-sphere constant log(1/(4 pi)).
inline double vmf_log_norm_const(double kappa) {
  if (!std::isfinite(kappa) || kappa < 0.0)
    throw std::invalid_argument("vmf_log_norm_const: kappa must be >= 0");
  if (kappa == 0.0) return -kLog4Pi;
  if (kappa < 1e-6) {
    // 2 sinh(k) = 2k (1 + k^2/6 + O(k^4))
    return -kLog4Pi - std::log1p(kappa * kappa / 6.0);
  }
  return std::log(kappa) - kLog2Pi - kappa - std::log(-std::expm1(-2.0 * kappa));
}

struct VmfParams {
  UnitVec3 mean;
  double kappa = 0.0;

  VmfParams() = default;
  VmfParams(UnitVec3 m, double k) : mean(m), kappa(k) {
    if (!std::isfinite(k) || k < 0.0)
      throw std::invalid_argument("VmfParams: kappa must be >= 0");
  }
};

inline double vmf_log_pdf(const Vec3& w, const VmfParams& p) {
  return vmf_log_norm_const(p.kappa) + p.kappa * p.mean.dot(w);
}

inline double vmf_log_pdf(const UnitVec3& w, const VmfParams& p) {
  return vmf_log_pdf(w.vec(), p);
}

/// Corrected continued-fraction estimate kappa ~ (3 tau - tau^3)/(1 - tau^2),
/// clamped to be nonnegative.
inline double estimate_kappa_banerjee(double tau) {
  if (!std::isfinite(tau) || tau < 0.0 || tau >= 1.0)
    throw std::invalid_argument("estimate_kappa_banerjee: tau must be in [0, 1)");
  return std::max(0.0, tau * (3.0 - tau * tau) / (1.0 - tau * tau));
}

/// coth(k) - 1/k, the population mean resultant length of a vMF with
/// concentration k. Continuous and strictly increasing from 0 toward 1.
inline double vmf_mean_resultant(double kappa) {
  if (kappa < 1e-4) {
    const double k2 = kappa * kappa;
    return kappa / 3.0 - kappa * k2 / 45.0 + 2.0 * kappa * k2 * k2 / 945.0;
  }
  return 1.0 + 2.0 / std::expm1(2.0 * kappa) - 1.0 / kappa;
}

/// Solves coth(k) - 1/k = tau by bisection over a geometrically grown bracket.
inline double solve_kappa_bisection(double tau, double tol = 1e-10) {
  if (!std::isfinite(tau) || tau < 0.0 || tau >= 1.0)
    throw std::invalid_argument("solve_kappa_bisection: tau must be in [0, 1)");
  if (!(tol > 0.0)) throw std::invalid_argument("solve_kappa_bisection: tol must be > 0");
  if (tau == 0.0) return 0.0;
  double lo = 0.0, hi = 1.0;
  int grows = 0;
  while (vmf_mean_resultant(hi) < tau) {
    lo = hi;
    hi *= 2.0;
    if (++grows > 2000) throw std::runtime_error("solve_kappa_bisection: bracket failure");
  }
  double mid = hi;
  for (int it = 0; it < 400; ++it) {
    mid = 0.5 * (lo + hi);
    const double r = vmf_mean_resultant(mid) - tau;
    if (std::abs(r) <= tol) return mid;
    if (r < 0.0)
      lo = mid;
    else
      hi = mid;
  }
  if (std::abs(vmf_mean_resultant(mid) - tau) <= tol) return mid;
  throw std::runtime_error("solve_kappa_bisection: no convergence");
}

/// I.i.d. draws via the closed-form inverse CDF of t = w . mean (the 3-D
/// marginal is exponential in t) plus a uniform angle in the tangent plane.
inline std::vector<UnitVec3> vmf_sample(const VmfParams& p, int n, std::mt19937_64& rng) {
  if (n < 1) throw std::invalid_argument("vmf_sample: n must be >= 1");
  const Vec3& mu = p.mean.vec();
  const Vec3 e1 =
      mu.cross(std::abs(mu.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY()).normalized();
  const Vec3 e2 = mu.cross(e1);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  std::vector<UnitVec3> out;
  out.reserve(static_cast<size_t>(n));
  for (int j = 0; j < n; ++j) {
    const double u = unif(rng);
    const double phi = 2.0 * kPi * unif(rng);
    double t;
    if (p.kappa < 1e-12) {
      t = 2.0 * u - 1.0;
    } else {
      const double a = u + (1.0 - u) * std::exp(-2.0 * p.kappa);
      t = a > 0.0 ? 1.0 + std::log(a) / p.kappa : -1.0;
    }
    t = std::clamp(t, -1.0, 1.0);
    const double s = std::sqrt(std::max(0.0, 1.0 - t * t));
    out.emplace_back(Vec3(t * mu + s * (std::cos(phi) * e1 + std::sin(phi) * e2)));
  }
  return out;
}

struct VmfFit {
  VmfParams params;
  double tau = 0.0;       // resultant length, clamped below 1
  bool degenerate = false;  // resultant vanished; mean is arbitrary, kappa 0
};

inline constexpr double kResultantClamp = 1.0 - 1e-8;

/// Single-population ML fit: mean = normalized sample resultant, kappa from
/// the corrected estimator on the clamped resultant length.
inline VmfFit vmf_mle(std::span<const UnitVec3> samples) {
  if (samples.size() < 2) throw std::invalid_argument("vmf_mle: need at least 2 samples");
  Vec3 sum = Vec3::Zero();
  for (const UnitVec3& w : samples) sum += w.vec();
  const double n = static_cast<double>(samples.size());
  const double res = sum.norm();
  if (res < 1e-12 * n) return VmfFit{VmfParams(UnitVec3(0.0, 0.0, 1.0), 0.0), 0.0, true};
  const double tau = std::min(res / n, kResultantClamp);
  return VmfFit{VmfParams(UnitVec3(sum), estimate_kappa_banerjee(tau)), tau, false};
}

}  // namespace geotext
