#ifndef RBK_COVARIANCE_HPP
#define RBK_COVARIANCE_HPP

// Matern covariance and the modified Bessel function of the second kind.

#include <array>
#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>

#include "rbk/error.hpp"
#include "rbk/geometry.hpp"
#include "rbk/linalg.hpp"

namespace rbk {

namespace detail {

// Taylor coefficients of 1/Gamma(z) = sum_{k>=1} c_k z^k (Abramowitz & Stegun 6.1.34).
inline constexpr std::array<double, 26> kRecipGammaCoeffs = {
    1.0,
    0.5772156649015329,
    -0.6558780715202538,
    -0.0420026350340952,
    0.1665386113822915,
    -0.0421977345555443,
    -0.0096219715278770,
    0.0072189432466630,
    -0.0011651675918591,
    -0.0002152416741149,
    0.0001280502823882,
    -0.0000201348547807,
    -0.0000012504934821,
    0.0000011330272320,
    -0.0000002056338417,
    0.0000000061160950,
    0.0000000050020075,
    -0.0000000011812746,
    0.0000000001043427,
    0.0000000000077823,
    -0.0000000000036968,
    0.0000000000005100,
    -0.0000000000000206,
    -0.0000000000000054,
    0.0000000000000014,
    0.0000000000000001,
};

struct TemmeGammas {
  double gam1;   // (1/Gamma(1-mu) - 1/Gamma(1+mu)) / (2 mu)
  double gam2;   // (1/Gamma(1-mu) + 1/Gamma(1+mu)) / 2
  double gampl;  // 1/Gamma(1+mu)
  double gammi;  // 1/Gamma(1-mu)
};

// Even and odd parts of the 1/Gamma series give gam1 and gam2 directly, so
// there is no cancellation as mu -> 0. Valid for |mu| <= 1/2.
inline TemmeGammas temme_gammas(double mu) {
  const double mu2 = mu * mu;
  double gam1 = 0.0, gam2 = 0.0, p = 1.0;
  for (std::size_t k = 1; k <= kRecipGammaCoeffs.size(); k += 2) {
    gam2 += kRecipGammaCoeffs[k - 1] * p;
    if (k < kRecipGammaCoeffs.size()) gam1 -= kRecipGammaCoeffs[k] * p;
    p *= mu2;
  }
  return {gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1};
}

// K_mu(x) and K_{mu+1}(x) for |mu| <= 1/2: Temme's series for x <= 2,
// Steed's continued fraction (CF2) for x > 2.
inline void bessel_k_pair(double mu, double x, double& k_mu, double& k_mu1) {
  constexpr double eps = 1e-17;
  constexpr int max_iter = 10000;
  const double mu2 = mu * mu;
  if (x <= 2.0) {
    const double x2 = 0.5 * x;
    const double pimu = std::numbers::pi * mu;
    const double fact = std::abs(pimu) < 1e-15 ? 1.0 : pimu / std::sin(pimu);
    const double d = -std::log(x2);
    const double e = mu * d;
    const double fact2 = std::abs(e) < 1e-15 ? 1.0 : std::sinh(e) / e;
    const TemmeGammas g = temme_gammas(mu);
    double ff = fact * (g.gam1 * std::cosh(e) + g.gam2 * fact2 * d);
    double sum = ff;
    const double ee = std::exp(e);
    double p = 0.5 * ee / g.gampl;
    double q = 0.5 / (ee * g.gammi);
    double c = 1.0;
    const double dd = x2 * x2;
    double sum1 = p;
    for (int i = 1; i <= max_iter; ++i) {
      const double di = i;
      ff = (di * ff + p + q) / (di * di - mu2);
      c *= dd / di;
      p /= di - mu;
      q /= di + mu;
      const double del = c * ff;
      sum += del;
      sum1 += c * (p - di * ff);
      if (std::abs(del) < std::abs(sum) * eps) break;
    }
    k_mu = sum;
    k_mu1 = sum1 * (2.0 / x);
  } else {
    double b = 2.0 * (1.0 + x);
    double d = 1.0 / b;
    double h = d, delh = d;
    double q1 = 0.0, q2 = 1.0;
    const double a1 = 0.25 - mu2;
    double q = a1, c = a1;
    double a = -a1;
    double s = 1.0 + q * delh;
    for (int i = 2; i <= max_iter; ++i) {
      a -= 2.0 * (i - 1);
      c = -a * c / i;
      const double qnew = (q1 - b * q2) / a;
      q1 = q2;
      q2 = qnew;
      q += c * qnew;
      b += 2.0;
      d = 1.0 / (b + a * d);
      delh = (b * d - 1.0) * delh;
      h += delh;
      const double dels = q * delh;
      s += dels;
      if (std::abs(dels / s) < eps) break;
    }
    h = a1 * h;
    k_mu = std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) / s;
    k_mu1 = k_mu * (mu + x + 0.5 - h) / x;
  }
}

inline bool is_half_integer(double nu) {
  const double t = nu - 0.5;
  return t >= 0.0 && t == std::floor(t) && t < 64.0;
}

// K_{n+1/2}(x) = sqrt(pi/(2x)) e^{-x} sum_{k=0}^{n} (n+k)! / (k! (n-k)!) (2x)^{-k}
inline double bessel_k_half_integer(double nu, double x) {
  const auto n = static_cast<int>(nu - 0.5);
  double term = 1.0, sum = 1.0;
  for (int k = 1; k <= n; ++k) {
    term *= static_cast<double>((n + k) * (n - k + 1)) / (static_cast<double>(k) * 2.0 * x);
    sum += term;
  }
  return std::sqrt(std::numbers::pi / (2.0 * x)) * std::exp(-x) * sum;
}

}  // namespace detail

/// Modified Bessel function of the second kind K_nu(x), nu >= 0, x > 0.
inline double bessel_k(double nu, double x) {
  require(x > 0.0 && std::isfinite(x), ErrorKind::invalid_argument, "bessel_k: x must be > 0");
  require(nu >= 0.0 && std::isfinite(nu), ErrorKind::invalid_argument, "bessel_k: order must be >= 0");
  if (detail::is_half_integer(nu)) return detail::bessel_k_half_integer(nu, x);
  const auto nl = static_cast<int>(nu + 0.5);
  const double mu = nu - nl;
  double k_mu = 0.0, k_mu1 = 0.0;
  detail::bessel_k_pair(mu, x, k_mu, k_mu1);
  for (int i = 1; i <= nl; ++i) {
    const double next = (mu + i) * (2.0 / x) * k_mu1 + k_mu;
    k_mu = k_mu1;
    k_mu1 = next;
  }
  return k_mu;
}

struct MaternParams {
  double nu = 0.5;     ///< smoothness
  double rho = 1.0;    ///< sill (variance at zero lag)
  double theta = 1.0;  ///< range

  void validate() const {
    require(nu > 0.0 && std::isfinite(nu), ErrorKind::invalid_argument, "Matern: nu must be > 0");
    require(theta > 0.0 && std::isfinite(theta), ErrorKind::invalid_argument, "Matern: theta must be > 0");
    require(rho >= 0.0 && std::isfinite(rho), ErrorKind::invalid_argument, "Matern: rho must be >= 0");
  }
};

/// rho / (2^{nu-1} Gamma(nu)) (d/theta)^nu K_nu(d/theta); rho at d = 0.
inline double matern_cov(const MaternParams& p, double d) {
  require(d >= 0.0, ErrorKind::invalid_argument, "matern_cov: negative distance");
  if (d == 0.0) return p.rho;
  const double t = d / p.theta;
  if (p.nu == 0.5) return p.rho * std::exp(-t);
  const double log_scale = (1.0 - p.nu) * std::numbers::ln2 - std::lgamma(p.nu) + p.nu * std::log(t);
  const double k = bessel_k(p.nu, t);
  if (k == 0.0) return 0.0;
  return p.rho * std::exp(log_scale + std::log(k));
}

/// Dense cross-covariance between two location lists.
inline DenseMatrix cov_matrix(const MaternParams& p, std::span<const Location2D> a,
                              std::span<const Location2D> b) {
  p.validate();
  DenseMatrix c(a.size(), b.size());
  const bool same = a.data() == b.data() && a.size() == b.size();
  for (std::size_t j = 0; j < b.size(); ++j)
    for (std::size_t i = same ? j : 0; i < a.size(); ++i) {
      const double v = matern_cov(p, distance(a[i], b[j]));
      c(i, j) = v;
      if (same) c(j, i) = v;
    }
  return c;
}

/// theta such that the unit-sill correlation at `target_dist` equals
/// `target_corr`, by bisection on log theta over [1e-6, 1e3].
inline double calibrate_theta(double nu, double target_corr, double target_dist) {
  require(target_corr > 0.0 && target_corr < 1.0, ErrorKind::invalid_argument,
          "calibrate_theta: correlation must lie in (0, 1)");
  require(target_dist > 0.0, ErrorKind::invalid_argument, "calibrate_theta: distance must be > 0");
  require(nu > 0.0, ErrorKind::invalid_argument, "calibrate_theta: nu must be > 0");
  auto f = [&](double log_theta) {
    return matern_cov({nu, 1.0, std::exp(log_theta)}, target_dist) - target_corr;
  };
  double lo = std::log(1e-6), hi = std::log(1e3);
  double flo = f(lo), fhi = f(hi);
  if (flo > 0.0 || fhi < 0.0)
    throw Error(ErrorKind::no_solution, "calibrate_theta: no bracket in theta in [1e-6, 1e3]");
  for (int it = 0; it < 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0) return std::exp(mid);
    if (fm < 0.0) lo = mid;
    else hi = mid;
    if (hi - lo < 1e-15) break;
  }
  return std::exp(0.5 * (lo + hi));
}

}  // namespace rbk

#endif  // RBK_COVARIANCE_HPP
