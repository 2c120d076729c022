#ifndef RBK_SRE_MODEL_HPP
#define RBK_SRE_MODEL_HPP

// Spatial Random Effects model y = S eta + delta + eps with
// eta ~ N(0, K), delta ~ N(0, sigma2_delta V_delta), eps ~ N(0, sigma2_eps V_eps).

#include <cmath>
#include <cstddef>
#include <numbers>
#include <span>
#include <utility>
#include <variant>
#include <vector>

#include "rbk/error.hpp"
#include "rbk/geometry.hpp"
#include "rbk/linalg.hpp"

namespace rbk {

struct NoiseSpec {
  double sigma2_delta = 0.0;
  double sigma2_eps = 0.0;
  Vector v_delta;  ///< diagonal weights, length n, > 0
  Vector v_eps;    ///< diagonal weights, length n, > 0

  static NoiseSpec homoskedastic(std::size_t n, double sigma2_delta, double sigma2_eps = 0.0) {
    return {sigma2_delta, sigma2_eps, Vector(n, 1.0), Vector(n, 1.0)};
  }

  std::size_t size() const noexcept { return v_delta.size(); }

  void validate() const {
    require(v_delta.size() == v_eps.size(), ErrorKind::dimension_mismatch,
            "NoiseSpec: weight vectors differ in length");
    require(sigma2_delta >= 0.0 && sigma2_eps >= 0.0, ErrorKind::invalid_argument,
            "NoiseSpec: variances must be >= 0");
    for (std::size_t i = 0; i < v_delta.size(); ++i)
      require(v_delta[i] > 0.0 && v_eps[i] > 0.0, ErrorKind::invalid_argument,
              "NoiseSpec: weights must be > 0");
  }

  /// D = sigma2_delta V_delta + sigma2_eps V_eps (diagonal).
  Vector diagonal() const {
    validate();
    require(sigma2_delta + sigma2_eps > 0.0, ErrorKind::invalid_argument,
            "NoiseSpec: sigma2_delta + sigma2_eps must be > 0 for an invertible D");
    Vector d(v_delta.size());
    for (std::size_t i = 0; i < d.size(); ++i) d[i] = sigma2_delta * v_delta[i] + sigma2_eps * v_eps[i];
    return d;
  }

  NoiseSpec with_sigma2_delta(double s) const {
    NoiseSpec out = *this;
    out.sigma2_delta = s;
    return out;
  }

  NoiseSpec permuted(std::span<const std::size_t> order) const {
    NoiseSpec out = *this;
    for (std::size_t i = 0; i < order.size(); ++i) {
      out.v_delta[i] = v_delta[order[i]];
      out.v_eps[i] = v_eps[order[i]];
    }
    return out;
  }
};

/// K = rho_k * I_m.
struct ScaledK {
  double rho_k = 1.0;
};

/// Unstructured SPD K.
struct FullK {
  DenseMatrix k;
};

using KForm = std::variant<ScaledK, FullK>;

inline DenseMatrix materialize(const KForm& form, std::size_t m) {
  if (const auto* s = std::get_if<ScaledK>(&form)) {
    require(s->rho_k > 0.0, ErrorKind::invalid_argument, "ScaledK: rho_k must be > 0");
    return DenseMatrix::identity(m, s->rho_k);
  }
  const auto& f = std::get<FullK>(form);
  require(f.k.rows() == m && f.k.cols() == m, ErrorKind::dimension_mismatch, "FullK: K must be m x m");
  return f.k;
}

/// Mean of diag(K); rho_k itself for the scaled form.
inline double mean_k_variance(const KForm& form) {
  if (const auto* s = std::get_if<ScaledK>(&form)) return s->rho_k;
  const auto& k = std::get<FullK>(form).k;
  return k.trace() / static_cast<double>(k.rows());
}

struct SREParams {
  KForm kform;
  NoiseSpec noise;
};

struct ReducedData {
  Vector y_star;  ///< Q1' y
  ThinQR qr;
  DenseMatrix d_star;  ///< Q1' D Q1
  std::size_t n_original = 0;

  std::size_t m() const noexcept { return y_star.size(); }
};

inline ReducedData reduce(const ObservationSet& obs, const SparseMatrix& s, const NoiseSpec& noise) {
  obs.validate();
  require(s.rows() == obs.size() && noise.size() == obs.size(), ErrorKind::dimension_mismatch,
          "reduce: S, noise and observations must share n");
  ThinQR qr = thin_qr(s);
  Vector ystar = apply_qt(qr, obs.values);
  DenseMatrix dstar = reduced_noise_matrix(qr, noise.diagonal());
  return {std::move(ystar), std::move(qr), std::move(dstar), obs.size()};
}

namespace detail {

// Gaussian log-density of y* under N(0, sigma_star) using one Cholesky.
inline double gaussian_loglik(const DenseMatrix& sigma_star, std::span<const double> y) {
  const CholeskyFactor f = cholesky(sigma_star);
  const Vector half = solve_lower(f.lower, y);
  const double quad = dot(half, half);
  const double m = static_cast<double>(y.size());
  return -0.5 * quad - 0.5 * chol_logdet(f) - 0.5 * m * std::log(2.0 * std::numbers::pi);
}

// R1 K R1' with R1' = L lower triangular.
inline DenseMatrix r1_k_r1t(const DenseMatrix& lower, const DenseMatrix& k) {
  const DenseMatrix upper = lower.transpose();
  DenseMatrix out = matmul(matmul(upper, k), lower);
  out.symmetrize();
  return out;
}

}  // namespace detail

/// Reduced log-likelihood of y* ~ N_m(0, R1 K R1' + D*), normalized with
/// -(m/2) log(2 pi). Throws not_positive_definite for an invalid point.
inline double reduced_loglik(const ReducedData& rd, const KForm& kform) {
  const std::size_t m = rd.m();
  DenseMatrix sigma = detail::r1_k_r1t(rd.qr.lower, materialize(kform, m));
  sigma += rd.d_star;
  return detail::gaussian_loglik(sigma, rd.y_star);
}

/// Exact dense log-likelihood of y ~ N_n(0, S K S' + D). Forms the n x n
/// covariance; intended for validation at small n.
inline double full_loglik(const ObservationSet& obs, const SparseMatrix& s, const SREParams& params) {
  obs.validate();
  const std::size_t n = obs.size();
  require(s.rows() == n && params.noise.size() == n, ErrorKind::dimension_mismatch,
          "full_loglik: dimension mismatch");
  const DenseMatrix k = materialize(params.kform, s.cols());
  const DenseMatrix sd = s.to_dense();
  DenseMatrix sigma = matmul(matmul(sd, k), sd.transpose());
  const Vector d = params.noise.diagonal();
  for (std::size_t i = 0; i < n; ++i) sigma(i, i) += d[i];
  sigma.symmetrize();
  return detail::gaussian_loglik(sigma, obs.values);
}

/// Observed-data log-likelihood through the Woodbury machinery (no n x n matrix).
inline double woodbury_loglik(const WoodburySystem& w, std::span<const double> y) {
  const Vector a = w.inverse_apply(y);
  const double n = static_cast<double>(y.size());
  return -0.5 * dot(y, a) - 0.5 * w.logdet() - 0.5 * n * std::log(2.0 * std::numbers::pi);
}

/// Knot-level covariance implied by a field covariance sigma_f: the m leading
/// eigenpairs P1, L1 of sigma_f give K = (S'S)^{-1} S' P1 L1 P1' S (S'S)^{-1},
/// which equals R1^{-1} Q1' P1 L1 P1' Q1 R1^{-T}.
inline DenseMatrix empirical_K(const SparseMatrix& s, const DenseMatrix& sigma_f) {
  const std::size_t n = s.rows(), m = s.cols();
  require(sigma_f.rows() == n && sigma_f.cols() == n, ErrorKind::dimension_mismatch,
          "empirical_K: sigma_f must be n x n");
  require(n >= m, ErrorKind::invalid_argument, "empirical_K: need n >= m");
  const ThinQR qr = thin_qr(s);
  const EigenDecomposition eig = symmetric_eigen(sigma_f);
  // U = S' P1 (m x m)
  DenseMatrix u(m, m);
  for (std::size_t k = 0; k < m; ++k) {
    const Vector c = spmv_t(s, eig.vectors.col(k));
    std::copy(c.begin(), c.end(), u.col(k).begin());
  }
  DenseMatrix ul = u;
  for (std::size_t k = 0; k < m; ++k)
    for (double& v : ul.col(k)) v *= eig.values[k];
  DenseMatrix t = matmul(ul, u.transpose());
  const CholeskyFactor g{qr.lower};
  DenseMatrix k = chol_solve(g, chol_solve(g, t).transpose());
  k.symmetrize();
  return k;
}

struct CorrelationPoint {
  double distance;
  double correlation;
};

/// (|u_i - u_j|, K_ij / sqrt(K_ii K_jj)) for every knot pair i < j at
/// nonzero distance.
inline std::vector<CorrelationPoint> k_correlation_profile(const DenseMatrix& k, const KnotSet& knots) {
  const std::size_t m = knots.size();
  require(k.rows() == m && k.cols() == m, ErrorKind::dimension_mismatch,
          "k_correlation_profile: K must match the knot count");
  for (std::size_t i = 0; i < m; ++i)
    require(k(i, i) > 0.0, ErrorKind::invalid_argument, "k_correlation_profile: non-positive diagonal");
  std::vector<CorrelationPoint> out;
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = i + 1; j < m; ++j) {
      const double d = distance(knots[i], knots[j]);
      if (d == 0.0) continue;
      double c = k(i, j) / std::sqrt(k(i, i) * k(j, j));
      c = std::clamp(c, -1.0, 1.0);
      out.push_back({d, c});
    }
  return out;
}

}  // namespace rbk

#endif  // RBK_SRE_MODEL_HPP
