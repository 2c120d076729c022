#ifndef RBK_ESTIMATION_HPP
#define RBK_ESTIMATION_HPP

// Parameter estimation: reduced-basis maximum likelihood (RBK) and the two
// EM baselines (unstructured K, scaled-identity K).

#include <algorithm>
#include <array>
#include <chrono>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <span>
#include <string>

#include "rbk/error.hpp"
#include "rbk/geometry.hpp"
#include "rbk/linalg.hpp"
#include "rbk/sre_model.hpp"

namespace rbk {

enum class Method { rbk, em_full, em_identity };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::rbk: return "rbk";
    case Method::em_full: return "em-full";
    case Method::em_identity: return "em-identity";
  }
  return "?";
}

inline std::optional<Method> parse_method(const std::string& s) {
  if (s == "rbk") return Method::rbk;
  if (s == "em-full") return Method::em_full;
  if (s == "em-identity") return Method::em_identity;
  return std::nullopt;
}

struct FitConfig {
  Method method = Method::rbk;
  int max_iters = 1000;
  double rel_tol = 1e-6;

  void validate() const {
    require(max_iters >= 1, ErrorKind::invalid_argument, "FitConfig: max_iters must be >= 1");
    require(rel_tol > 0.0, ErrorKind::invalid_argument, "FitConfig: rel_tol must be > 0");
  }
};

struct FitResult {
  SREParams params;
  int iterations = 0;
  bool converged = false;
  Vector loglik_trace;  ///< observed-data log-likelihood (EM) or reduced objective (RBK)
  double wall_seconds = 0.0;
  Method method = Method::rbk;
  int pd_repairs = 0;
};

class Stopwatch {
 public:
  Stopwatch() : start_(std::chrono::steady_clock::now()) {}
  double seconds() const {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
  }

 private:
  std::chrono::steady_clock::time_point start_;
};

namespace detail {

inline double sample_variance(std::span<const double> v) {
  if (v.size() < 2) return 0.0;
  const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - mean) * (x - mean);
  return s / static_cast<double>(v.size() - 1);
}

/// Scale used for initial values and floors; 1 when the data carry no variance.
inline double variance_scale(std::span<const double> y) {
  const double v = sample_variance(y);
  return v > 0.0 ? v : 1.0;
}

inline void check_inputs(std::span<const double> y, const SparseMatrix& s, const NoiseSpec& noise) {
  require(!y.empty(), ErrorKind::invalid_argument, "fit: no observations");
  noise.validate();
  require(s.rows() == y.size() && noise.size() == y.size(), ErrorKind::dimension_mismatch,
          "fit: S, noise and observations must share n");
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Nelder-Mead
// ---------------------------------------------------------------------------

struct NelderMeadResult {
  std::array<double, 2> x{};
  double f = 0.0;
  int iterations = 0;
  bool converged = false;
  Vector best_trace;
};

/// Minimizes f over R^2 from `start` with an axis-aligned initial simplex of
/// edge `step`. Stops when the spread of simplex values is below
/// `ftol * (1 + |f_best|)`.
inline NelderMeadResult nelder_mead_2d(const std::function<double(const std::array<double, 2>&)>& f,
                                       std::array<double, 2> start, double step, double ftol,
                                       int max_iters) {
  using Point = std::array<double, 2>;
  std::array<Point, 3> pts{start, start, start};
  pts[1][0] += step;
  pts[2][1] += step;
  std::array<double, 3> vals{f(pts[0]), f(pts[1]), f(pts[2])};
  NelderMeadResult out;
  auto order = [&] {
    std::array<int, 3> idx{0, 1, 2};
    std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) { return vals[a] < vals[b]; });
    std::array<Point, 3> p2{pts[idx[0]], pts[idx[1]], pts[idx[2]]};
    std::array<double, 3> v2{vals[idx[0]], vals[idx[1]], vals[idx[2]]};
    pts = p2;
    vals = v2;
  };
  order();
  for (int it = 0; it < max_iters; ++it) {
    if (std::isfinite(vals[0]) && std::isfinite(vals[2]) &&
        vals[2] - vals[0] <= ftol * (1.0 + std::abs(vals[0]))) {
      out.converged = true;
      break;
    }
    ++out.iterations;
    Point centroid{(pts[0][0] + pts[1][0]) / 2.0, (pts[0][1] + pts[1][1]) / 2.0};
    auto along = [&](double t) {
      return Point{centroid[0] + t * (pts[2][0] - centroid[0]), centroid[1] + t * (pts[2][1] - centroid[1])};
    };
    const Point xr = along(-1.0);
    const double fr = f(xr);
    if (fr < vals[0]) {
      const Point xe = along(-2.0);
      const double fe = f(xe);
      if (fe < fr) {
        pts[2] = xe;
        vals[2] = fe;
      } else {
        pts[2] = xr;
        vals[2] = fr;
      }
    } else if (fr < vals[1]) {
      pts[2] = xr;
      vals[2] = fr;
    } else {
      const bool outside = fr < vals[2];
      const Point xc = along(outside ? -0.5 : 0.5);
      const double fc = f(xc);
      if (fc < (outside ? fr : vals[2])) {
        pts[2] = xc;
        vals[2] = fc;
      } else {
        for (int k = 1; k < 3; ++k) {
          pts[k] = Point{pts[0][0] + 0.5 * (pts[k][0] - pts[0][0]), pts[0][1] + 0.5 * (pts[k][1] - pts[0][1])};
          vals[k] = f(pts[k]);
        }
      }
    }
    order();
    out.best_trace.push_back(vals[0]);
  }
  out.x = pts[0];
  out.f = vals[0];
  return out;
}

// ---------------------------------------------------------------------------
// RBK: maximize the reduced likelihood over (log rho_k, log sigma2_delta)
// ---------------------------------------------------------------------------

/// Reduced log-likelihood as a function of (rho_k, sigma2_delta) with
/// sigma2_eps held fixed. Parameters below `floor` are evaluated at the floor.
class RbkObjective {
 public:
  RbkObjective(std::span<const double> y, const SparseMatrix& s, const NoiseSpec& noise)
      : qr_((detail::check_inputs(y, s, noise), thin_qr(s))), sigma2_eps_(noise.sigma2_eps) {
    y_star_ = apply_qt(qr_, y);
    r1r1t_ = detail::r1_k_r1t(qr_.lower, DenseMatrix::identity(s.cols()));
    v_delta_star_ = reduced_noise_matrix(qr_, noise.v_delta);
    if (sigma2_eps_ > 0.0) v_eps_star_ = reduced_noise_matrix(qr_, noise.v_eps);
    raw_var_ = detail::sample_variance(y);
    scale_ = detail::variance_scale(y);
    floor_ = 1e-8 * scale_;
    if (sigma2_eps_ == 0.0) diagonalize();
  }

  double floor() const noexcept { return floor_; }
  double data_scale() const noexcept { return scale_; }
  const Vector& y_star() const noexcept { return y_star_; }
  const ThinQR& qr() const noexcept { return qr_; }

  /// Log-likelihood; -infinity where Sigma* is not positive definite.
  double operator()(double rho_k, double sigma2_delta) const {
    rho_k = std::max(rho_k, floor_);
    sigma2_delta = std::max(sigma2_delta, floor_);
    if (!lambda_.empty()) {
      double quad = 0.0, logdet = logdet_b_;
      for (std::size_t i = 0; i < lambda_.size(); ++i) {
        const double v = rho_k * lambda_[i] + sigma2_delta;
        if (!(v > 0.0)) return -std::numeric_limits<double>::infinity();
        quad += z_[i] * z_[i] / v;
        logdet += std::log(v);
      }
      const double m = static_cast<double>(lambda_.size());
      return -0.5 * quad - 0.5 * logdet - 0.5 * m * std::log(2.0 * std::numbers::pi);
    }
    DenseMatrix sigma = r1r1t_ * rho_k;
    sigma += v_delta_star_ * sigma2_delta;
    if (sigma2_eps_ > 0.0) sigma += v_eps_star_ * sigma2_eps_;
    try {
      return detail::gaussian_loglik(sigma, y_star_);
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::not_positive_definite) throw;
      return -std::numeric_limits<double>::infinity();
    }
  }

  /// (rho_k, sigma2_delta) start: var(y*) / mean(diag(R1 R1')) and 0.1 var(y).
  std::array<double, 2> initial_point() const {
    double mean_diag = 0.0;
    for (std::size_t i = 0; i < r1r1t_.rows(); ++i) mean_diag += r1r1t_(i, i);
    mean_diag /= static_cast<double>(r1r1t_.rows());
    return {std::max(detail::sample_variance(y_star_) / mean_diag, floor_), std::max(0.1 * raw_var_, floor_)};
  }

 private:
  // Sigma* = rho A + sigma2 B with B = L L': write L^{-1} A L^{-T} = U diag(lambda) U'
  // so each evaluation is O(m).
  void diagonalize() {
    const CholeskyFactor b = cholesky(v_delta_star_);
    const std::size_t m = r1r1t_.rows();
    DenseMatrix x(m, m);
    for (std::size_t j = 0; j < m; ++j) {
      const Vector c = solve_lower(b.lower, r1r1t_.col(j));
      std::copy(c.begin(), c.end(), x.col(j).begin());
    }
    const DenseMatrix xt = x.transpose();
    DenseMatrix c(m, m);
    for (std::size_t j = 0; j < m; ++j) {
      const Vector col = solve_lower(b.lower, xt.col(j));
      std::copy(col.begin(), col.end(), c.col(j).begin());
    }
    c.symmetrize();
    const EigenDecomposition eig = symmetric_eigen(c);
    lambda_ = eig.values;
    z_ = matvec_t(eig.vectors, solve_lower(b.lower, y_star_));
    logdet_b_ = chol_logdet(b);
  }

  ThinQR qr_;
  double sigma2_eps_;
  Vector lambda_;
  Vector z_;
  double logdet_b_ = 0.0;
  Vector y_star_;
  DenseMatrix r1r1t_;
  DenseMatrix v_delta_star_;
  DenseMatrix v_eps_star_;
  double raw_var_ = 0.0;
  double scale_ = 1.0;
  double floor_ = 0.0;
};

inline FitResult fit_rbk(std::span<const double> y, const SparseMatrix& s, const NoiseSpec& noise_template,
                         const FitConfig& cfg = {}) {
  cfg.validate();
  const Stopwatch clock;
  const RbkObjective objective(y, s, noise_template);
  const auto [rho0, sigma0] = objective.initial_point();
  auto negloglik = [&](const std::array<double, 2>& x) {
    const double v = objective(std::exp(x[0]), std::exp(x[1]));
    return std::isfinite(v) ? -v : std::numeric_limits<double>::infinity();
  };
  const NelderMeadResult nm =
      nelder_mead_2d(negloglik, {std::log(rho0), std::log(sigma0)}, 0.5, 1e-9, cfg.max_iters);
  FitResult out;
  out.method = Method::rbk;
  out.params.kform = ScaledK{std::max(std::exp(nm.x[0]), objective.floor())};
  out.params.noise = noise_template.with_sigma2_delta(std::max(std::exp(nm.x[1]), objective.floor()));
  out.iterations = nm.iterations;
  out.converged = nm.converged;
  out.loglik_trace.reserve(nm.best_trace.size());
  for (double v : nm.best_trace) out.loglik_trace.push_back(-v);
  out.wall_seconds = clock.seconds();
  return out;
}

// ---------------------------------------------------------------------------
// EM
// ---------------------------------------------------------------------------

struct EmState {
  DenseMatrix k;
  double sigma2_delta = 0.0;
};

struct EmStepResult {
  EmState next;
  int pd_repairs = 0;
};

namespace detail {

// Eigenvalue floor at 1e-12 * tr(K)/m; returns true when a repair was applied.
inline bool repair_pd(DenseMatrix& k) {
  try {
    (void)cholesky(k);
    return false;
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::not_positive_definite) throw;
  }
  const std::size_t m = k.rows();
  const double floor = std::max(1e-12 * std::abs(k.trace()) / static_cast<double>(m), 1e-300);
  const EigenDecomposition eig = symmetric_eigen(k);
  DenseMatrix out(m, m);
  for (std::size_t c = 0; c < m; ++c) {
    const double lam = std::max(eig.values[c], floor);
    const auto v = eig.vectors.col(c);
    for (std::size_t j = 0; j < m; ++j)
      for (std::size_t i = 0; i < m; ++i) out(i, j) += lam * v[i] * v[j];
  }
  out.symmetrize();
  k = std::move(out);
  return true;
}

// One E-step shared by both EM variants: the unrestricted K-update and the
// sigma2_delta update, given a Woodbury system built at the current point.
inline EmState em_updates(const EmState& state, const WoodburySystem& w, std::span<const double> y,
                          std::span<const double> v_delta) {
  const Vector a = w.inverse_apply(y);  // Sigma^{-1} y
  const Vector g = w.gain(y);           // K S' Sigma^{-1} y
  // K S' Sigma^{-1} S K = (K^{-1} + G)^{-1} G K
  const DenseMatrix shrink = matmul(matmul(w.core(), w.weighted_gram_matrix()), state.k);
  DenseMatrix k_next = state.k - shrink;
  for (std::size_t j = 0; j < g.size(); ++j)
    for (std::size_t i = 0; i < g.size(); ++i) k_next(i, j) += g[i] * g[j];
  k_next.symmetrize();

  const Vector diag_inv = w.inverse_diagonal();
  double tr = 0.0;
  for (std::size_t i = 0; i < y.size(); ++i) tr += v_delta[i] * (a[i] * a[i] - diag_inv[i]);
  const double s = state.sigma2_delta;
  const double sigma_next = s + s * s / static_cast<double>(y.size()) * tr;
  return {std::move(k_next), sigma_next};
}

inline Vector noise_diagonal(const NoiseSpec& noise, double sigma2_delta) {
  Vector d(noise.size());
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = sigma2_delta * noise.v_delta[i] + noise.sigma2_eps * noise.v_eps[i];
  return d;
}

}  // namespace detail

/// One EM update with unrestricted K. All Sigma^{-1} products go through the
/// Woodbury identity; no n x n matrix is formed.
inline EmStepResult em_step_full(const EmState& state, const ObservationSet& obs, const SparseMatrix& s,
                                 const NoiseSpec& noise) {
  obs.validate();
  detail::check_inputs(obs.values, s, noise);
  require(state.sigma2_delta > 0.0 || noise.sigma2_eps > 0.0, ErrorKind::invalid_argument,
          "em_step_full: D must be invertible");
  const WoodburySystem w(state.k, s, detail::noise_diagonal(noise, state.sigma2_delta));
  EmStepResult out{detail::em_updates(state, w, obs.values, noise.v_delta), 0};
  out.next.sigma2_delta = std::max(out.next.sigma2_delta, 1e-300);
  if (detail::repair_pd(out.next.k)) out.pd_repairs = 1;
  return out;
}

struct EmIdentityState {
  double rho_k = 1.0;
  double sigma2_delta = 1.0;
};

/// EM update restricted to K = rho_k I: rho_k' = tr(K'_full) / m where
/// K'_full is the unrestricted update evaluated at K = rho_k I.
inline EmIdentityState em_step_identity(const EmIdentityState& state, const ObservationSet& obs,
                                        const SparseMatrix& s, const NoiseSpec& noise) {
  obs.validate();
  detail::check_inputs(obs.values, s, noise);
  require(state.rho_k > 0.0, ErrorKind::invalid_argument, "em_step_identity: rho_k must be > 0");
  const std::size_t m = s.cols();
  const EmState full{DenseMatrix::identity(m, state.rho_k), state.sigma2_delta};
  const WoodburySystem w(full.k, s, detail::noise_diagonal(noise, state.sigma2_delta));
  const EmState next = detail::em_updates(full, w, obs.values, noise.v_delta);
  return {std::max(next.k.trace() / static_cast<double>(m), 1e-12), std::max(next.sigma2_delta, 1e-300)};
}

namespace detail {

inline double rel_change(double before, double after) {
  return std::abs(after - before) / (std::abs(before) + 1e-12);
}

}  // namespace detail

/// Iterates an EM variant until the largest relative parameter change drops
/// below cfg.rel_tol or cfg.max_iters steps have been taken. For the full
/// form, K counts as one parameter with relative Frobenius change.
inline FitResult fit_em(std::span<const double> y, const SparseMatrix& s, const NoiseSpec& noise_template,
                        const FitConfig& cfg) {
  cfg.validate();
  require(cfg.method == Method::em_full || cfg.method == Method::em_identity, ErrorKind::invalid_argument,
          "fit_em: method must be em-full or em-identity");
  detail::check_inputs(y, s, noise_template);
  const Stopwatch clock;
  const std::size_t m = s.cols();
  const double scale = detail::variance_scale(y);
  const double floor = 1e-8 * scale;
  FitResult out;
  out.method = cfg.method;

  auto clamp_sigma = [&](double v) { return std::max(v, floor); };

  const auto system_at = [&](const DenseMatrix& k, double sigma2_delta) {
    return WoodburySystem(k, s, detail::noise_diagonal(noise_template, sigma2_delta));
  };

  // K = rho I for the identity variant; the E-step is shared.
  EmState st{DenseMatrix::identity(m, 0.9 * scale), clamp_sigma(0.1 * scale)};
  WoodburySystem w = system_at(st.k, st.sigma2_delta);
  for (int it = 0; it < cfg.max_iters; ++it) {
    EmState next = detail::em_updates(st, w, y, noise_template.v_delta);
    next.sigma2_delta = clamp_sigma(next.sigma2_delta);
    double k_change = 0.0;
    if (cfg.method == Method::em_identity) {
      const double rho = std::max(next.k.trace() / static_cast<double>(m), floor);
      next.k = DenseMatrix::identity(m, rho);
      k_change = detail::rel_change(st.k(0, 0), rho);
    } else {
      if (detail::repair_pd(next.k)) ++out.pd_repairs;
      k_change = (next.k - st.k).frobenius_norm() / (st.k.frobenius_norm() + 1e-12);
    }
    const double change = std::max(k_change, detail::rel_change(st.sigma2_delta, next.sigma2_delta));
    st = std::move(next);
    w = system_at(st.k, st.sigma2_delta);
    ++out.iterations;
    out.loglik_trace.push_back(woodbury_loglik(w, y));
    if (change < cfg.rel_tol) {
      out.converged = true;
      break;
    }
  }
  if (cfg.method == Method::em_identity) out.params.kform = ScaledK{st.k(0, 0)};
  else out.params.kform = FullK{st.k};
  out.params.noise = noise_template.with_sigma2_delta(st.sigma2_delta);
  out.wall_seconds = clock.seconds();
  return out;
}

inline FitResult fit_rbk(const ObservationSet& obs, const SparseMatrix& s, const NoiseSpec& noise_template,
                         const FitConfig& cfg = {}) {
  obs.validate();
  return fit_rbk(std::span<const double>(obs.values), s, noise_template, cfg);
}

inline FitResult fit_em(const ObservationSet& obs, const SparseMatrix& s, const NoiseSpec& noise_template,
                        const FitConfig& cfg) {
  obs.validate();
  return fit_em(std::span<const double>(obs.values), s, noise_template, cfg);
}

/// Dispatches on cfg.method.
inline FitResult fit(std::span<const double> y, const SparseMatrix& s, const NoiseSpec& noise_template,
                     const FitConfig& cfg) {
  if (cfg.method == Method::rbk) return fit_rbk(y, s, noise_template, cfg);
  return fit_em(y, s, noise_template, cfg);
}

inline FitResult fit(const ObservationSet& obs, const SparseMatrix& s, const NoiseSpec& noise_template,
                     const FitConfig& cfg) {
  obs.validate();
  return fit(std::span<const double>(obs.values), s, noise_template, cfg);
}

}  // namespace rbk

#endif  // RBK_ESTIMATION_HPP
