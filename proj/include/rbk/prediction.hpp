#ifndef RBK_PREDICTION_HPP
#define RBK_PREDICTION_HPP

// Kriging predictions and standard errors through the Woodbury-variant
// identity K S'(S K S' + D)^{-1} = (K^{-1} + S'D^{-1}S)^{-1} S'D^{-1}.
// At observed sites the predictor smooths rather than interpolates; sites may
// coincide with observation locations.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <tuple>
#include <vector>

#include "rbk/covariance.hpp"
#include "rbk/error.hpp"
#include "rbk/estimation.hpp"
#include "rbk/geometry.hpp"
#include "rbk/linalg.hpp"
#include "rbk/sre_model.hpp"

namespace rbk {

struct KrigingResult {
  std::vector<Location2D> sites;
  Vector predictions;
  Vector std_errors;
  double mean_se = 0.0;
};

namespace detail {

inline void check_prediction_inputs(const SparseMatrix& a, const SparseMatrix& s, const SREParams& params) {
  require(a.cols() == s.cols(), ErrorKind::dimension_mismatch, "prediction: A and S differ in knot count");
  require(params.noise.size() == s.rows(), ErrorKind::dimension_mismatch,
          "prediction: noise weights must match the observation count");
}

}  // namespace detail

/// A (S'D^{-1}S + K^{-1})^{-1} S'D^{-1} y.
inline Vector krige_predict(const SparseMatrix& a, const SparseMatrix& s, const SREParams& params,
                            std::span<const double> y) {
  detail::check_prediction_inputs(a, s, params);
  require(y.size() == s.rows(), ErrorKind::dimension_mismatch, "krige_predict: y length");
  const WoodburySystem w(materialize(params.kform, s.cols()), s, params.noise.diagonal());
  return spmv(a, w.gain(y));
}

/// Standard errors sqrt(diag(A K A') + sigma2_delta V_delta(s0)
/// - diag(A (S'D^{-1}S + K^{-1})^{-1} S'D^{-1}S K A')), formed one site at a
/// time from the sparse rows of A.
inline Vector krige_se(const SparseMatrix& a, const SparseMatrix& s, const SREParams& params,
                       std::span<const double> v_delta_at_sites) {
  detail::check_prediction_inputs(a, s, params);
  require(v_delta_at_sites.size() == a.rows(), ErrorKind::dimension_mismatch,
          "krige_se: one V_delta weight per site required");
  for (double v : v_delta_at_sites)
    require(v > 0.0, ErrorKind::invalid_argument, "krige_se: V_delta weights must be > 0");
  const DenseMatrix k = materialize(params.kform, s.cols());
  const WoodburySystem w(k, s, params.noise.diagonal());
  // Posterior covariance of eta: K - (K^{-1} + G)^{-1} G K.
  DenseMatrix post = k - matmul(matmul(w.core(), w.weighted_gram_matrix()), k);
  post.symmetrize();
  const double sigma2 = params.noise.sigma2_delta;
  const double tol = 1e-10 * (mean_k_variance(params.kform) + sigma2);
  const SparseMatrix rows = a.transpose();
  Vector se(a.rows());
  for (std::size_t i = 0; i < rows.cols(); ++i) {
    const std::size_t b = rows.colptr()[i], e = rows.colptr()[i + 1];
    double q = 0.0;
    for (std::size_t p = b; p < e; ++p) {
      double inner = 0.0;
      for (std::size_t r = b; r < e; ++r) inner += post(rows.rowind()[p], rows.rowind()[r]) * rows.values()[r];
      q += rows.values()[p] * inner;
    }
    double radicand = q + sigma2 * v_delta_at_sites[i];
    if (radicand < 0.0) {
      if (radicand < -tol)
        throw Error(ErrorKind::numerical_inconsistency,
                    "krige_se: negative variance " + std::to_string(radicand) + " at site " + std::to_string(i));
      radicand = 0.0;
    }
    se[i] = std::sqrt(radicand);
  }
  return se;
}

inline KrigingResult krige(const SparseMatrix& a, const SparseMatrix& s, const SREParams& params,
                           std::span<const double> y, std::span<const Location2D> sites,
                           std::span<const double> v_delta_at_sites) {
  require(sites.size() == a.rows(), ErrorKind::dimension_mismatch, "krige: one site per row of A");
  KrigingResult out;
  out.sites.assign(sites.begin(), sites.end());
  out.predictions = krige_predict(a, s, params, y);
  out.std_errors = krige_se(a, s, params, v_delta_at_sites);
  out.mean_se = out.std_errors.empty()
                    ? 0.0
                    : std::accumulate(out.std_errors.begin(), out.std_errors.end(), 0.0) /
                          static_cast<double>(out.std_errors.size());
  return out;
}

/// Zero-mean exact kriging C(s0, s) (C(s, s) + sigma2 I)^{-1} y with a dense
/// Matern covariance.
inline Vector oracle_krige(const MaternParams& cov, const ObservationSet& obs, std::span<const Location2D> sites,
                           double sigma2) {
  obs.validate();
  require(sigma2 >= 0.0, ErrorKind::invalid_argument, "oracle_krige: sigma2 must be >= 0");
  DenseMatrix c = cov_matrix(cov, obs.locations, obs.locations);
  for (std::size_t i = 0; i < obs.size(); ++i) c(i, i) += sigma2;
  const Vector weights = chol_solve(cholesky(c), obs.values);
  const DenseMatrix c0 = cov_matrix(cov, sites, obs.locations);
  return matvec(c0, weights);
}

inline double mspe(std::span<const double> predicted, std::span<const double> truth) {
  require(predicted.size() == truth.size(), ErrorKind::dimension_mismatch, "mspe: length mismatch");
  require(!predicted.empty(), ErrorKind::invalid_argument, "mspe: empty input");
  double s = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    const double d = predicted[i] - truth[i];
    s += d * d;
  }
  return s / static_cast<double>(predicted.size());
}

// ---------------------------------------------------------------------------
// Model selection
// ---------------------------------------------------------------------------

enum class SelectionCriterion { mean_krig_se, min_sigma2 };

struct Candidate {
  BasisConfig config;
  KnotSet knots;
};

struct CandidateReport {
  bool ok = false;
  std::string message;
  double rho_k = 0.0;
  double sigma2_delta = 0.0;
  double mean_se = 0.0;
  double score = 0.0;
};

struct SelectionReport {
  std::size_t winner = 0;
  std::vector<CandidateReport> candidates;
};

/// Fits RBK per candidate and returns the argmin of the criterion (mean
/// kriging SE over `sites`, or the fitted sigma2_delta). Ties go to fewer
/// knots, then the smaller bandwidth constant.
inline SelectionReport model_select(std::span<const Candidate> candidates, const ObservationSet& obs,
                                    const NoiseSpec& noise, SelectionCriterion criterion,
                                    std::span<const Location2D> sites = {}, const FitConfig& cfg = {}) {
  require(!candidates.empty(), ErrorKind::invalid_argument, "model_select: no candidates");
  const std::span<const Location2D> eval_sites = sites.empty() ? std::span<const Location2D>(obs.locations) : sites;
  SelectionReport report;
  for (const Candidate& c : candidates) {
    CandidateReport r;
    try {
      const SparseMatrix s = build_basis(obs.locations, c.knots, c.config);
      const FitResult fit = fit_rbk(obs, s, noise, cfg);
      r.rho_k = mean_k_variance(fit.params.kform);
      r.sigma2_delta = fit.params.noise.sigma2_delta;
      if (criterion == SelectionCriterion::mean_krig_se) {
        const SparseMatrix a = build_basis(eval_sites, c.knots, c.config);
        const Vector ones(eval_sites.size(), 1.0);
        const Vector se = krige_se(a, s, fit.params, ones);
        r.mean_se = std::accumulate(se.begin(), se.end(), 0.0) / static_cast<double>(se.size());
        r.score = r.mean_se;
      } else {
        r.score = r.sigma2_delta;
      }
      r.ok = std::isfinite(r.score);
    } catch (const Error& e) {
      r.ok = false;
      r.message = e.what();
    }
    report.candidates.push_back(r);
  }
  bool found = false;
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    if (!report.candidates[i].ok) continue;
    if (!found) {
      report.winner = i;
      found = true;
      continue;
    }
    const auto& best = report.candidates[report.winner];
    const auto& cur = report.candidates[i];
    const auto key = [&](std::size_t j, const CandidateReport& r) {
      return std::tuple(r.score, candidates[j].knots.size(), candidates[j].config.bandwidth_constant);
    };
    if (key(i, cur) < key(report.winner, best)) report.winner = i;
  }
  if (!found) throw Error(ErrorKind::no_model, "model_select: every candidate failed to fit");
  return report;
}

}  // namespace rbk

#endif  // RBK_PREDICTION_HPP
