#ifndef RBK_DETREND_HPP
#define RBK_DETREND_HPP

// Covariate mean removal ahead of reduced-basis kriging. The mean X alpha is
// built from truncated-power regression splines sharing one intercept; the
// data are projected onto the orthogonal complement of span(X) through a
// Householder QR of X, and alpha is kept to add the covariate effects back.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <istream>
#include <ostream>
#include <sstream>
#include <span>
#include <string>
#include <vector>

#include "rbk/csv.hpp"
#include "rbk/error.hpp"
#include "rbk/linalg.hpp"

namespace rbk {

struct CovariateSpec {
  std::string name;
  int degree = 3;
  int df = 4;

  void validate() const {
    require(degree == 2 || degree == 3, ErrorKind::invalid_argument,
            "CovariateSpec '" + name + "': degree must be 2 or 3");
    require(df >= degree + 1, ErrorKind::invalid_argument, "CovariateSpec '" + name + "': df must be >= degree + 1");
  }

  /// Interior knots: df counts the constant column, so df - degree - 1.
  int interior_knots() const { return df - degree - 1; }
};

/// Fitted truncated-power basis for one covariate. Values are standardized
/// to [0, 1] over the training range before evaluation.
struct SplineBasis {
  CovariateSpec spec;
  double lo = 0.0;
  double range = 1.0;
  std::vector<double> knots;  ///< interior knots on the standardized scale

  /// n x df: [1, t, ..., t^degree, (t - k_1)_+^degree, ...].
  DenseMatrix evaluate(std::span<const double> values) const {
    const std::size_t n = values.size();
    DenseMatrix out(n, static_cast<std::size_t>(spec.df));
    for (std::size_t i = 0; i < n; ++i) {
      const double t = (values[i] - lo) / range;
      out(i, 0) = 1.0;
      double p = 1.0;
      for (int d = 1; d <= spec.degree; ++d) {
        p *= t;
        out(i, static_cast<std::size_t>(d)) = p;
      }
      for (std::size_t k = 0; k < knots.size(); ++k) {
        const double u = std::max(t - knots[k], 0.0);
        out(i, static_cast<std::size_t>(spec.degree) + 1 + k) = std::pow(u, spec.degree);
      }
    }
    return out;
  }

  double training_min() const { return lo; }
  double training_max() const { return lo + range; }
};

namespace detail {

// Linear-interpolation quantile of sorted data.
inline double quantile_sorted(std::span<const double> sorted, double p) {
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

}  // namespace detail

/// Interior knots sit at equally spaced quantiles of the training values.
inline SplineBasis fit_spline(std::span<const double> values, const CovariateSpec& spec) {
  spec.validate();
  require(values.size() > static_cast<std::size_t>(spec.df), ErrorKind::invalid_argument,
          "spline_basis '" + spec.name + "': need more observations than df");
  const auto [mn, mx] = std::minmax_element(values.begin(), values.end());
  require(*mx > *mn, ErrorKind::collinear_covariates, "spline_basis '" + spec.name + "': covariate is constant");
  SplineBasis s{spec, *mn, *mx - *mn, {}};
  std::vector<double> t(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) t[i] = (values[i] - s.lo) / s.range;
  std::sort(t.begin(), t.end());
  const int nk = spec.interior_knots();
  for (int j = 1; j <= nk; ++j) s.knots.push_back(detail::quantile_sorted(t, static_cast<double>(j) / (nk + 1)));
  return s;
}

inline DenseMatrix spline_basis(std::span<const double> values, const CovariateSpec& spec) {
  return fit_spline(values, spec).evaluate(values);
}

/// Fitted mean structure.
struct DetrendModel {
  std::vector<SplineBasis> splines;
  std::vector<std::string> column_names;
  Vector alpha;  ///< least-squares coefficients, intercept first
  std::size_t n = 0;

  std::size_t p() const noexcept { return alpha.size(); }

  /// Shared intercept followed by each spline's non-constant columns. `rows`
  /// is only consulted when there are no covariates.
  DenseMatrix design(std::span<const std::vector<double>> covariates, std::size_t rows = 0) const {
    require(covariates.size() == splines.size(), ErrorKind::dimension_mismatch,
            "DetrendModel: one covariate vector per spec required");
    if (!covariates.empty()) rows = covariates.front().size();
    std::size_t p = 1;
    for (const auto& s : splines) p += static_cast<std::size_t>(s.spec.df) - 1;
    DenseMatrix x(rows, p);
    for (std::size_t i = 0; i < rows; ++i) x(i, 0) = 1.0;
    std::size_t col = 1;
    for (std::size_t c = 0; c < splines.size(); ++c) {
      require(covariates[c].size() == rows, ErrorKind::dimension_mismatch, "DetrendModel: ragged covariates");
      const DenseMatrix b = splines[c].evaluate(covariates[c]);
      for (std::size_t j = 1; j < b.cols(); ++j, ++col)
        for (std::size_t i = 0; i < rows; ++i) x(i, col) = b(i, j);
    }
    return x;
  }
};

struct DetrendResult {
  Vector y_tilde;  ///< Q_X2' y, length n - p
  DetrendModel model;
  HouseholderQR qr;

  /// Q_X2' v for any n-vector.
  Vector project(std::span<const double> v) const {
    const Vector full = qr.apply_qt(v);
    return Vector(full.begin() + static_cast<std::ptrdiff_t>(model.p()), full.end());
  }

  /// Q_X2 w for an (n - p)-vector, back in observation space.
  Vector embed(std::span<const double> w) const {
    require(w.size() == model.n - model.p(), ErrorKind::dimension_mismatch, "embed: length");
    Vector full(model.n, 0.0);
    std::copy(w.begin(), w.end(), full.begin() + static_cast<std::ptrdiff_t>(model.p()));
    return qr.apply_q(full);
  }

  /// S~ = Q_X2' S, the basis matrix seen by the detrended data.
  SparseMatrix transform_basis(const SparseMatrix& s) const {
    require(s.rows() == model.n, ErrorKind::dimension_mismatch, "transform_basis: S must have n rows");
    DenseMatrix out(model.n - model.p(), s.cols());
    const DenseMatrix sd = s.to_dense();
    for (std::size_t j = 0; j < s.cols(); ++j) {
      const Vector c = project(sd.col(j));
      std::copy(c.begin(), c.end(), out.col(j).begin());
    }
    return SparseMatrix::from_dense(out);
  }
};

/// Builds X from the covariates, checks rank, and projects y.
inline DetrendResult detrend(std::span<const std::vector<double>> covariates, std::span<const double> y,
                             std::span<const CovariateSpec> specs) {
  require(covariates.size() == specs.size(), ErrorKind::dimension_mismatch,
          "detrend: one covariate vector per spec required");
  const std::size_t n = y.size();
  DetrendModel model;
  model.n = n;
  model.column_names.push_back("intercept");
  for (std::size_t c = 0; c < specs.size(); ++c) {
    require(covariates[c].size() == n, ErrorKind::dimension_mismatch, "detrend: covariate length differs from y");
    model.splines.push_back(fit_spline(covariates[c], specs[c]));
    for (int j = 1; j < specs[c].df; ++j) {
      const bool poly = j <= specs[c].degree;
      model.column_names.push_back(specs[c].name + (poly ? "^" + std::to_string(j)
                                                         : "_knot" + std::to_string(j - specs[c].degree)));
    }
  }
  const DenseMatrix x = model.design(covariates, n);
  require(x.cols() < n, ErrorKind::invalid_argument, "detrend: need more observations than mean parameters");
  HouseholderQR qr(x);
  double max_r = 0.0;
  for (std::size_t j = 0; j < x.cols(); ++j) max_r = std::max(max_r, std::abs(qr.r(j, j)));
  std::string bad;
  for (std::size_t j = 0; j < x.cols(); ++j)
    if (std::abs(qr.r(j, j)) <= 1e-10 * max_r) bad += (bad.empty() ? "" : ", ") + model.column_names[j];
  if (!bad.empty()) throw Error(ErrorKind::collinear_covariates, "detrend: collinear columns: " + bad);
  model.alpha = qr.solve(y);
  DetrendResult out{{}, std::move(model), std::move(qr)};
  out.y_tilde = out.project(y);
  return out;
}

struct AddBackResult {
  Vector predictions;
  std::vector<std::string> warnings;
};

/// X(sites) alpha + kriging component. Covariates more than 10% of the
/// training range outside it are reported as extrapolation warnings.
inline AddBackResult add_back(std::span<const double> kriging_preds,
                              std::span<const std::vector<double>> site_covariates, const DetrendModel& model) {
  const DenseMatrix x = model.design(site_covariates, kriging_preds.size());
  require(x.rows() == kriging_preds.size(), ErrorKind::dimension_mismatch,
          "add_back: one prediction per site required");
  AddBackResult out;
  out.predictions = matvec(x, model.alpha);
  for (std::size_t i = 0; i < kriging_preds.size(); ++i) out.predictions[i] += kriging_preds[i];
  for (std::size_t c = 0; c < model.splines.size(); ++c) {
    const SplineBasis& s = model.splines[c];
    const double lo = s.training_min() - 0.1 * s.range, hi = s.training_max() + 0.1 * s.range;
    std::size_t outside = 0;
    for (double v : site_covariates[c]) outside += (v < lo || v > hi) ? 1 : 0;
    if (outside > 0)
      out.warnings.push_back("covariate '" + s.spec.name + "': " + std::to_string(outside) +
                             " site(s) outside the training range by more than 10% (extrapolation)");
  }
  return out;
}

// ---------------------------------------------------------------------------
// Model file: `key = value` lines
// ---------------------------------------------------------------------------

inline void write_detrend_model(std::ostream& os, const DetrendModel& model) {
  os << "n = " << model.n << '\n';
  os << "covariates = " << model.splines.size() << '\n';
  for (std::size_t c = 0; c < model.splines.size(); ++c) {
    const SplineBasis& s = model.splines[c];
    const std::string pre = "covariate." + std::to_string(c) + '.';
    os << pre << "name = " << s.spec.name << '\n';
    os << pre << "degree = " << s.spec.degree << '\n';
    os << pre << "df = " << s.spec.df << '\n';
    os << pre << "min = " << csv::fmt(s.lo) << '\n';
    os << pre << "range = " << csv::fmt(s.range) << '\n';
    os << pre << "knots =";
    for (double k : s.knots) os << ' ' << csv::fmt(k);
    os << '\n';
  }
  os << "alpha =";
  for (double a : model.alpha) os << ' ' << csv::fmt(a);
  os << '\n';
}

inline DetrendModel read_detrend_model(std::istream& is) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::format, "detrend model line " + std::to_string(lineno));
    auto trim = [](std::string s) {
      s.erase(0, s.find_first_not_of(" \t"));
      s.erase(s.find_last_not_of(" \t\r") + 1);
      return s;
    };
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  auto get = [&](const std::string& key) -> std::string {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    throw Error(ErrorKind::format, "detrend model: missing key '" + key + "'");
  };
  auto numbers = [](const std::string& s) {
    std::istringstream ss(s);
    std::vector<double> out;
    std::string tok;
    while (ss >> tok) {
      double v = 0.0;
      if (!csv::parse_double(tok, v)) throw Error(ErrorKind::format, "detrend model: bad number '" + tok + "'");
      out.push_back(v);
    }
    return out;
  };
  DetrendModel m;
  m.n = static_cast<std::size_t>(std::stoul(get("n")));
  const auto count = static_cast<std::size_t>(std::stoul(get("covariates")));
  m.column_names.push_back("intercept");
  for (std::size_t c = 0; c < count; ++c) {
    const std::string pre = "covariate." + std::to_string(c) + '.';
    SplineBasis s;
    s.spec.name = get(pre + "name");
    s.spec.degree = std::stoi(get(pre + "degree"));
    s.spec.df = std::stoi(get(pre + "df"));
    s.spec.validate();
    s.lo = numbers(get(pre + "min")).at(0);
    s.range = numbers(get(pre + "range")).at(0);
    s.knots = numbers(get(pre + "knots"));
    require(static_cast<int>(s.knots.size()) == s.spec.interior_knots(), ErrorKind::format,
            "detrend model: knot count does not match df");
    for (int j = 1; j < s.spec.df; ++j) m.column_names.push_back(s.spec.name + "_" + std::to_string(j));
    m.splines.push_back(std::move(s));
  }
  m.alpha = numbers(get("alpha"));
  require(m.alpha.size() == m.column_names.size(), ErrorKind::format, "detrend model: alpha length mismatch");
  return m;
}

}  // namespace rbk

#endif  // RBK_DETREND_HPP
