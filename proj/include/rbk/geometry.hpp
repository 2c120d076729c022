#ifndef RBK_GEOMETRY_HPP
#define RBK_GEOMETRY_HPP

// Spatial locations, triangular knot grids, bandwidths and the sparse
// bisquare basis matrices S (observations x knots) and A (sites x knots).

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <istream>
#include <limits>
#include <numbers>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "rbk/error.hpp"
#include "rbk/linalg.hpp"

namespace rbk {

struct Location2D {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Location2D&, const Location2D&) = default;
};

inline double distance(const Location2D& a, const Location2D& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

/// Axis-aligned rectangle [xmin, xmax] x [ymin, ymax].
struct Domain {
  double xmin = 0.0;
  double xmax = 1.0;
  double ymin = 0.0;
  double ymax = 1.0;

  double width() const noexcept { return xmax - xmin; }
  double height() const noexcept { return ymax - ymin; }

  static Domain unit_square() { return {}; }
};

class KnotSet {
 public:
  KnotSet() = default;

  /// Knots with an explicit level per knot; levels are 0-based and must be
  /// contiguous from 0.
  KnotSet(std::vector<Location2D> knots, std::vector<std::size_t> level_of)
      : knots_(std::move(knots)), level_of_(std::move(level_of)) {
    require(knots_.size() == level_of_.size(), ErrorKind::dimension_mismatch,
            "KnotSet: one level per knot required");
    require(!knots_.empty(), ErrorKind::invalid_argument, "KnotSet: at least one knot required");
    for (const auto& k : knots_)
      require(std::isfinite(k.x) && std::isfinite(k.y), ErrorKind::invalid_argument,
              "KnotSet: non-finite knot coordinate");
    levels_ = *std::max_element(level_of_.begin(), level_of_.end()) + 1;
    for (std::size_t l = 0; l < levels_; ++l)
      require(std::find(level_of_.begin(), level_of_.end(), l) != level_of_.end(),
              ErrorKind::invalid_argument, "KnotSet: levels must be contiguous from 0");
  }

  /// Single-resolution set.
  explicit KnotSet(std::vector<Location2D> knots)
      : KnotSet(knots, std::vector<std::size_t>(knots.size(), 0)) {}

  std::size_t size() const noexcept { return knots_.size(); }
  std::size_t levels() const noexcept { return levels_; }
  const std::vector<Location2D>& knots() const noexcept { return knots_; }
  const Location2D& operator[](std::size_t i) const { return knots_[i]; }
  std::size_t level_of(std::size_t i) const { return level_of_[i]; }
  const std::vector<std::size_t>& level_of() const noexcept { return level_of_; }

  std::vector<Location2D> level_knots(std::size_t level) const {
    std::vector<Location2D> out;
    for (std::size_t i = 0; i < knots_.size(); ++i)
      if (level_of_[i] == level) out.push_back(knots_[i]);
    return out;
  }

 private:
  std::vector<Location2D> knots_;
  std::vector<std::size_t> level_of_;
  std::size_t levels_ = 0;
};

struct ObservationSet {
  std::vector<Location2D> locations;
  Vector values;

  std::size_t size() const noexcept { return values.size(); }

  void validate() const {
    require(locations.size() == values.size(), ErrorKind::dimension_mismatch,
            "ObservationSet: locations and values differ in length");
    require(!values.empty(), ErrorKind::invalid_argument, "ObservationSet: no observations");
  }
};

struct BasisConfig {
  double bandwidth_constant = 1.5;  ///< b in r_l = b * min knot spacing
};

// ---------------------------------------------------------------------------
// Knot grids
// ---------------------------------------------------------------------------

/// Number of rows of the triangular grid for `x_divisor` knots along x.
/// Rows for near-equilateral triangles: height over w*sqrt(3)/2, rounded,
/// with w = width/(k-1). Gives 23, 77 and 175 knots for k = 5, 9, 13 on a
/// square.
inline std::size_t triangular_row_count(std::size_t x_divisor, const Domain& domain) {
  const double w = domain.width() / static_cast<double>(x_divisor - 1);
  const double h_equilateral = w * std::numbers::sqrt3 / 2.0;
  const auto rows = static_cast<std::size_t>(std::llround(domain.height() / h_equilateral));
  return std::max<std::size_t>(2, rows);
}

/// Single-resolution triangular grid: rows span the full height; odd rows
/// (1st, 3rd, ...) carry k knots from the left to the right edge, even rows
/// carry k-1 knots offset by half the horizontal spacing.
inline KnotSet triangular_knot_grid(std::size_t x_divisor, const Domain& domain = Domain::unit_square()) {
  require(x_divisor >= 2, ErrorKind::invalid_argument, "triangular_knot_grid: x divisor must be >= 2");
  require(domain.width() > 0.0 && domain.height() > 0.0 && std::isfinite(domain.width()) &&
              std::isfinite(domain.height()),
          ErrorKind::invalid_argument, "triangular_knot_grid: degenerate domain");
  const std::size_t k = x_divisor;
  const std::size_t rows = triangular_row_count(k, domain);
  const double w = domain.width() / static_cast<double>(k - 1);
  const double h = domain.height() / static_cast<double>(rows - 1);
  std::vector<Location2D> knots;
  for (std::size_t r = 0; r < rows; ++r) {
    const double y = domain.ymin + h * static_cast<double>(r);
    if (r % 2 == 0) {
      for (std::size_t c = 0; c < k; ++c) knots.push_back({domain.xmin + w * static_cast<double>(c), y});
    } else {
      for (std::size_t c = 0; c + 1 < k; ++c)
        knots.push_back({domain.xmin + w * (static_cast<double>(c) + 0.5), y});
    }
  }
  return KnotSet(std::move(knots));
}

/// Minimum pairwise Euclidean distance among the knots of one level.
inline double min_knot_spacing(const KnotSet& knots, std::size_t level) {
  const auto pts = knots.level_knots(level);
  require(pts.size() >= 2, ErrorKind::invalid_argument,
          "min_knot_spacing: level " + std::to_string(level) + " has fewer than 2 knots");
  double best = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (std::size_t j = i + 1; j < pts.size(); ++j) best = std::min(best, distance(pts[i], pts[j]));
  return best;
}

/// Union of triangular grids, coarsest first. Level l (0 = coarsest) has its
/// origin shifted by jitter * (L - 1 - l) in both coordinates so the finest
/// level stays on the domain corners.
inline KnotSet multi_resolution_knots(std::span<const std::size_t> x_divisors,
                                      const Domain& domain, double jitter) {
  require(!x_divisors.empty(), ErrorKind::invalid_argument, "multi_resolution_knots: no levels");
  require(jitter >= 0.0 && std::isfinite(jitter), ErrorKind::invalid_argument,
          "multi_resolution_knots: jitter must be >= 0");
  for (std::size_t l = 1; l < x_divisors.size(); ++l)
    require(x_divisors[l] >= x_divisors[l - 1], ErrorKind::invalid_argument,
            "multi_resolution_knots: divisors must be ordered coarse to fine");
  const std::size_t levels = x_divisors.size();
  std::vector<Location2D> all;
  std::vector<std::size_t> level_of;
  for (std::size_t l = 0; l < levels; ++l) {
    const double shift = jitter * static_cast<double>(levels - 1 - l);
    Domain shifted = domain;
    shifted.xmin += shift;
    shifted.xmax += shift;
    shifted.ymin += shift;
    shifted.ymax += shift;
    const KnotSet grid = triangular_knot_grid(x_divisors[l], shifted);
    for (const auto& p : grid.knots()) {
      all.push_back(p);
      level_of.push_back(l);
    }
  }
  for (std::size_t i = 0; i < all.size(); ++i)
    for (std::size_t j = i + 1; j < all.size(); ++j)
      if (distance(all[i], all[j]) < 1e-12)
        throw Error(ErrorKind::degenerate_knots, "knots " + std::to_string(i) + " and " +
                                                     std::to_string(j) + " coincide");
  return KnotSet(std::move(all), std::move(level_of));
}

/// Default jitter: 1% of the finest level's minimum spacing.
inline double default_jitter(std::span<const std::size_t> x_divisors, const Domain& domain) {
  require(!x_divisors.empty(), ErrorKind::invalid_argument, "default_jitter: no levels");
  return 0.01 * min_knot_spacing(triangular_knot_grid(x_divisors.back(), domain), 0);
}

// ---------------------------------------------------------------------------
// Basis
// ---------------------------------------------------------------------------

inline double bandwidth(const BasisConfig& config, const KnotSet& knots, std::size_t level) {
  require(config.bandwidth_constant > 0.0, ErrorKind::invalid_argument, "bandwidth constant must be > 0");
  return config.bandwidth_constant * min_knot_spacing(knots, level);
}

/// Local bisquare: (1 - d^2)^2 on [0, 1], zero beyond.
inline double bisquare(double d) {
  require(d >= 0.0, ErrorKind::invalid_argument, "bisquare: negative argument");
  if (d > 1.0) return 0.0;
  const double t = 1.0 - d * d;
  return t * t;
}

/// Entry (i, k) = bisquare(|x_i - u_k| / r_level(k)); stored iff the
/// distance is strictly below the bandwidth.
inline SparseMatrix build_basis(std::span<const Location2D> points, const KnotSet& knots,
                                const BasisConfig& config) {
  std::vector<double> radius(knots.levels());
  for (std::size_t l = 0; l < knots.levels(); ++l) radius[l] = bandwidth(config, knots, l);
  std::vector<std::size_t> colptr(knots.size() + 1, 0);
  std::vector<std::size_t> rowind;
  std::vector<double> values;
  for (std::size_t k = 0; k < knots.size(); ++k) {
    const double r = radius[knots.level_of(k)];
    const Location2D& u = knots[k];
    for (std::size_t i = 0; i < points.size(); ++i) {
      const double d = distance(points[i], u);
      if (d < r) {
        const double v = bisquare(d / r);
        if (v != 0.0) {
          rowind.push_back(i);
          values.push_back(v);
        }
      }
    }
    colptr[k + 1] = rowind.size();
  }
  return SparseMatrix::from_csc(points.size(), knots.size(), std::move(colptr), std::move(rowind),
                                std::move(values));
}

// ---------------------------------------------------------------------------
// Knot CSV: `level,x,y`
// ---------------------------------------------------------------------------

inline void write_knots_csv(std::ostream& os, const KnotSet& knots) {
  os << "level,x,y\n";
  char buf[96];
  for (std::size_t i = 0; i < knots.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%zu,%.17g,%.17g\n", knots.level_of(i), knots[i].x, knots[i].y);
    os << buf;
  }
}

inline KnotSet read_knots_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("level,x,y", 0) != 0)
    throw Error(ErrorKind::format, "knots csv: expected header 'level,x,y'");
  std::vector<Location2D> pts;
  std::vector<std::size_t> levels;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::istringstream ss(line);
    std::size_t level = 0;
    Location2D p;
    char c1 = 0, c2 = 0;
    if (!(ss >> level >> c1 >> p.x >> c2 >> p.y) || c1 != ',' || c2 != ',')
      throw Error(ErrorKind::format, "knots csv: malformed line " + std::to_string(lineno));
    pts.push_back(p);
    levels.push_back(level);
  }
  return KnotSet(std::move(pts), std::move(levels));
}

}  // namespace rbk

#endif  // RBK_GEOMETRY_HPP
