#ifndef RBK_SIMULATION_HPP
#define RBK_SIMULATION_HPP

// Gaussian random fields under a Matern covariance and the experiment grid.

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstdio>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "rbk/covariance.hpp"
#include "rbk/error.hpp"
#include "rbk/geometry.hpp"
#include "rbk/linalg.hpp"
#include "rbk/random.hpp"

namespace rbk {

/// Largest truth-grid side simulated in-process (dense Cholesky route).
inline constexpr std::size_t kMaxGridSide = 100;

/// Draws f = L z for L L' = C + jitter I. The factor is computed once and
/// reused for every seed.
class GrfSampler {
 public:
  GrfSampler(std::span<const Location2D> locations, const MaternParams& matern) : n_(locations.size()) {
    matern.validate();
    const DenseMatrix c = cov_matrix(matern, locations, locations);
    if (matern.rho == 0.0) {
      factor_ = DenseMatrix(n_, n_);
      return;
    }
    for (double jitter = 1e-10 * matern.rho;; jitter *= 2.0) {
      DenseMatrix cj = c;
      for (std::size_t i = 0; i < n_; ++i) cj(i, i) += jitter;
      try {
        factor_ = cholesky(cj).lower;
        jitter_ = jitter;
        return;
      } catch (const Error& e) {
        if (e.kind() != ErrorKind::not_positive_definite) throw;
        if (jitter * 2.0 > 1e-6 * matern.rho)
          throw Error(ErrorKind::not_positive_definite, "sample_grf: covariance not SPD up to jitter 1e-6 rho");
      }
    }
  }

  std::size_t size() const noexcept { return n_; }
  double jitter() const noexcept { return jitter_; }

  Vector sample(SplitMix64& rng) const {
    Vector z(n_);
    for (double& v : z) v = rng.normal();
    Vector f(n_, 0.0);
    for (std::size_t j = 0; j < n_; ++j) {
      const double zj = z[j];
      const auto col = factor_.col(j);
      for (std::size_t i = j; i < n_; ++i) f[i] += col[i] * zj;
    }
    return f;
  }

  Vector sample(std::uint64_t seed) const {
    SplitMix64 rng(seed);
    return sample(rng);
  }

 private:
  std::size_t n_;
  DenseMatrix factor_;
  double jitter_ = 0.0;
};

inline Vector sample_grf(std::span<const Location2D> locations, const MaternParams& matern, std::uint64_t seed) {
  return GrfSampler(locations, matern).sample(seed);
}

struct SimDesign {
  std::size_t grid_side = 50;
  std::size_t n_obs = 300;
  MaternParams matern{1.0, 1.0, 0.137};
  double sigma2_noise = 0.0;
  std::uint64_t seed = 1;

  void validate() const {
    require(grid_side >= 2, ErrorKind::invalid_argument, "SimDesign: grid side must be >= 2");
    require(grid_side <= kMaxGridSide, ErrorKind::capability,
            "grid " + std::to_string(grid_side) + "x" + std::to_string(grid_side) +
                " exceeds the desk-scale cap of " + std::to_string(kMaxGridSide) + "x" +
                std::to_string(kMaxGridSide));
    require(n_obs >= 1, ErrorKind::invalid_argument, "SimDesign: n_obs must be >= 1");
    require(n_obs <= grid_side * grid_side, ErrorKind::invalid_argument, "SimDesign: n_obs exceeds grid size");
    require(sigma2_noise >= 0.0, ErrorKind::invalid_argument, "SimDesign: sigma2 must be >= 0");
    matern.validate();
  }
};

struct SimulatedField {
  std::vector<Location2D> grid;  ///< row-major over [0,1]^2
  Vector truth;
  std::vector<std::size_t> obs_indices;
  Vector observed;

  ObservationSet observations() const {
    ObservationSet o;
    for (std::size_t idx : obs_indices) o.locations.push_back(grid[idx]);
    o.values = observed;
    return o;
  }
};

/// Uniform lattice over [0,1]^2, row-major (x varies fastest).
inline std::vector<Location2D> unit_grid(std::size_t side) {
  std::vector<Location2D> g;
  g.reserve(side * side);
  const double step = 1.0 / static_cast<double>(side - 1);
  for (std::size_t r = 0; r < side; ++r)
    for (std::size_t c = 0; c < side; ++c) g.push_back({step * static_cast<double>(c), step * static_cast<double>(r)});
  return g;
}

/// Simulates with a caller-supplied sampler built on unit_grid(design.grid_side).
/// Streams: field, observation indices and noise are three children of the seed.
inline SimulatedField simulate_field(const SimDesign& design, const GrfSampler& sampler) {
  design.validate();
  require(sampler.size() == design.grid_side * design.grid_side, ErrorKind::dimension_mismatch,
          "simulate_field: sampler built for a different grid");
  SplitMix64 master(design.seed);
  SplitMix64 field_rng = master.split();
  SplitMix64 index_rng = master.split();
  SplitMix64 noise_rng = master.split();
  SimulatedField out;
  out.grid = unit_grid(design.grid_side);
  out.truth = sampler.sample(field_rng);
  out.obs_indices = sample_without_replacement(index_rng, out.grid.size(), design.n_obs);
  const double sd = std::sqrt(design.sigma2_noise);
  out.observed.reserve(design.n_obs);
  for (std::size_t idx : out.obs_indices) {
    const double z = noise_rng.normal();
    out.observed.push_back(design.sigma2_noise > 0.0 ? out.truth[idx] + sd * z : out.truth[idx]);
  }
  return out;
}

inline SimulatedField simulate_field(const SimDesign& design) {
  design.validate();
  const auto grid = unit_grid(design.grid_side);
  return simulate_field(design, GrfSampler(grid, design.matern));
}

inline void write_truth_csv(std::ostream& os, const SimulatedField& f) {
  os << "x,y,f\n";
  char buf[128];
  for (std::size_t i = 0; i < f.grid.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", f.grid[i].x, f.grid[i].y, f.truth[i]);
    os << buf;
  }
}

inline void write_observations_csv(std::ostream& os, const ObservationSet& obs) {
  os << "x,y,value\n";
  char buf[128];
  for (std::size_t i = 0; i < obs.size(); ++i) {
    std::snprintf(buf, sizeof buf, "%.17g,%.17g,%.17g\n", obs.locations[i].x, obs.locations[i].y, obs.values[i]);
    os << buf;
  }
}

// ---------------------------------------------------------------------------
// Experiment grid
// ---------------------------------------------------------------------------

enum class Scale { desk, paper };

struct ExperimentCell {
  double nu = 1.0;
  double theta = 0.137;
  double sigma2 = 0.0;
  std::size_t grid_side = 50;
  std::size_t n_obs = 300;
  std::size_t x_divisor = 9;
  std::size_t m = 77;
  double b = 1.5;
  std::size_t replicates = 20;
  bool knots_on_grid = false;  ///< one knot per truth-grid point instead of the triangular grid
};

/// Smoothness/range pairs giving correlation 0.2 at one third of the domain.
inline constexpr std::array<std::array<double, 2>, 4> kNuThetaPairs = {
    {{0.5, 0.205}, {1.0, 0.137}, {1.5, 0.110}, {2.0, 0.095}}};
inline constexpr std::array<double, 4> kNoiseLevels = {0.0, 0.1, 0.25, 0.4};
inline constexpr std::array<std::size_t, 3> kXDivisors = {5, 9, 13};

inline std::vector<double> bandwidth_grid(Scale scale) {
  std::vector<double> out;
  if (scale == Scale::desk) {
    for (int i = 0; i <= 4; ++i) out.push_back(0.5 + 0.5 * i);
  } else {
    for (int i = 5; i <= 25; ++i) out.push_back(static_cast<double>(i) / 10.0);
  }
  return out;
}

/// The full (nu, theta) x sigma2 x m x b cross. Paper scale is emitted for
/// reference only; its 200x200 grid exceeds the simulation cap.
inline std::vector<ExperimentCell> paper_design_cells(Scale scale) {
  std::vector<ExperimentCell> cells;
  const std::size_t side = scale == Scale::desk ? 50 : 200;
  const std::size_t reps = scale == Scale::desk ? 20 : 100;
  for (const auto& [nu, theta] : kNuThetaPairs)
    for (double s2 : kNoiseLevels)
      for (std::size_t k : kXDivisors) {
        const std::size_t m = triangular_knot_grid(k).size();
        for (double b : bandwidth_grid(scale)) cells.push_back({nu, theta, s2, side, 300, k, m, b, reps});
      }
  return cells;
}

}  // namespace rbk

#endif  // RBK_SIMULATION_HPP
