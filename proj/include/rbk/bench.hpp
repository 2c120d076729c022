#ifndef RBK_BENCH_HPP
#define RBK_BENCH_HPP

// Accuracy/time experiment runner: per cell and replicate, simulate a field,
// fit each method on the shared basis, krige the full truth grid and record
// seconds and MSPE.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <istream>
#include <map>
#include <memory>
#include <mutex>
#include <ostream>
#include <set>
#include <span>
#include <string>
#include <thread>
#include <tuple>
#include <vector>

#include "rbk/csv.hpp"
#include "rbk/error.hpp"
#include "rbk/estimation.hpp"
#include "rbk/geometry.hpp"
#include "rbk/prediction.hpp"
#include "rbk/simulation.hpp"

namespace rbk {

/// Largest knot count accepted by the runner.
inline constexpr std::size_t kMaxBenchKnots = 250;

inline constexpr std::array<Method, 3> kAllMethods = {Method::rbk, Method::em_full, Method::em_identity};

struct CellId {
  double nu = 1.0;
  double theta = 0.137;
  double sigma2 = 0.0;
  std::size_t grid = 50;
  std::size_t m = 77;
  double b = 1.5;
  Method method = Method::rbk;
  std::size_t replicate = 0;

  /// Stable text key used for resume bookkeeping.
  std::string key() const {
    return csv::fmt(nu) + ',' + csv::fmt(theta) + ',' + csv::fmt(sigma2) + ',' + std::to_string(grid) + ',' +
           std::to_string(m) + ',' + csv::fmt(b) + ',' + to_string(method) + ',' + std::to_string(replicate);
  }
};

struct CellResult {
  CellId id;
  double seconds = 0.0;
  double mspe = 0.0;
  int iterations = 0;
  bool converged = false;
};

struct BenchOptions {
  std::vector<Method> methods{kAllMethods.begin(), kAllMethods.end()};
  std::uint64_t base_seed = 1;
  FitConfig fit;  ///< method is overwritten per row
  std::size_t workers = 1;
};

/// Samplers are expensive (dense Cholesky of the grid covariance); one per
/// (grid, nu, theta) is shared by every cell and thread.
class SamplerCache {
 public:
  std::shared_ptr<const GrfSampler> get(std::size_t side, const MaternParams& matern) {
    const auto key = std::make_tuple(side, matern.nu, matern.rho, matern.theta);
    std::shared_ptr<Slot> slot;
    {
      std::lock_guard<std::mutex> lock(mu_);
      auto& s = slots_[key];
      if (!s) s = std::make_shared<Slot>();
      slot = s;
    }
    std::call_once(slot->once, [&] { slot->sampler = std::make_shared<GrfSampler>(unit_grid(side), matern); });
    return slot->sampler;
  }

 private:
  struct Slot {
    std::once_flag once;
    std::shared_ptr<const GrfSampler> sampler;
  };
  std::mutex mu_;
  std::map<std::tuple<std::size_t, double, double, double>, std::shared_ptr<Slot>> slots_;
};

namespace detail {

inline void check_bench_cell(const ExperimentCell& cell) {
  require(cell.grid_side <= kMaxGridSide, ErrorKind::capability,
          "bench: grid " + std::to_string(cell.grid_side) + " exceeds the desk-scale cap of " +
              std::to_string(kMaxGridSide));
  require(cell.m <= kMaxBenchKnots, ErrorKind::capability,
          "bench: m = " + std::to_string(cell.m) + " exceeds the desk-scale cap of " +
              std::to_string(kMaxBenchKnots));
}

}  // namespace detail

/// One replicate of one cell for each requested method. Simulation and basis
/// construction are shared and untimed; each row times fit + prediction.
/// Fit or prediction failures become rows with converged = false and NaN mspe.
inline std::vector<CellResult> run_cell(const ExperimentCell& cell, std::size_t replicate, const BenchOptions& opt,
                                        SamplerCache& cache) {
  detail::check_bench_cell(cell);
  SimDesign design;
  design.grid_side = cell.grid_side;
  design.n_obs = cell.n_obs;
  design.matern = {cell.nu, 1.0, cell.theta};
  design.sigma2_noise = cell.sigma2;
  design.seed = opt.base_seed + replicate;
  const auto sampler = cache.get(cell.grid_side, design.matern);
  const SimulatedField field = simulate_field(design, *sampler);
  const ObservationSet obs = field.observations();

  const KnotSet knots = cell.knots_on_grid ? KnotSet(field.grid) : triangular_knot_grid(cell.x_divisor);
  const BasisConfig config{cell.b};
  const SparseMatrix s = build_basis(obs.locations, knots, config);
  const SparseMatrix a = build_basis(field.grid, knots, config);
  const NoiseSpec noise = NoiseSpec::homoskedastic(obs.size(), 1.0);

  std::vector<CellResult> out;
  for (Method method : opt.methods) {
    CellResult r;
    r.id = {cell.nu, cell.theta, cell.sigma2, cell.grid_side, knots.size(), cell.b, method, replicate};
    FitConfig cfg = opt.fit;
    cfg.method = method;
    const Stopwatch clock;
    try {
      const FitResult fr = fit(obs, s, noise, cfg);
      const Vector pred = krige_predict(a, s, fr.params, obs.values);
      r.seconds = clock.seconds();
      r.mspe = mspe(pred, field.truth);
      r.iterations = fr.iterations;
      r.converged = fr.converged;
    } catch (const Error&) {
      r.seconds = clock.seconds();
      r.mspe = std::nan("");
      r.converged = false;
    }
    out.push_back(r);
  }
  return out;
}

inline std::vector<CellResult> run_cell(const ExperimentCell& cell, std::size_t replicate,
                                        const BenchOptions& opt = {}) {
  SamplerCache cache;
  return run_cell(cell, replicate, opt, cache);
}

// ---------------------------------------------------------------------------
// Filtering, resume and the worker pool
// ---------------------------------------------------------------------------

/// `key=value,...` over nu, theta, sigma2, grid, m, b, xdiv.
struct CellFilter {
  std::vector<std::pair<std::string, double>> terms;

  static CellFilter parse(const std::string& text) {
    CellFilter f;
    if (text.empty()) return f;
    static const std::set<std::string> known{"nu", "theta", "sigma2", "grid", "m", "b", "xdiv"};
    for (const std::string& part : csv::split(text)) {
      const auto eq = part.find('=');
      require(eq != std::string::npos, ErrorKind::invalid_argument, "filter term '" + part + "' lacks '='");
      const std::string k = part.substr(0, eq);
      double v = 0.0;
      require(known.count(k) == 1, ErrorKind::invalid_argument, "filter key '" + k + "' is not recognised");
      require(csv::parse_double(part.substr(eq + 1), v), ErrorKind::invalid_argument,
              "filter value for '" + k + "' is not a number");
      f.terms.emplace_back(k, v);
    }
    return f;
  }

  bool matches(const ExperimentCell& c) const {
    for (const auto& [k, v] : terms) {
      double have = 0.0;
      if (k == "nu") have = c.nu;
      else if (k == "theta") have = c.theta;
      else if (k == "sigma2") have = c.sigma2;
      else if (k == "grid") have = static_cast<double>(c.grid_side);
      else if (k == "m") have = static_cast<double>(c.m);
      else if (k == "b") have = c.b;
      else have = static_cast<double>(c.x_divisor);
      if (std::abs(have - v) > 1e-9 * std::max(1.0, std::abs(v))) return false;
    }
    return true;
  }
};

/// Runs every (cell, replicate) not already in `done` (keys from CellId::key).
/// `sink` is called under a lock as each replicate finishes, in completion order.
inline void run_bench(std::span<const ExperimentCell> cells, const BenchOptions& opt,
                      const std::set<std::string>& done, const std::function<void(const CellResult&)>& sink) {
  for (const auto& c : cells) detail::check_bench_cell(c);
  struct Job {
    const ExperimentCell* cell;
    std::size_t replicate;
    std::vector<Method> methods;
  };
  std::vector<Job> jobs;
  for (const auto& c : cells) {
    const std::size_t m = c.knots_on_grid ? c.grid_side * c.grid_side : triangular_knot_grid(c.x_divisor).size();
    for (std::size_t r = 0; r < c.replicates; ++r) {
      Job j{&c, r, {}};
      for (Method meth : opt.methods) {
        const CellId id{c.nu, c.theta, c.sigma2, c.grid_side, m, c.b, meth, r};
        if (done.count(id.key()) == 0) j.methods.push_back(meth);
      }
      if (!j.methods.empty()) jobs.push_back(std::move(j));
    }
  }
  SamplerCache cache;
  std::mutex sink_mu;
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i = next++; i < jobs.size(); i = next++) {
      BenchOptions local = opt;
      local.methods = jobs[i].methods;
      const auto rows = run_cell(*jobs[i].cell, jobs[i].replicate, local, cache);
      std::lock_guard<std::mutex> lock(sink_mu);
      for (const auto& r : rows) sink(r);
    }
  };
  const std::size_t width = std::max<std::size_t>(1, std::min(opt.workers, jobs.size()));
  if (width == 1) {
    worker();
    return;
  }
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < width; ++t) pool.emplace_back(worker);
  for (auto& t : pool) t.join();
}

inline std::vector<CellResult> run_bench(std::span<const ExperimentCell> cells, const BenchOptions& opt) {
  std::vector<CellResult> out;
  run_bench(cells, opt, {}, [&](const CellResult& r) { out.push_back(r); });
  return out;
}

// ---------------------------------------------------------------------------
// Results CSV
// ---------------------------------------------------------------------------

inline constexpr const char* kResultsHeader = "nu,theta,sigma2,grid,m,b,method,replicate,iterations,converged,seconds,mspe";

inline void write_result_row(std::ostream& os, const CellResult& r) {
  os << r.id.key() << ',' << r.iterations << ',' << (r.converged ? 1 : 0) << ',' << csv::fmt(r.seconds) << ','
     << csv::fmt(r.mspe) << '\n';
}

inline std::vector<CellResult> read_results(std::istream& is) {
  std::string line;
  std::vector<CellResult> out;
  if (!std::getline(is, line)) return out;
  if (!line.empty() && line.back() == '\r') line.pop_back();
  require(line == kResultsHeader, ErrorKind::format, "line 1: unexpected results header");
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = csv::split(line);
    const std::string where = "line " + std::to_string(lineno) + ": ";
    require(f.size() == 12, ErrorKind::format, where + "expected 12 fields");
    std::array<double, 11> v{};
    const std::array<std::size_t, 11> numeric = {0, 1, 2, 3, 4, 5, 7, 8, 9, 10, 11};
    for (std::size_t i = 0; i < numeric.size(); ++i)
      if (!csv::parse_double(f[numeric[i]], v[i]) && f[numeric[i]] != "nan")
        throw Error(ErrorKind::format, where + "bad number '" + f[numeric[i]] + "'");
      else if (f[numeric[i]] == "nan")
        v[i] = std::nan("");
    const auto method = parse_method(f[6]);
    require(method.has_value(), ErrorKind::format, where + "unknown method '" + f[6] + "'");
    CellResult r;
    r.id = {v[0], v[1], v[2], static_cast<std::size_t>(v[3]), static_cast<std::size_t>(v[4]), v[5], *method,
            static_cast<std::size_t>(v[6])};
    r.iterations = static_cast<int>(v[7]);
    r.converged = v[8] != 0.0;
    r.seconds = v[9];
    r.mspe = v[10];
    out.push_back(r);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Summaries
// ---------------------------------------------------------------------------

struct Quartiles {
  double q1 = 0.0, median = 0.0, q3 = 0.0;
};

/// Linear-interpolation quartiles; the median is the midpoint of the two
/// central order statistics for even counts.
inline Quartiles quartiles(std::vector<double> v) {
  require(!v.empty(), ErrorKind::invalid_argument, "quartiles: empty input");
  std::sort(v.begin(), v.end());
  auto q = [&](double p) {
    const double pos = p * static_cast<double>(v.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, v.size() - 1);
    return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
  };
  const std::size_t n = v.size();
  const double med = n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
  return {q(0.25), med, q(0.75)};
}

inline double median(std::vector<double> v) { return quartiles(std::move(v)).median; }

struct Summary {
  CellId id;  ///< replicate unused
  std::size_t count = 0;
  std::size_t converged = 0;
  std::size_t failed = 0;  ///< rows with non-finite mspe
  Quartiles seconds;
  Quartiles mspe;
};

/// Groups by cell id without the replicate. Non-finite MSPE rows are counted
/// but left out of the MSPE quartiles. Output order is sorted by key, so the
/// result does not depend on input order.
inline std::vector<Summary> summarize(std::span<const CellResult> results) {
  require(!results.empty(), ErrorKind::invalid_argument, "summarize: no results");
  std::map<std::string, std::vector<const CellResult*>> groups;
  for (const auto& r : results) {
    CellId g = r.id;
    g.replicate = 0;
    groups[g.key()].push_back(&r);
  }
  std::vector<Summary> out;
  for (const auto& [key, rows] : groups) {
    Summary s;
    s.id = rows.front()->id;
    s.id.replicate = 0;
    s.count = rows.size();
    std::vector<double> secs, errs;
    for (const CellResult* r : rows) {
      secs.push_back(r->seconds);
      if (std::isfinite(r->mspe)) errs.push_back(r->mspe);
      else ++s.failed;
      s.converged += r->converged ? 1 : 0;
    }
    s.seconds = quartiles(secs);
    if (!errs.empty()) s.mspe = quartiles(errs);
    else s.mspe = {std::nan(""), std::nan(""), std::nan("")};
    out.push_back(s);
  }
  return out;
}

inline void write_summary_csv(std::ostream& os, std::span<const Summary> rows) {
  os << "nu,theta,sigma2,grid,m,b,method,count,converged,failed,"
        "seconds_q1,seconds_median,seconds_q3,mspe_q1,mspe_median,mspe_q3\n";
  for (const auto& s : rows) {
    os << csv::fmt(s.id.nu) << ',' << csv::fmt(s.id.theta) << ',' << csv::fmt(s.id.sigma2) << ',' << s.id.grid
       << ',' << s.id.m << ',' << csv::fmt(s.id.b) << ',' << to_string(s.id.method) << ',' << s.count << ','
       << s.converged << ',' << s.failed << ',' << csv::fmt(s.seconds.q1) << ',' << csv::fmt(s.seconds.median)
       << ',' << csv::fmt(s.seconds.q3) << ',' << csv::fmt(s.mspe.q1) << ',' << csv::fmt(s.mspe.median) << ','
       << csv::fmt(s.mspe.q3) << '\n';
  }
}

}  // namespace rbk

#endif  // RBK_BENCH_HPP
