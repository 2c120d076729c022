// rbk: command-line front end for reduced-basis kriging.
//
// Exit codes: 0 success, 2 usage, 3 input format, 4 numerical failure,
// 5 capability.

#include <CLI11.hpp>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "rbk/rbk.hpp"

namespace fs = std::filesystem;
using namespace rbk;

namespace {

enum Exit { kOk = 0, kUsage = 2, kFormat = 3, kNumerical = 4, kCapability = 5 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::invalid_argument:
    case ErrorKind::dimension_mismatch:
      return kUsage;
    case ErrorKind::format:
      return kFormat;
    case ErrorKind::capability:
      return kCapability;
    default:
      return kNumerical;
  }
}

std::ifstream open_in(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw UsageError("cannot open '" + path + "' for reading");
  return is;
}

std::ofstream open_out(const std::string& path, std::ios::openmode mode = std::ios::out) {
  std::ofstream os(path, mode);
  if (!os) throw UsageError("cannot open '" + path + "' for writing");
  return os;
}

// key = value lines; '#' starts a comment line.
std::vector<std::pair<std::string, std::string>> read_key_values(std::istream& is, const std::string& what) {
  std::vector<std::pair<std::string, std::string>> kv;
  std::string line;
  std::size_t lineno = 0;
  auto trim = [](std::string s) {
    s.erase(0, s.find_first_not_of(" \t"));
    s.erase(s.find_last_not_of(" \t\r") + 1);
    return s;
  };
  while (std::getline(is, line)) {
    ++lineno;
    line = trim(line);
    if (line.empty() || line.front() == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw Error(ErrorKind::format, what + " line " + std::to_string(lineno) + ": expected 'key = value'");
    kv.emplace_back(trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
  }
  return kv;
}

// Splices `--config FILE` contents in front of the remaining arguments of the
// subcommand so that explicit flags (parsed later) take precedence.
std::vector<std::string> expand_config(int argc, char** argv) {
  std::vector<std::string> in(argv + 1, argv + argc), out, from_file;
  for (std::size_t i = 0; i < in.size(); ++i) {
    std::string path;
    if (in[i] == "--config") {
      if (i + 1 >= in.size()) throw UsageError("--config: missing file name");
      path = in[++i];
    } else if (in[i].rfind("--config=", 0) == 0) {
      path = in[i].substr(9);
    } else {
      out.push_back(in[i]);
      continue;
    }
    if (!fs::exists(path)) throw UsageError("--config: file '" + path + "' does not exist");
    auto is = open_in(path);
    for (const auto& [k, v] : read_key_values(is, "config")) from_file.push_back("--" + k + "=" + v);
  }
  if (from_file.empty()) return out;
  std::size_t at = 0;
  while (at < out.size() && out[at].rfind("-", 0) == 0) ++at;  // first positional = subcommand
  if (at < out.size()) ++at;
  out.insert(out.begin() + static_cast<std::ptrdiff_t>(at), from_file.begin(), from_file.end());
  return out;
}

std::vector<double> parse_numbers(const std::string& s, char sep, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, sep)) {
    if (tok.empty()) continue;
    double v = 0.0;
    if (!csv::parse_double(tok, v)) throw Error(ErrorKind::format, what + ": bad number '" + tok + "'");
    out.push_back(v);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Knots
// ---------------------------------------------------------------------------

struct KnotOptions {
  std::size_t xdiv = 9;
  std::vector<std::size_t> levels;
  double bandwidth = 1.5;
  std::string domain = "0,1,0,1";

  void add(CLI::App* app) {
    auto* x = app->add_option("--xdiv", xdiv, "knots along x for a single triangular grid")->capture_default_str();
    auto* l = app->add_option("--levels", levels, "x-divisors of a multi-resolution knot set, e.g. 5,9")
                  ->delimiter(',');
    x->excludes(l);
    app->add_option("--bandwidth", bandwidth, "bandwidth constant b (radius = b * min knot spacing)")
        ->capture_default_str();
    app->add_option("--domain", domain, "knot domain xmin,xmax,ymin,ymax")->capture_default_str();
  }

  std::vector<std::size_t> divisors() const { return levels.empty() ? std::vector<std::size_t>{xdiv} : levels; }

  Domain dom() const {
    const auto v = parse_numbers(domain, ',', "--domain");
    if (v.size() != 4) throw UsageError("--domain: expected xmin,xmax,ymin,ymax");
    return {v[0], v[1], v[2], v[3]};
  }

  void validate() const {
    for (std::size_t k : divisors())
      if (k < 2) throw UsageError("--xdiv/--levels: every x-divisor must be >= 2");
    if (!(bandwidth > 0.0)) throw UsageError("--bandwidth: must be > 0");
    (void)dom();
  }

  KnotSet build() const {
    const auto div = divisors();
    if (div.size() == 1) return triangular_knot_grid(div[0], dom());
    return multi_resolution_knots(div, dom(), default_jitter(div, dom()));
  }
};

// ---------------------------------------------------------------------------
// Fit record
// ---------------------------------------------------------------------------

struct FitRecord {
  Method method = Method::rbk;
  KnotOptions knots;
  std::size_t n = 0;
  std::size_t m = 0;
  int iterations = 0;
  bool converged = false;
  double rho_k = 0.0;
  double sigma2_delta = 0.0;
  DenseMatrix k;  ///< em-full only

  SREParams params() const {
    const NoiseSpec noise = NoiseSpec::homoskedastic(n, sigma2_delta);
    if (method == Method::em_full) return {FullK{k}, noise};
    return {ScaledK{rho_k}, noise};
  }
};

void write_record(std::ostream& os, const FitRecord& r) {
  os << "method = " << to_string(r.method) << '\n';
  os << "levels =";
  for (std::size_t d : r.knots.divisors()) os << ' ' << d;
  os << "\nbandwidth = " << csv::fmt(r.knots.bandwidth) << '\n';
  os << "domain = " << r.knots.domain << '\n';
  os << "n = " << r.n << "\nm = " << r.m << '\n';
  os << "iterations = " << r.iterations << '\n';
  os << "converged = " << (r.converged ? "true" : "false") << '\n';
  os << "rho_k = " << csv::fmt(r.rho_k) << '\n';
  os << "sigma2_delta = " << csv::fmt(r.sigma2_delta) << '\n';
  if (r.method == Method::em_full) {
    os << "k =";
    for (std::size_t i = 0; i < r.m; ++i)
      for (std::size_t j = 0; j < r.m; ++j) os << ' ' << csv::fmt(r.k(i, j));
    os << '\n';
  }
}

FitRecord read_record(std::istream& is) {
  const auto kv = read_key_values(is, "fit record");
  auto get = [&](const std::string& key) -> const std::string& {
    for (const auto& [k, v] : kv)
      if (k == key) return v;
    throw Error(ErrorKind::format, "fit record: missing key '" + key + "'");
  };
  auto one = [&](const std::string& key) {
    const auto v = parse_numbers(get(key), ' ', "fit record '" + key + "'");
    if (v.size() != 1) throw Error(ErrorKind::format, "fit record: '" + key + "' expects one number");
    return v[0];
  };
  FitRecord r;
  const auto method = parse_method(get("method"));
  if (!method) throw Error(ErrorKind::format, "fit record: unknown method '" + get("method") + "'");
  r.method = *method;
  for (double d : parse_numbers(get("levels"), ' ', "fit record 'levels'"))
    r.knots.levels.push_back(static_cast<std::size_t>(d));
  if (r.knots.levels.empty()) throw Error(ErrorKind::format, "fit record: empty 'levels'");
  r.knots.bandwidth = one("bandwidth");
  r.knots.domain = get("domain");
  r.n = static_cast<std::size_t>(one("n"));
  r.m = static_cast<std::size_t>(one("m"));
  r.iterations = static_cast<int>(one("iterations"));
  r.converged = get("converged") == "true";
  r.rho_k = one("rho_k");
  r.sigma2_delta = one("sigma2_delta");
  if (r.method == Method::em_full) {
    const auto v = parse_numbers(get("k"), ' ', "fit record 'k'");
    if (v.size() != r.m * r.m) throw Error(ErrorKind::format, "fit record: 'k' must hold m*m values");
    r.k = DenseMatrix(r.m, r.m);
    for (std::size_t i = 0; i < r.m; ++i)
      for (std::size_t j = 0; j < r.m; ++j) r.k(i, j) = v[i * r.m + j];
  }
  return r;
}

ObservationSet load_observations(const std::string& path) {
  auto is = open_in(path);
  return csv::read_observations(is);
}

std::size_t worker_count(std::size_t flag_value, bool flag_given) {
  if (flag_given) return flag_value;
  if (const char* env = std::getenv("KRIGE_WORKERS")) {
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (end == env || *end != '\0' || v < 1) throw UsageError("KRIGE_WORKERS must be a positive integer");
    return static_cast<std::size_t>(v);
  }
  return flag_value;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct SimulateCmd {
  std::size_t grid = 50, nobs = 300;
  double nu = 1.0, theta = 0.137, rho = 1.0, sigma2 = 0.0;
  bool calibrate = false;
  std::uint64_t seed = 1;
  std::string truth = "truth.csv", obs = "obs.csv";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("simulate", "simulate a Matern random field and noisy observations");
    c->add_option("--grid", grid, "truth grid side")->capture_default_str();
    c->add_option("--nobs", nobs, "number of observed grid points")->capture_default_str();
    c->add_option("--nu", nu, "Matern smoothness")->capture_default_str();
    auto* t = c->add_option("--theta", theta, "Matern range")->capture_default_str();
    c->add_flag("--calibrate", calibrate, "choose theta so the correlation is 0.2 at distance 1/3")->excludes(t);
    c->add_option("--rho", rho, "Matern sill")->capture_default_str();
    c->add_option("--sigma2", sigma2, "noise variance added to observations")->capture_default_str();
    c->add_option("--seed", seed, "random seed")->capture_default_str();
    c->add_option("--truth", truth, "output grid truth CSV (x,y,f)")->capture_default_str();
    c->add_option("--obs", obs, "output observations CSV (x,y,value)")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() const {
    if (grid < 2) throw UsageError("--grid: must be >= 2");
    if (nobs < 1) throw UsageError("--nobs: must be >= 1");
    if (nobs > grid * grid) throw UsageError("--nobs: exceeds the number of grid points");
    if (!(nu > 0.0)) throw UsageError("--nu: must be > 0");
    if (!(theta > 0.0)) throw UsageError("--theta: must be > 0");
    if (!(rho >= 0.0)) throw UsageError("--rho: must be >= 0");
    if (!(sigma2 >= 0.0)) throw UsageError("--sigma2: must be >= 0");
    SimDesign d;
    d.grid_side = grid;
    d.n_obs = nobs;
    d.matern = {nu, rho, calibrate ? calibrate_theta(nu, 0.2, 1.0 / 3.0) : theta};
    d.sigma2_noise = sigma2;
    d.seed = seed;
    const SimulatedField f = simulate_field(d);
    auto ts = open_out(truth);
    write_truth_csv(ts, f);
    auto os = open_out(obs);
    write_observations_csv(os, f.observations());
  }
};

struct FitCmd {
  std::string obs, out = "fit.txt", method = "rbk";
  KnotOptions knots;
  int max_iters = 1000;
  double rel_tol = 1e-6;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("fit", "estimate K and sigma2_delta and write a parameter record");
    c->add_option("--obs", obs, "observations CSV (x,y,value)")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "parameter record")->capture_default_str();
    c->add_option("--method", method, "rbk | em-full | em-identity")
        ->check(CLI::IsMember({"rbk", "em-full", "em-identity"}))
        ->capture_default_str();
    knots.add(c);
    c->add_option("--max-iters", max_iters, "iteration cap")->capture_default_str();
    c->add_option("--rel-tol", rel_tol, "relative log-likelihood tolerance")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() const {
    knots.validate();
    if (max_iters < 1) throw UsageError("--max-iters: must be >= 1");
    if (!(rel_tol > 0.0)) throw UsageError("--rel-tol: must be > 0");
    const ObservationSet o = load_observations(obs);
    const KnotSet ks = knots.build();
    const SparseMatrix s = build_basis(o.locations, ks, {knots.bandwidth});
    FitConfig cfg{*parse_method(method), max_iters, rel_tol};
    const FitResult fr = fit(o, s, NoiseSpec::homoskedastic(o.size(), 1.0), cfg);
    FitRecord r;
    r.method = cfg.method;
    r.knots = knots;
    r.knots.levels = knots.divisors();
    r.n = o.size();
    r.m = ks.size();
    r.iterations = fr.iterations;
    r.converged = fr.converged;
    r.rho_k = mean_k_variance(fr.params.kform);
    r.sigma2_delta = fr.params.noise.sigma2_delta;
    if (cfg.method == Method::em_full) r.k = materialize(fr.params.kform, ks.size());
    auto os = open_out(out);
    write_record(os, r);
    std::fprintf(stderr, "%s: m=%zu iterations=%d converged=%s seconds=%.3f\n", method.c_str(), r.m, r.iterations,
                 r.converged ? "true" : "false", fr.wall_seconds);
  }
};

struct PredictCmd {
  std::string obs, params, sites, out = "pred.csv";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("predict", "krige at sites from a parameter record");
    c->add_option("--obs", obs, "observations CSV used for the fit")->required()->check(CLI::ExistingFile);
    c->add_option("--params", params, "parameter record written by fit")->required()->check(CLI::ExistingFile);
    c->add_option("--sites", sites, "prediction sites CSV (x,y)")->required()->check(CLI::ExistingFile);
    c->add_option("--out", out, "output CSV (x,y,pred,se)")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() const {
    auto ps = open_in(params);
    const FitRecord r = read_record(ps);
    const ObservationSet o = load_observations(obs);
    if (o.size() != r.n)
      throw Error(ErrorKind::format, "observations have " + std::to_string(o.size()) + " rows, record expects " +
                                         std::to_string(r.n));
    auto ss = open_in(sites);
    const auto at = csv::read_sites(ss);
    auto os = open_out(out);
    os << "x,y,pred,se\n";
    if (at.empty()) return;
    const KnotSet ks = r.knots.build();
    if (ks.size() != r.m) throw Error(ErrorKind::format, "fit record: knot count does not match m");
    const SparseMatrix s = build_basis(o.locations, ks, {r.knots.bandwidth});
    const SparseMatrix a = build_basis(at, ks, {r.knots.bandwidth});
    const auto res = krige(a, s, r.params(), o.values, at, Vector(at.size(), 1.0));
    for (std::size_t i = 0; i < at.size(); ++i)
      os << csv::fmt(at[i].x) << ',' << csv::fmt(at[i].y) << ',' << csv::fmt(res.predictions[i]) << ','
         << csv::fmt(res.std_errors[i]) << '\n';
  }
};

std::vector<CovariateSpec> parse_covariates(const std::vector<std::string>& items) {
  std::vector<CovariateSpec> out;
  for (const auto& it : items) {
    std::stringstream ss(it);
    std::string name, deg, df;
    if (!std::getline(ss, name, ':') || !std::getline(ss, deg, ':') || !std::getline(ss, df) || name.empty())
      throw UsageError("--covariate: expected name:degree:df, got '" + it + "'");
    CovariateSpec c;
    c.name = name;
    try {
      c.degree = std::stoi(deg);
      c.df = std::stoi(df);
    } catch (const std::exception&) {
      throw UsageError("--covariate: degree and df must be integers in '" + it + "'");
    }
    try {
      c.validate();
    } catch (const Error& e) {
      throw UsageError(std::string("--covariate: ") + e.what());
    }
    out.push_back(c);
  }
  return out;
}

struct DetrendCmd {
  std::string stations, out = "detrended.csv", model = "detrend_model.txt";
  std::vector<std::string> covariates{"elev:3:5", "lat:2:4", "lon:3:6"};

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("detrend", "remove a regression-spline mean and write the projected data");
    c->add_option("--stations", stations, "station CSV (lon,lat,elev,value)")->required()->check(CLI::ExistingFile);
    c->add_option("--covariate", covariates, "name:degree:df, repeatable")
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll)
        ->capture_default_str();
    c->add_option("--out", out, "projected data CSV (index,value)")->capture_default_str();
    c->add_option("--model", model, "fitted mean model file")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() const {
    const auto specs = parse_covariates(covariates);
    std::vector<std::string> wanted{"lon", "lat", "value"};
    for (const auto& s : specs)
      if (std::find(wanted.begin(), wanted.end(), s.name) == wanted.end()) wanted.insert(wanted.end() - 1, s.name);
    auto is = open_in(stations);
    const csv::Table t = csv::read_table(is, std::span<const std::string>(wanted));
    for (const auto& col : t.ignored) std::fprintf(stderr, "warning: ignoring column '%s'\n", col.c_str());
    auto column = [&](const std::string& name) {
      for (std::size_t c = 0; c < t.columns.size(); ++c)
        if (t.columns[c] == name) return t[c];
      return std::vector<double>{};
    };
    std::vector<std::vector<double>> cov;
    for (const auto& s : specs) cov.push_back(column(s.name));
    const auto res = detrend(cov, column("value"), specs);
    auto os = open_out(out);
    os << "index,value\n";
    for (std::size_t i = 0; i < res.y_tilde.size(); ++i) os << i << ',' << csv::fmt(res.y_tilde[i]) << '\n';
    auto ms = open_out(model);
    write_detrend_model(ms, res.model);
  }
};

struct AddBackCmd {
  std::string model, sites, out = "final.csv";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("add-back", "add covariate effects to kriging predictions");
    c->add_option("--model", model, "model file written by detrend")->required()->check(CLI::ExistingFile);
    c->add_option("--sites", sites, "site CSV with the model's covariates and a pred column")
        ->required()
        ->check(CLI::ExistingFile);
    c->add_option("--out", out, "output CSV (index,pred)")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() const {
    auto ms = open_in(model);
    const DetrendModel m = read_detrend_model(ms);
    std::vector<std::string> wanted;
    for (const auto& s : m.splines) wanted.push_back(s.spec.name);
    wanted.push_back("pred");
    auto is = open_in(sites);
    const csv::Table t = csv::read_table(is, std::span<const std::string>(wanted));
    std::vector<std::vector<double>> cov(t.data.begin(), t.data.end() - 1);
    const auto res = add_back(t.data.back(), cov, m);
    for (const auto& w : res.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    auto os = open_out(out);
    os << "index,pred\n";
    for (std::size_t i = 0; i < res.predictions.size(); ++i) os << i << ',' << csv::fmt(res.predictions[i]) << '\n';
  }
};

struct SelectCmd {
  std::string obs, sites, out, criterion = "se";
  std::vector<std::string> candidates;
  std::string domain = "0,1,0,1";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("select", "choose among candidate bases");
    c->add_option("--obs", obs, "observations CSV (x,y,value)")->required()->check(CLI::ExistingFile);
    c->add_option("--candidate", candidates, "xdiv=K,b=B or levels=K1+K2,b=B; repeatable")
        ->required()
        ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
    c->add_option("--criterion", criterion, "se (mean kriging SE) | sigma2 (smallest sigma2_delta)")
        ->check(CLI::IsMember({"se", "sigma2"}))
        ->capture_default_str();
    c->add_option("--sites", sites, "sites for the mean-SE criterion (default: observation locations)")
        ->check(CLI::ExistingFile);
    c->add_option("--domain", domain, "knot domain xmin,xmax,ymin,ymax")->capture_default_str();
    c->add_option("--out", out, "report CSV (default: stdout)");
    c->callback([this] { run(); });
  }

  KnotOptions parse_candidate(const std::string& text) const {
    KnotOptions k;
    k.domain = domain;
    for (const auto& term : csv::split(text)) {
      const auto eq = term.find('=');
      if (eq == std::string::npos) throw UsageError("--candidate: term '" + term + "' lacks '='");
      const std::string key = term.substr(0, eq), val = term.substr(eq + 1);
      if (key == "xdiv" || key == "levels") {
        k.levels.clear();
        for (double v : parse_numbers(val, '+', "--candidate")) k.levels.push_back(static_cast<std::size_t>(v));
      } else if (key == "b") {
        const auto v = parse_numbers(val, '+', "--candidate");
        if (v.size() != 1) throw UsageError("--candidate: b expects one number");
        k.bandwidth = v[0];
      } else {
        throw UsageError("--candidate: unknown key '" + key + "'");
      }
    }
    if (k.levels.empty()) throw UsageError("--candidate: '" + text + "' needs xdiv or levels");
    k.validate();
    return k;
  }

  void run() const {
    std::vector<KnotOptions> opts;
    std::vector<Candidate> cands;
    for (const auto& c : candidates) {
      opts.push_back(parse_candidate(c));
      cands.push_back({{opts.back().bandwidth}, opts.back().build()});
    }
    const ObservationSet o = load_observations(obs);
    std::vector<Location2D> at;
    if (!sites.empty()) {
      auto ss = open_in(sites);
      at = csv::read_sites(ss);
    }
    const auto crit = criterion == "se" ? SelectionCriterion::mean_krig_se : SelectionCriterion::min_sigma2;
    const auto rep = model_select(cands, o, NoiseSpec::homoskedastic(o.size(), 1.0), crit, at);
    std::ofstream file;
    if (!out.empty()) file = open_out(out);
    std::ostream& os = out.empty() ? std::cout : file;
    os << "candidate,levels,b,m,ok,rho_k,sigma2_delta,mean_se,score,winner\n";
    for (std::size_t i = 0; i < cands.size(); ++i) {
      const auto& r = rep.candidates[i];
      std::string lv;
      for (std::size_t d : opts[i].levels) lv += (lv.empty() ? "" : "+") + std::to_string(d);
      os << i << ',' << lv << ',' << csv::fmt(opts[i].bandwidth) << ',' << cands[i].knots.size() << ','
         << (r.ok ? 1 : 0) << ',' << csv::fmt(r.rho_k) << ',' << csv::fmt(r.sigma2_delta) << ','
         << csv::fmt(r.mean_se) << ',' << csv::fmt(r.score) << ',' << (i == rep.winner ? 1 : 0) << '\n';
      if (!r.ok) std::fprintf(stderr, "candidate %zu failed: %s\n", i, r.message.c_str());
    }
    std::fprintf(stderr, "winner: candidate %zu\n", rep.winner);
  }
};

struct BenchCmd {
  std::string scale = "desk", only, out = "bench_results.csv", summary = "bench_summary.csv";
  std::vector<std::string> methods{"rbk", "em-full", "em-identity"};
  std::size_t replicates = 0, grid = 0, workers = 1;
  std::uint64_t seed = 1;
  bool serial_timing = false, resume = false, list = false;
  int max_iters = 1000;
  double rel_tol = 1e-6;
  CLI::Option* workers_opt = nullptr;

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("bench", "run the accuracy/timing experiment grid");
    c->add_option("--scale", scale, "desk | paper")->check(CLI::IsMember({"desk", "paper"}))->capture_default_str();
    c->add_option("--only", only, "cell filter, e.g. nu=1,sigma2=0.25,m=77 (keys nu,theta,sigma2,grid,m,b,xdiv)");
    c->add_option("--methods", methods, "comma-separated methods")
        ->delimiter(',')
        ->check(CLI::IsMember({"rbk", "em-full", "em-identity"}))
        ->capture_default_str();
    c->add_option("--replicates", replicates, "replicates per cell (default: scale default)");
    c->add_option("--grid", grid, "truth grid side override (default: scale default)");
    workers_opt = c->add_option("--workers", workers, "worker threads (env KRIGE_WORKERS)")->capture_default_str();
    c->add_flag("--serial-timing", serial_timing, "force one worker for lower timing variance");
    c->add_flag("--resume", resume, "skip cell ids already present in --out and append");
    c->add_flag("--list", list, "print the number of selected cells and rows, then exit");
    c->add_option("--seed", seed, "base seed; replicate r uses seed + r")->capture_default_str();
    c->add_option("--max-iters", max_iters, "iteration cap")->capture_default_str();
    c->add_option("--rel-tol", rel_tol, "relative log-likelihood tolerance")->capture_default_str();
    c->add_option("--out", out, "results CSV")->capture_default_str();
    c->add_option("--summary", summary, "summary CSV")->capture_default_str();
    c->callback([this] { run(); });
  }

  // Keeps only complete lines of an interrupted results file.
  static std::vector<CellResult> load_done(const std::string& path) {
    std::string text;
    {
      auto is = open_in(path);
      std::stringstream ss;
      ss << is.rdbuf();
      text = ss.str();
    }
    if (!text.empty() && text.back() != '\n') {
      text.erase(text.find_last_of('\n') == std::string::npos ? 0 : text.find_last_of('\n') + 1);
      auto os = open_out(path);
      os << text;
    }
    std::istringstream is(text);
    return read_results(is);
  }

  void run() const {
    if (scale == "paper")
      throw Error(ErrorKind::capability,
                  "--scale paper needs 200x200 truth grids; the desk-scale cap is " + std::to_string(kMaxGridSide) +
                      "x" + std::to_string(kMaxGridSide));
    if (max_iters < 1) throw UsageError("--max-iters: must be >= 1");
    if (!(rel_tol > 0.0)) throw UsageError("--rel-tol: must be > 0");
    CellFilter filter;
    try {
      filter = CellFilter::parse(only);
    } catch (const Error& e) {
      throw UsageError(std::string("--only: ") + e.what());
    }
    std::vector<ExperimentCell> cells;
    for (auto c : paper_design_cells(Scale::desk)) {
      if (replicates > 0) c.replicates = replicates;
      if (grid > 0) c.grid_side = grid;
      if (filter.matches(c)) cells.push_back(c);
    }
    BenchOptions opt;
    opt.methods.clear();
    for (const auto& m : methods) opt.methods.push_back(*parse_method(m));
    opt.base_seed = seed;
    opt.fit.max_iters = max_iters;
    opt.fit.rel_tol = rel_tol;
    opt.workers = serial_timing ? 1 : worker_count(workers, workers_opt->count() > 0);
    if (opt.workers < 1) throw UsageError("--workers: must be >= 1");

    std::size_t rows = 0;
    for (const auto& c : cells) rows += c.replicates * opt.methods.size();
    if (list) {
      std::printf("cells %zu rows %zu\n", cells.size(), rows);
      return;
    }

    std::vector<CellResult> all;
    std::set<std::string> done;
    if (resume && fs::exists(out)) {
      all = load_done(out);
      for (const auto& r : all) done.insert(r.id.key());
    }
    const bool append = resume && fs::exists(out) && fs::file_size(out) > 0;
    auto os = open_out(out, append ? std::ios::app : std::ios::out);
    if (!append) os << kResultsHeader << '\n';
    std::size_t fresh = 0;
    run_bench(cells, opt, done, [&](const CellResult& r) {
      write_result_row(os, r);
      os.flush();
      all.push_back(r);
      ++fresh;
    });
    std::fprintf(stderr, "bench: %zu new rows, %zu skipped\n", fresh, done.size());
    if (!all.empty()) {
      auto ss = open_out(summary);
      const auto s = summarize(all);
      write_summary_csv(ss, s);
    }
  }
};

struct StudyKCmd {
  std::size_t grid = 30;
  double nu = 1.0, theta = 0.137;
  bool calibrate = false, synthetic = false;
  std::uint64_t seed = 1;
  KnotOptions knots;
  std::string out = "k_profile.csv";

  void add(CLI::App& root) {
    auto* c = root.add_subcommand("study-k", "correlation-versus-distance profile of the implied K");
    c->add_option("--grid", grid, "grid side of the field locations")->capture_default_str();
    c->add_option("--nu", nu, "Matern smoothness")->capture_default_str();
    auto* t = c->add_option("--theta", theta, "Matern range")->capture_default_str();
    c->add_flag("--calibrate", calibrate, "choose theta so the correlation is 0.2 at distance 1/3")->excludes(t);
    c->add_flag("--synthetic", synthetic, "use Sigma_f = S K0 S' for a random SPD K0 and report the recovery error");
    c->add_option("--seed", seed, "seed for --synthetic")->capture_default_str();
    knots.add(c);
    c->add_option("--out", out, "output CSV (distance,correlation)")->capture_default_str();
    c->callback([this] { run(); });
  }

  void run() const {
    knots.validate();
    if (grid < 2) throw UsageError("--grid: must be >= 2");
    if (grid > kMaxGridSide) throw Error(ErrorKind::capability, "--grid exceeds the desk-scale cap");
    if (!(nu > 0.0)) throw UsageError("--nu: must be > 0");
    const auto locs = unit_grid(grid);
    const KnotSet ks = knots.build();
    const SparseMatrix s = build_basis(locs, ks, {knots.bandwidth});
    DenseMatrix sigma_f;
    DenseMatrix k0;
    if (synthetic) {
      const std::size_t m = ks.size();
      SplitMix64 rng(seed);
      DenseMatrix a(m, m);
      for (std::size_t j = 0; j < m; ++j)
        for (std::size_t i = 0; i < m; ++i) a(i, j) = rng.normal();
      k0 = DenseMatrix(m, m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < m; ++j) {
          double v = i == j ? 0.5 : 0.0;
          for (std::size_t l = 0; l < m; ++l) v += a(i, l) * a(j, l) / static_cast<double>(m);
          k0(i, j) = v;
        }
      const DenseMatrix sd = s.to_dense();
      const DenseMatrix sk = matmul(sd, k0);
      sigma_f = matmul(sk, sd.transpose());
    } else {
      sigma_f = cov_matrix({nu, 1.0, calibrate ? calibrate_theta(nu, 0.2, 1.0 / 3.0) : theta}, locs, locs);
    }
    const DenseMatrix k = empirical_K(s, sigma_f);
    const auto prof = k_correlation_profile(k, ks);
    auto os = open_out(out);
    os << "distance,correlation\n";
    for (const auto& p : prof) os << csv::fmt(p.distance) << ',' << csv::fmt(p.correlation) << '\n';
    if (synthetic) {
      const auto want = k_correlation_profile(k0, ks);
      double worst = 0.0;
      for (std::size_t i = 0; i < prof.size(); ++i)
        worst = std::max(worst, std::abs(prof[i].correlation - want[i].correlation));
      std::printf("max_abs_diff = %.3e\n", worst);
    }
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Reduced-basis kriging"};
  app.require_subcommand(1);
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
  app.set_help_all_flag("--help-all", "help for every subcommand");
  app.footer("Every subcommand accepts --config FILE with 'key = value' lines; flags override the file.");

  SimulateCmd simulate;
  FitCmd fit_cmd;
  PredictCmd predict;
  DetrendCmd detrend_cmd;
  AddBackCmd add_back_cmd;
  SelectCmd select;
  BenchCmd bench;
  StudyKCmd study_k;
  simulate.add(app);
  fit_cmd.add(app);
  predict.add(app);
  detrend_cmd.add(app);
  add_back_cmd.add(app);
  select.add(app);
  bench.add(app);
  study_k.add(app);

  try {
    std::vector<std::string> args = expand_config(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI11 consumes a reversed vector
    app.parse(args);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kOk : kUsage;
  } catch (const UsageError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return exit_code(e.kind());
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kNumerical;
  }
  return kOk;
}
