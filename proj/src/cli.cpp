#include "rmpc/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "rmpc/theory.hpp"

namespace rmpc::cli {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Config parsing

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, value] : j.items())
    if (!ok.contains(key)) throw ConfigError(where + ": unknown key '" + key + "'");
}

double get_double(const json& j, const std::string& where) {
  if (!j.is_number()) throw ConfigError(where + ": expected a number");
  const double v = j.get<double>();
  if (!std::isfinite(v)) throw ConfigError(where + ": expected a finite number");
  return v;
}

std::uint64_t get_uint(const json& j, const std::string& where) {
  if (j.is_number_unsigned()) return j.get<std::uint64_t>();
  if (j.is_number_integer() && j.get<std::int64_t>() >= 0) return j.get<std::uint64_t>();
  throw ConfigError(where + ": expected a non-negative integer");
}

std::size_t get_size(const json& j, const std::string& where) {
  return static_cast<std::size_t>(get_uint(j, where));
}

Vector get_vector(const json& j, const std::string& where) {
  if (!j.is_array()) throw ConfigError(where + ": expected an array of numbers");
  Vector v;
  for (std::size_t k = 0; k < j.size(); ++k)
    v.push_back(get_double(j[k], where + "[" + std::to_string(k) + "]"));
  return v;
}

std::vector<Vector> get_rows(const json& j, const std::string& where) {
  if (!j.is_array() || j.empty()) throw ConfigError(where + ": expected a non-empty array");
  std::vector<Vector> rows;
  for (std::size_t k = 0; k < j.size(); ++k)
    rows.push_back(get_vector(j[k], where + "[" + std::to_string(k) + "]"));
  return rows;
}

SyntheticRows parse_synthetic(const json& j, const std::string& where) {
  check_keys(j, {"dim", "rows", "seed"}, where);
  for (const char* k : {"dim", "rows", "seed"})
    if (!j.contains(k)) throw ConfigError(where + ": missing '" + k + "'");
  SyntheticRows s{get_size(j["dim"], where + ".dim"), get_size(j["rows"], where + ".rows"),
                  get_uint(j["seed"], where + ".seed")};
  if (s.dim == 0 || s.rows == 0) throw ConfigError(where + ": dim and rows must be >= 1");
  return s;
}

EnsembleSpec parse_ensemble(const json& j) {
  const std::string where = "ensemble";
  if (!j.is_object() || !j.contains("kind") || !j["kind"].is_string())
    throw ConfigError(where + ": needs a string 'kind'");
  const std::string kind = j["kind"].get<std::string>();
  EnsembleSpec e;
  if (kind == "finite-support") {
    check_keys(j, {"kind", "atoms"}, where);
    e.kind = EnsembleKind::FiniteSupport;
    if (!j.contains("atoms") || !j["atoms"].is_array() || j["atoms"].empty())
      throw ConfigError(where + ".atoms: expected a non-empty array");
    for (std::size_t k = 0; k < j["atoms"].size(); ++k) {
      const std::string w = where + ".atoms[" + std::to_string(k) + "]";
      const json& a = j["atoms"][k];
      check_keys(a, {"matrix", "probability"}, w);
      if (!a.contains("matrix") || !a.contains("probability"))
        throw ConfigError(w + ": needs 'matrix' and 'probability'");
      e.atoms.push_back({get_rows(a["matrix"], w + ".matrix"),
                         get_double(a["probability"], w + ".probability")});
    }
  } else if (kind == "rank-one-rows") {
    check_keys(j, {"kind", "rows", "synthetic"}, where);
    e.kind = EnsembleKind::RankOneRows;
    if (j.contains("rows") == j.contains("synthetic"))
      throw ConfigError(where + ": give exactly one of 'rows' and 'synthetic'");
    if (j.contains("rows")) e.rows = get_rows(j["rows"], where + ".rows");
    else e.synthetic = parse_synthetic(j["synthetic"], where + ".synthetic");
  } else if (kind == "sphere-rank-one") {
    check_keys(j, {"kind", "dim"}, where);
    e.kind = EnsembleKind::SphereRankOne;
    if (!j.contains("dim")) throw ConfigError(where + ": missing 'dim'");
    e.dim = get_size(j["dim"], where + ".dim");
    if (e.dim == 0) throw ConfigError(where + ".dim must be >= 1");
  } else {
    throw ConfigError(where + ": unknown kind '" + kind + "'");
  }
  return e;
}

ProblemSpec parse_problem(const json& j) {
  const std::string where = "kaczmarz";
  check_keys(j, {"rows", "x_star", "synthetic", "x0", "delta", "runs"}, where);
  ProblemSpec p;
  if (j.contains("synthetic")) {
    if (j.contains("rows") || j.contains("x_star"))
      throw ConfigError(where + ": 'synthetic' excludes 'rows' and 'x_star'");
    p.synthetic = parse_synthetic(j["synthetic"], where + ".synthetic");
  } else {
    if (!j.contains("rows") || !j.contains("x_star"))
      throw ConfigError(where + ": needs 'rows' and 'x_star', or 'synthetic'");
    p.rows = get_rows(j["rows"], where + ".rows");
    p.x_star = get_vector(j["x_star"], where + ".x_star");
  }
  if (j.contains("x0")) p.x0 = get_vector(j["x0"], where + ".x0");
  if (j.contains("delta")) p.delta = get_double(j["delta"], where + ".delta");
  if (!(p.delta > 0.0 && p.delta < 1.0)) throw ConfigError(where + ".delta must lie in (0, 1)");
  if (j.contains("runs")) p.runs = get_size(j["runs"], where + ".runs");
  return p;
}

json synthetic_json(const SyntheticRows& s) {
  return {{"dim", s.dim}, {"rows", s.rows}, {"seed", s.seed}};
}

// ---------------------------------------------------------------------------
// Output helpers

std::string fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

std::string short_fmt(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.6g", x);
  return buf;
}

std::string join(const Vector& v) {
  std::string s;
  for (std::size_t k = 0; k < v.size(); ++k) s += (k ? ", " : "") + short_fmt(v[k]);
  return s;
}

std::optional<std::filesystem::path> output_dir(const RunConfig& c) {
  if (!c.out) return std::nullopt;
  std::filesystem::path dir(*c.out);
  std::filesystem::create_directories(dir);
  return dir;
}

void write_file(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << text;
}

void write_report(const RunConfig& c, const char* command, json results) {
  const auto dir = output_dir(c);
  if (!dir) return;
  json report = {{"command", command},
                 {"config", to_json(c)},
                 {"seed", c.seed ? json(*c.seed) : json(nullptr)},
                 {"results", std::move(results)}};
  write_file(*dir / "report.json", report.dump(2) + "\n");
}

std::uint64_t require_seed(const RunConfig& c, const char* command) {
  if (!c.seed) throw ConfigError(std::string(command) + " needs an explicit seed (--seed)");
  return *c.seed;
}

const EnsembleSpec& require_ensemble(const RunConfig& c) {
  if (!c.ensemble) throw ConfigError("config has no 'ensemble' section");
  return *c.ensemble;
}

// Stream reserved for estimating c_i on continuous laws, disjoint from trial streams.
constexpr std::uint64_t kCEstimateStream = 0x8000'0000'0000'0000ull;

struct Model {
  Ensemble ensemble;
  Spectrum spectrum;
  TheoryParams params;
};

Model build_model(const RunConfig& c, const char* command) {
  Ensemble e = build_ensemble(require_ensemble(c));
  if (!e.has_finite_support()) require_seed(c, command);
  if (!(e.radius() > 0.0)) throw ConfigError("ensemble radius is zero; every factor vanishes");
  const double alpha = resolve_alpha(c, e.radius());
  if (!validate_alpha(alpha, e.radius())) {
    std::ostringstream msg;
    msg << "alpha = " << alpha << " violates the step-size hypothesis: alpha must lie in the "
        << "open interval (0, 1/(2r)) = (0, " << 1.0 / (2.0 * e.radius()) << ") for r = "
        << e.radius();
    throw ConfigError(msg.str());
  }
  CEstimateOptions opts{c.c_samples, {c.seed.value_or(0), kCEstimateStream}};
  auto [s, p] = analyze(e, alpha, opts, c.sigma2_override);
  return {std::move(e), std::move(s), std::move(p)};
}

void print_theory(const Model& m, const RunConfig& c, std::ostream& out) {
  const TheoryParams& p = m.params;
  out << "ensemble      " << to_string(m.ensemble.kind()) << ", d = " << p.dim() << "\n"
      << "r             " << short_fmt(p.r) << "\n"
      << "alpha         " << short_fmt(p.alpha) << " (valid: 0 < alpha < " << short_fmt(0.5 / p.r)
      << ")\n"
      << "lambda        " << join(p.lambdas) << "\n"
      << "c             " << join(p.c) << (p.c_exact ? " (exact)" : " (sampled estimate)") << "\n"
      << "q             " << join(p.q) << "\n"
      << "sigma2        " << short_fmt(p.sigma2)
      << (c.sigma2_override ? " (overridden in config)" : "") << "\n";
  if (!p.c_exact)
    out << "warning: c_i estimated as a maximum over " << c.c_samples
        << " samples; this under-estimates the almost-sure constant\n";
}

json theory_json(const TheoryParams& p) {
  return {{"alpha", p.alpha}, {"r", p.r},           {"lambda", p.lambdas},
          {"c", p.c},         {"c_exact", p.c_exact}, {"q", p.q},
          {"sigma2", p.sigma2}};
}

std::string tail_csv(const TailCurve& mc, const std::optional<TailCurve>& exact) {
  std::ostringstream csv;
  csv << "t,empirical_tail,ci_low,ci_high,exact_tail,theory_bound,norm_kind\n";
  for (std::size_t g = 0; g < mc.thresholds.size(); ++g) {
    csv << fmt(mc.thresholds[g]) << ',' << fmt(mc.tail[g]) << ',' << fmt(mc.ci_low[g]) << ','
        << fmt(mc.ci_high[g]) << ',' << (exact ? fmt(exact->tail[g]) : std::string()) << ','
        << fmt(mc.bound[g]) << ',' << to_string(mc.norm_kind) << '\n';
  }
  return csv.str();
}

}  // namespace

// ---------------------------------------------------------------------------

RunConfig parse_config(const json& j) {
  check_keys(j,
             {"schema", "ensemble", "alpha", "alpha_times_r", "n", "trials", "seed", "t_grid",
              "norm", "out", "threads", "sigma2_override", "c_samples", "martingale", "kaczmarz"},
             "config");
  if (!j.contains("schema") || j["schema"] != kSchemaVersion)
    throw ConfigError(std::string("config: 'schema' must be \"") + kSchemaVersion + "\"");
  RunConfig c;
  if (j.contains("ensemble")) c.ensemble = parse_ensemble(j["ensemble"]);
  if (j.contains("alpha") && j.contains("alpha_times_r"))
    throw ConfigError("config: give at most one of 'alpha' and 'alpha_times_r'");
  if (j.contains("alpha")) c.alpha = get_double(j["alpha"], "alpha");
  if (j.contains("alpha_times_r")) c.alpha_times_r = get_double(j["alpha_times_r"], "alpha_times_r");
  if (j.contains("n")) c.n = get_size(j["n"], "n");
  if (j.contains("trials")) c.trials = get_size(j["trials"], "trials");
  if (c.trials == 0) throw ConfigError("trials must be >= 1");
  if (j.contains("seed") && !j["seed"].is_null()) c.seed = get_uint(j["seed"], "seed");
  if (j.contains("t_grid")) {
    const json& g = j["t_grid"];
    check_keys(g, {"min", "max", "count"}, "t_grid");
    if (g.contains("min")) c.t_grid.min = get_double(g["min"], "t_grid.min");
    if (g.contains("max")) c.t_grid.max = get_double(g["max"], "t_grid.max");
    if (g.contains("count")) c.t_grid.count = get_size(g["count"], "t_grid.count");
  }
  if (c.t_grid.count == 0 || c.t_grid.min < 0.0 || c.t_grid.max < c.t_grid.min)
    throw ConfigError("t_grid: need 0 <= min <= max and count >= 1");
  if (j.contains("norm")) {
    if (!j["norm"].is_string()) throw ConfigError("norm: expected \"op\" or \"fro\"");
    const auto kind = parse_norm_kind(j["norm"].get<std::string>());
    if (!kind) throw ConfigError("norm: expected \"op\" or \"fro\"");
    c.norm = *kind;
  }
  if (j.contains("out")) {
    if (!j["out"].is_string()) throw ConfigError("out: expected a path string");
    c.out = j["out"].get<std::string>();
  }
  if (j.contains("threads")) {
    c.threads = static_cast<unsigned>(get_uint(j["threads"], "threads"));
    if (c.threads == 0) throw ConfigError("threads must be >= 1");
  }
  if (j.contains("sigma2_override") && !j["sigma2_override"].is_null()) {
    c.sigma2_override = get_double(j["sigma2_override"], "sigma2_override");
    if (*c.sigma2_override < 0.0) throw ConfigError("sigma2_override must be >= 0");
  }
  if (j.contains("c_samples")) c.c_samples = get_size(j["c_samples"], "c_samples");
  if (j.contains("martingale")) {
    const json& m = j["martingale"];
    check_keys(m, {"i", "j", "depth", "trajectories"}, "martingale");
    if (m.contains("i")) c.martingale.i = get_size(m["i"], "martingale.i");
    if (m.contains("j")) c.martingale.j = get_size(m["j"], "martingale.j");
    if (m.contains("depth")) c.martingale.depth = get_size(m["depth"], "martingale.depth");
    if (m.contains("trajectories"))
      c.martingale.trajectories = get_size(m["trajectories"], "martingale.trajectories");
  }
  if (j.contains("kaczmarz")) c.kaczmarz = parse_problem(j["kaczmarz"]);
  return c;
}

RunConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file '" + path + "'");
  json j;
  try {
    j = json::parse(f);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "' is not valid JSON: " + e.what());
  }
  return parse_config(j);
}

json to_json(const RunConfig& c) {
  json j;
  j["schema"] = kSchemaVersion;
  if (c.ensemble) {
    const EnsembleSpec& e = *c.ensemble;
    json ej = {{"kind", to_string(e.kind)}};
    switch (e.kind) {
      case EnsembleKind::FiniteSupport: {
        json atoms = json::array();
        for (const AtomSpec& a : e.atoms)
          atoms.push_back({{"matrix", a.matrix}, {"probability", a.probability}});
        ej["atoms"] = atoms;
        break;
      }
      case EnsembleKind::RankOneRows:
        if (e.synthetic) ej["synthetic"] = synthetic_json(*e.synthetic);
        else ej["rows"] = e.rows;
        break;
      case EnsembleKind::SphereRankOne:
        ej["dim"] = e.dim;
        break;
    }
    j["ensemble"] = ej;
  }
  if (c.alpha) j["alpha"] = *c.alpha;
  if (c.alpha_times_r) j["alpha_times_r"] = *c.alpha_times_r;
  j["n"] = c.n;
  j["trials"] = c.trials;
  if (c.seed) j["seed"] = *c.seed;
  j["t_grid"] = {{"min", c.t_grid.min}, {"max", c.t_grid.max}, {"count", c.t_grid.count}};
  j["norm"] = to_string(c.norm);
  if (c.out) j["out"] = *c.out;
  j["threads"] = c.threads;
  if (c.sigma2_override) j["sigma2_override"] = *c.sigma2_override;
  j["c_samples"] = c.c_samples;
  j["martingale"] = {{"i", c.martingale.i},
                     {"j", c.martingale.j},
                     {"depth", c.martingale.depth},
                     {"trajectories", c.martingale.trajectories}};
  if (c.kaczmarz) {
    const ProblemSpec& p = *c.kaczmarz;
    json pj;
    if (p.synthetic) {
      pj["synthetic"] = synthetic_json(*p.synthetic);
    } else {
      pj["rows"] = p.rows;
      pj["x_star"] = p.x_star;
    }
    if (p.x0) pj["x0"] = *p.x0;
    pj["delta"] = p.delta;
    pj["runs"] = p.runs;
    j["kaczmarz"] = pj;
  }
  return j;
}

Ensemble build_ensemble(const EnsembleSpec& spec) {
  try {
    switch (spec.kind) {
      case EnsembleKind::FiniteSupport: {
        std::vector<Atom> atoms;
        for (const AtomSpec& a : spec.atoms)
          atoms.push_back({SymMatrix::from_matrix(Matrix::from_rows(a.matrix)), a.probability});
        return Ensemble::finite_support(std::move(atoms));
      }
      case EnsembleKind::RankOneRows:
        if (spec.synthetic)
          return Ensemble::rank_one_rows(
              unit_gaussian_rows(spec.synthetic->dim, spec.synthetic->rows, spec.synthetic->seed));
        return Ensemble::rank_one_rows(spec.rows);
      case EnsembleKind::SphereRankOne:
        return Ensemble::sphere_rank_one(spec.dim);
    }
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("ensemble: ") + e.what());
  }
  throw ConfigError("ensemble: unknown kind");
}

LeastSquaresProblem build_problem(const ProblemSpec& spec) {
  try {
    if (spec.synthetic)
      return LeastSquaresProblem::synthetic(spec.synthetic->dim, spec.synthetic->rows,
                                            spec.synthetic->seed);
    return LeastSquaresProblem::from_solution(spec.rows, spec.x_star);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("kaczmarz: ") + e.what());
  }
}

double resolve_alpha(const RunConfig& c, double r) {
  if (c.alpha) return *c.alpha;
  if (c.alpha_times_r) return *c.alpha_times_r / r;
  throw ConfigError("config needs 'alpha' or 'alpha_times_r'");
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_bound(const RunConfig& c, Streams io) {
  const Model m = build_model(c, "bound");
  print_theory(m, c, io.out);
  const Vector grid = linear_grid(c.t_grid.min, c.t_grid.max, c.t_grid.count);
  Vector bound;
  for (double t : grid) bound.push_back(tail_bound(t, m.params.alpha, m.params.dim(), m.params.sigma2));

  io.out << "\n        t    bound\n";
  for (std::size_t g = 0; g < grid.size(); ++g)
    io.out << std::setw(9) << short_fmt(grid[g]) << "    " << short_fmt(bound[g]) << "\n";

  if (const auto dir = output_dir(c)) {
    std::ostringstream csv;
    csv << "t,theory_bound\n";
    for (std::size_t g = 0; g < grid.size(); ++g) csv << fmt(grid[g]) << ',' << fmt(bound[g]) << '\n';
    write_file(*dir / "bound.csv", csv.str());
  }
  write_report(c, "bound", {{"theory", theory_json(m.params)}, {"t", grid}, {"bound", bound}});
  return kExitOk;
}

int cmd_verify(const RunConfig& c, Streams io, bool verbose) {
  const std::uint64_t seed = require_seed(c, "verify");
  const Model m = build_model(c, "verify");
  print_theory(m, c, io.out);
  const Vector grid = linear_grid(c.t_grid.min, c.t_grid.max, c.t_grid.count);
  const McOptions mc{c.trials, seed, c.threads};

  const TailCurve curve = estimate_tail(m.ensemble, m.spectrum, m.params, c.n, grid, c.norm, mc);
  std::optional<TailCurve> exact;
  if (m.ensemble.has_finite_support()) {
    try {
      exact = brute_force_tail(m.ensemble, m.spectrum, m.params, c.n, grid, c.norm).curve;
    } catch (const EnumerationBudgetError& e) {
      io.out << "exact column skipped: " << e.what() << "\n";
    }
  }

  bool pass = true;
  std::size_t mc_violations = 0;
  std::size_t exact_violations = 0;
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (curve.ci_low[g] > curve.bound[g]) ++mc_violations;
    if (exact && exact->tail[g] > curve.bound[g]) ++exact_violations;
  }
  pass = mc_violations == 0 && exact_violations == 0;

  io.out << "\nn = " << c.n << ", trials = " << c.trials << ", seed = " << seed
         << ", norm = " << to_string(c.norm) << "\n";
  io.out << "        t    empirical   ci_low      ci_high     exact       bound\n";
  for (std::size_t g = 0; g < grid.size(); ++g) {
    io.out << std::setw(9) << short_fmt(grid[g]) << "    " << std::left << std::setw(12)
           << short_fmt(curve.tail[g]) << std::setw(12) << short_fmt(curve.ci_low[g])
           << std::setw(12) << short_fmt(curve.ci_high[g]) << std::setw(12)
           << (exact ? short_fmt(exact->tail[g]) : std::string("-")) << short_fmt(curve.bound[g])
           << std::right << "\n";
  }

  json results = {{"theory", theory_json(m.params)},
                  {"pass", pass},
                  {"mc_violations", mc_violations},
                  {"exact_violations", exact_violations},
                  {"exact_available", exact.has_value()}};

  if (verbose) {
    const NormKind other = c.norm == NormKind::Operator ? NormKind::Frobenius : NormKind::Operator;
    const TailCurve alt = estimate_tail(m.ensemble, m.spectrum, m.params, c.n, grid, other, mc);
    io.out << "\nsame trials measured in the " << to_string(other) << " norm:\n";
    for (std::size_t g = 0; g < grid.size(); ++g)
      io.out << std::setw(9) << short_fmt(grid[g]) << "    " << short_fmt(alt.tail[g]) << "\n";
    results["alternate_norm"] = {{"norm", to_string(other)}, {"tail", alt.tail}};
  }

  if (const auto dir = output_dir(c)) write_file(*dir / "tail_curve.csv", tail_csv(curve, exact));
  write_report(c, "verify", results);

  if (!pass) {
    io.err << "FAIL: tail exceeds the theoretical bound (" << mc_violations
           << " Monte Carlo lower limits, " << exact_violations << " exact values)\n";
    return kExitViolation;
  }
  io.out << "PASS: empirical tail is consistent with the bound at every t\n";
  return kExitOk;
}

int cmd_martingale(const RunConfig& c, Streams io) {
  const Model m = build_model(c, "martingale");
  if (!m.ensemble.has_finite_support())
    throw ConfigError("martingale needs a finite-support or rank-one-rows ensemble");
  const auto [i, j, depth, count] = c.martingale;
  const std::size_t d = m.params.dim();
  if (i >= d || j >= d) throw ConfigError("martingale: indices must be < d = " + std::to_string(d));
  if (is_zero_eigenvalue(m.params.lambdas[i], m.params.lambdas[0]))
    throw ConfigError("martingale: lambda_" + std::to_string(i) +
                      " is zero, so q_i = 1, c_i = 0 and Y_k is almost surely constant; "
                      "the trace is degenerate and is not computed");
  print_theory(m, c, io.out);

  const double residual = martingale_property_test(m.ensemble, m.spectrum, m.params, i, j, depth);
  double worst_excess = -INFINITY;
  std::size_t unbounded = 0;
  if (count > 0) {
    const std::uint64_t seed = require_seed(c, "martingale");
    for (std::size_t t = 0; t < count; ++t) {
      const Trajectory traj = run_trajectory(m.ensemble, m.params.alpha, c.n, {seed, t}, true);
      const MartingaleTrace tr = martingale_trace(traj, m.spectrum, m.params, i, j);
      worst_excess = std::max(worst_excess, tr.max_excess);
      if (!tr.bounded()) ++unbounded;
    }
  }

  io.out << "\n(i, j) = (" << i << ", " << j << "), depth = " << depth << "\n"
         << "max |E[Y_k | history] - Y_{k-1}|  " << short_fmt(residual) << "\n";
  if (count > 0)
    io.out << "trajectories replayed              " << count << " (n = " << c.n << ")\n"
           << "max (|Y_k - Y_{k-1}| - allowed)    " << short_fmt(worst_excess) << "\n"
           << "steps out of bound                 " << unbounded << "\n";

  json results = {{"theory", theory_json(m.params)},
                  {"residual", residual},
                  {"trajectories", count},
                  {"unbounded_trajectories", unbounded}};
  if (count > 0) results["max_step_excess"] = worst_excess;
  const bool pass = residual <= 1e-12 && unbounded == 0;
  results["pass"] = pass;
  write_report(c, "martingale", results);
  if (!pass) {
    io.err << "FAIL: martingale property or bounded differences violated\n";
    return kExitViolation;
  }
  io.out << "PASS\n";
  return kExitOk;
}

int cmd_kaczmarz(const RunConfig& c, Streams io) {
  if (!c.kaczmarz) throw ConfigError("kaczmarz needs a 'kaczmarz' section");
  const ProblemSpec& spec = *c.kaczmarz;
  const std::uint64_t seed = require_seed(c, "kaczmarz");
  const LeastSquaresProblem prob = build_problem(spec);
  const Vector x0 = spec.x0.value_or(Vector(prob.dim(), 0.0));
  if (x0.size() != prob.dim()) throw ConfigError("kaczmarz.x0 length must equal d");

  const Ensemble e = prob.ensemble();
  const double alpha = resolve_alpha(c, e.radius());
  if (!validate_alpha(alpha, e.radius())) {
    std::ostringstream msg;
    msg << "alpha = " << alpha << " violates 0 < alpha < 1/(2 max ||a_j||^2) = "
        << 0.5 / e.radius();
    throw ConfigError(msg.str());
  }
  const TheoryParams params = analyze(e, alpha).second;

  const SgdPath path = sgd_run(prob, x0, alpha, c.n, seed);
  const double residual = error_propagation_check(prob, x0, alpha, c.n, seed);

  Vector e0(prob.dim());
  for (std::size_t k = 0; k < e0.size(); ++k) e0[k] = x0[k] - prob.x_star[k];
  const double e0_norm = norm2(e0);

  auto error_at = [&](const Vector& x) {
    Vector diff(x.size());
    for (std::size_t k = 0; k < x.size(); ++k) diff[k] = x[k] - prob.x_star[k];
    return norm2(diff);
  };

  std::ostringstream csv;
  csv << "k,observed_error,certified_radius\n";
  for (std::size_t k = 0; k <= c.n; ++k) {
    const Certificate cert = certificate(params, k, spec.delta);
    csv << k << ',' << fmt(error_at(path.iterates[k])) << ',' << fmt(cert.radius * e0_norm) << '\n';
  }

  // Coverage over independent runs; run r uses seed + 1 + r.
  const Certificate final_cert = certificate(params, c.n, spec.delta);
  std::size_t covered = 0;
  for (std::size_t r = 0; r < spec.runs; ++r) {
    const SgdPath run = sgd_run(prob, x0, alpha, c.n, seed + 1 + r);
    if (error_at(run.iterates.back()) <= final_cert.radius * e0_norm) ++covered;
  }
  const double coverage =
      spec.runs ? static_cast<double>(covered) / static_cast<double>(spec.runs) : 1.0;

  io.out << "problem       d = " << prob.dim() << ", m = " << prob.size() << "\n"
         << "alpha         " << short_fmt(alpha) << "\n"
         << "sigma2        " << short_fmt(params.sigma2) << "\n"
         << "delta         " << short_fmt(spec.delta) << "\n"
         << "deviation t   " << short_fmt(final_cert.deviation)
         << (final_cert.vacuous ? " (vacuous: t >= 1)" : "") << "\n"
         << "radius(n)     " << short_fmt(final_cert.radius) << " x ||e_0||\n"
         << "||e_n||       " << short_fmt(error_at(path.iterates.back())) << " (||e_0|| = "
         << short_fmt(e0_norm) << ")\n"
         << "identity err  " << short_fmt(residual) << "\n"
         << "coverage      " << covered << " / " << spec.runs << " = " << short_fmt(coverage)
         << "\n";

  if (const auto dir = output_dir(c)) write_file(*dir / "kaczmarz.csv", csv.str());
  const bool pass = residual <= 1e-12;
  write_report(c, "kaczmarz",
               {{"theory", theory_json(params)},
                {"identity_residual", residual},
                {"deviation", final_cert.deviation},
                {"radius", final_cert.radius},
                {"vacuous", final_cert.vacuous},
                {"coverage", coverage},
                {"pass", pass}});
  if (!pass) {
    io.err << "FAIL: error recursion e_k = Z_k e_0 violated by " << residual << "\n";
    return kExitViolation;
  }
  return kExitOk;
}

// ---------------------------------------------------------------------------

int run(const std::vector<std::string>& args, Streams io) {
  CLI::App app{"Random matrix product concentration laboratory"};
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<double> alpha;
  std::optional<std::size_t> n, trials, dim;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out, norm;
  std::optional<unsigned> threads;
  bool dump = false;
  bool verbose = false;

  app.add_option("--config", config_path, "Experiment config (JSON)")->required();
  app.add_option("--alpha", alpha, "Step size");
  app.add_option("--n", n, "Number of factors in the product");
  app.add_option("--trials", trials, "Monte Carlo trials");
  app.add_option("--seed", seed, "Random seed");
  app.add_option("--dim", dim, "Dimension (sphere or synthetic ensembles)");
  app.add_option("--out", out, "Output directory for CSV and report files");
  app.add_option("--threads", threads, "Worker threads (results do not depend on it)");
  app.add_option("--norm", norm, "Deviation norm")->check(CLI::IsMember({"op", "fro"}));
  app.add_flag("--dump-config", dump, "Print the effective config and exit");
  app.add_flag("--verbose", verbose, "Report both deviation norms");

  for (const char* name : {"bound", "verify", "martingale", "kaczmarz"}) app.add_subcommand(name);

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::CallForHelp&) {
    io.out << app.help();
    return kExitOk;
  } catch (const CLI::ParseError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  }
  const std::string command = app.get_subcommands().front()->get_name();

  try {
    RunConfig c = load_config(config_path);
    if (alpha) {
      c.alpha = *alpha;
      c.alpha_times_r.reset();
    }
    if (n) c.n = *n;
    if (trials) {
      if (*trials == 0) throw ConfigError("--trials must be >= 1");
      c.trials = *trials;
    }
    if (seed) c.seed = *seed;
    if (out) c.out = *out;
    if (threads) {
      if (*threads == 0) throw ConfigError("--threads must be >= 1");
      c.threads = *threads;
    }
    if (norm) c.norm = *parse_norm_kind(*norm);
    if (dim) {
      bool applied = false;
      if (c.ensemble && c.ensemble->kind == EnsembleKind::SphereRankOne) {
        c.ensemble->dim = *dim;
        applied = true;
      } else if (c.ensemble && c.ensemble->synthetic) {
        c.ensemble->synthetic->dim = *dim;
        applied = true;
      }
      if (c.kaczmarz && c.kaczmarz->synthetic) {
        c.kaczmarz->synthetic->dim = *dim;
        if (c.kaczmarz->x0) c.kaczmarz->x0->resize(*dim, 0.0);
        applied = true;
      }
      if (!applied || *dim == 0)
        throw ConfigError("--dim applies only to sphere-rank-one or synthetic ensembles");
    }
    // Validates the overridden config against the schema once more.
    c = parse_config(to_json(c));

    if (dump) {
      io.out << to_json(c).dump(2) << "\n";
      return kExitOk;
    }
    if (command == "bound") return cmd_bound(c, io);
    if (command == "verify") return cmd_verify(c, io, verbose);
    if (command == "martingale") return cmd_martingale(c, io);
    return cmd_kaczmarz(c, io);
  } catch (const ConfigError& e) {
    io.err << "config error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const EnumerationBudgetError& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const UnsupportedEnsemble& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    io.err << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    io.err << "invariant failure: " << e.what() << "\n";
    return kExitViolation;
  }
}

}  // namespace rmpc::cli
