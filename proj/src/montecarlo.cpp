#include "rmpc/montecarlo.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <mutex>
#include <sstream>
#include <thread>

#include <boost/math/special_functions/beta.hpp>

namespace rmpc {

namespace {

constexpr std::size_t kBlockTrials = 256;

// out = a * b; out must not alias a or b.
void multiply_into(const Matrix& a, const Matrix& b, Matrix& out) {
  const std::size_t d = a.dim();
  auto o = out.data();
  std::fill(o.begin(), o.end(), 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) out(i, j) += aik * b(k, j);
    }
}

Matrix factor(const SymMatrix& x, double alpha) {
  Matrix f = Matrix::identity(x.dim());
  f -= alpha * x.matrix();
  return f;
}

void require_alpha(const Ensemble& e, double alpha) {
  if (!validate_alpha(alpha, e.radius())) {
    std::ostringstream msg;
    msg << "alpha = " << alpha << " is outside (0, 1/(2r)) with r = " << e.radius();
    throw std::invalid_argument(msg.str());
  }
}

void require_grid(std::span<const double> t_grid) {
  for (std::size_t g = 0; g < t_grid.size(); ++g) {
    if (!std::isfinite(t_grid[g]) || t_grid[g] < 0.0)
      throw std::invalid_argument("thresholds must be finite and non-negative");
    if (g > 0 && t_grid[g] < t_grid[g - 1])
      throw std::invalid_argument("thresholds must be sorted ascending");
  }
}

// Number of grid points <= value; the event {value >= t_g} holds for exactly
// those g.
std::size_t grid_rank(std::span<const double> t_grid, double value) {
  return static_cast<std::size_t>(std::upper_bound(t_grid.begin(), t_grid.end(), value) -
                                  t_grid.begin());
}

std::size_t block_count(std::size_t trials) { return (trials + kBlockTrials - 1) / kBlockTrials; }

TailCurve curve_from_counts(std::span<const double> t_grid, std::span<const std::uint64_t> hist,
                            std::size_t trials, NormKind kind) {
  TailCurve c;
  c.thresholds.assign(t_grid.begin(), t_grid.end());
  c.norm_kind = kind;
  c.trials = trials;
  const std::size_t g_count = t_grid.size();
  std::uint64_t above = 0;
  std::vector<std::uint64_t> counts(g_count);
  for (std::size_t g = g_count; g-- > 0;) {
    above += hist[g + 1];
    counts[g] = above;
  }
  for (std::size_t g = 0; g < g_count; ++g) {
    c.tail.push_back(static_cast<double>(counts[g]) / static_cast<double>(trials));
    const Interval ci = clopper_pearson(counts[g], trials);
    c.ci_low.push_back(ci.low);
    c.ci_high.push_back(ci.high);
  }
  return c;
}

// Runs per-block histogram jobs and sums them in block order.
template <typename BlockFn>
std::vector<std::uint64_t> reduce_histograms(std::size_t trials, std::size_t bins,
                                             unsigned threads, BlockFn&& fn) {
  const std::size_t blocks = block_count(trials);
  std::vector<std::vector<std::uint64_t>> partial(blocks, std::vector<std::uint64_t>(bins, 0));
  parallel_for_blocks(blocks, threads, [&](std::size_t b) {
    const std::size_t begin = b * kBlockTrials;
    const std::size_t end = std::min(trials, begin + kBlockTrials);
    for (std::size_t trial = begin; trial < end; ++trial) fn(trial, partial[b]);
  });
  std::vector<std::uint64_t> total(bins, 0);
  for (const auto& h : partial)
    for (std::size_t k = 0; k < bins; ++k) total[k] += h[k];
  return total;
}

}  // namespace

const char* to_string(NormKind kind) noexcept {
  return kind == NormKind::Operator ? "op" : "fro";
}

std::optional<NormKind> parse_norm_kind(std::string_view s) noexcept {
  if (s == "op") return NormKind::Operator;
  if (s == "fro") return NormKind::Frobenius;
  return std::nullopt;
}

double deviation_norm(const Matrix& m, NormKind kind) {
  return kind == NormKind::Operator ? operator_norm(m) : frobenius_norm(m);
}

void parallel_for_blocks(std::size_t blocks, unsigned threads,
                         const std::function<void(std::size_t)>& fn) {
  const std::size_t workers = std::min<std::size_t>(std::max(threads, 1u), blocks);
  if (workers <= 1) {
    for (std::size_t b = 0; b < blocks; ++b) fn(b);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  std::vector<std::thread> pool;
  pool.reserve(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&] {
      for (std::size_t b = next++; b < blocks; b = next++) {
        try {
          fn(b);
        } catch (...) {
          std::lock_guard lock(error_mutex);
          if (!error) error = std::current_exception();
          next = blocks;
        }
      }
    });
  }
  for (auto& t : pool) t.join();
  if (error) std::rethrow_exception(error);
}

Trajectory run_trajectory(const Ensemble& e, double alpha, std::size_t n, RngState state,
                          bool keep_partials) {
  require_alpha(e, alpha);
  const std::size_t d = e.dim();
  CounterRng rng(state);
  Trajectory t;
  Matrix z = Matrix::identity(d);
  Matrix next(d);
  if (keep_partials) {
    t.partials.reserve(n + 1);
    t.partials.push_back(z);
    t.factors.reserve(n);
  }
  if (e.has_finite_support()) {
    const auto& atoms = e.support();
    std::vector<Matrix> factors;
    factors.reserve(atoms.size());
    for (const Atom& a : atoms) factors.push_back(factor(a.matrix, alpha));
    t.atoms.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = e.draw_atom(rng);
      t.atoms.push_back(idx);
      multiply_into(factors[idx], z, next);
      std::swap(z, next);
      if (keep_partials) {
        t.factors.push_back(atoms[idx].matrix);
        t.partials.push_back(z);
      }
    }
  } else {
    for (std::size_t k = 0; k < n; ++k) {
      SymMatrix x = e.sample(rng);
      multiply_into(factor(x, alpha), z, next);
      std::swap(z, next);
      if (keep_partials) {
        t.factors.push_back(std::move(x));
        t.partials.push_back(z);
      }
    }
  }
  t.last = std::move(z);
  return t;
}

Trajectory replay_trajectory(const Ensemble& e, double alpha, std::span<const std::size_t> atoms) {
  require_alpha(e, alpha);
  const auto& support = e.support();
  Trajectory t;
  Matrix z = Matrix::identity(e.dim());
  t.partials.push_back(z);
  for (std::size_t idx : atoms) {
    if (idx >= support.size()) throw std::out_of_range("atom index outside the support");
    z = mat_mul(factor(support[idx].matrix, alpha), z);
    t.atoms.push_back(idx);
    t.factors.push_back(support[idx].matrix);
    t.partials.push_back(z);
  }
  t.last = std::move(z);
  return t;
}

Interval clopper_pearson(std::size_t successes, std::size_t trials, double confidence) {
  if (trials == 0 || successes > trials)
    throw std::invalid_argument("clopper_pearson: need 0 <= successes <= trials, trials >= 1");
  const double tail = 0.5 * (1.0 - confidence);
  const auto k = static_cast<double>(successes);
  const auto n = static_cast<double>(trials);
  Interval ci{0.0, 1.0};
  if (successes > 0) ci.low = boost::math::ibeta_inv(k, n - k + 1.0, tail);
  if (successes < trials) ci.high = boost::math::ibeta_inv(k + 1.0, n - k, 1.0 - tail);
  return ci;
}

Vector linear_grid(double lo, double hi, std::size_t count) {
  if (count == 0) throw std::invalid_argument("grid needs at least one point");
  if (count == 1) return {lo};
  Vector g(count);
  const double step = (hi - lo) / static_cast<double>(count - 1);
  for (std::size_t k = 0; k < count; ++k) g[k] = lo + step * static_cast<double>(k);
  g.back() = hi;
  return g;
}

BruteForceResult brute_force_tail(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                                  std::size_t n, std::span<const double> t_grid, NormKind kind,
                                  const PathObserver& observer) {
  require_alpha(e, p.alpha);
  require_grid(t_grid);
  const auto& atoms = e.support();
  const std::size_t m = atoms.size();

  std::uint64_t leaves = 1;
  for (std::size_t k = 0; k < n; ++k) {
    if (leaves > kEnumerationBudget / m) {
      std::ostringstream msg;
      msg << "exhaustive enumeration needs " << m << "^" << n << " paths, over the budget of "
          << kEnumerationBudget << "; use estimate_tail (Monte Carlo, --trials) instead";
      throw EnumerationBudgetError(msg.str());
    }
    leaves *= m;
  }

  const std::size_t d = e.dim();
  const Matrix expected = expected_product(s, p.alpha, n).matrix();
  std::vector<Matrix> factors;
  for (const Atom& a : atoms) factors.push_back(factor(a.matrix, p.alpha));

  std::vector<Matrix> z(n + 1, Matrix(d));
  z[0] = Matrix::identity(d);
  std::vector<double> prob(n + 1, 1.0);
  std::vector<std::size_t> path(n, 0);
  std::vector<double> hist(t_grid.size() + 1, 0.0);
  Matrix mean(d);
  std::uint64_t visited = 0;

  auto leaf = [&] {
    const double w = prob[n];
    Matrix dev = z[n] - expected;
    hist[grid_rank(t_grid, deviation_norm(dev, kind))] += w;
    Matrix contrib = z[n];
    contrib *= w;
    mean += contrib;
    ++visited;
    if (observer) observer(path, w);
  };

  // Iterative depth-first walk; path[level] is the atom taken at level.
  if (n == 0) {
    leaf();
  } else {
    std::size_t level = 0;
    bool more = true;
    while (more) {
      const std::size_t a = path[level];
      multiply_into(factors[a], z[level], z[level + 1]);
      prob[level + 1] = prob[level] * atoms[a].probability;
      if (level + 1 < n) {
        path[++level] = 0;
        continue;
      }
      leaf();
      // Backtrack to the deepest level with an untried atom.
      while (++path[level] == m) {
        if (level == 0) {
          more = false;
          break;
        }
        --level;
      }
    }
  }

  BruteForceResult r;
  r.paths = visited;
  r.mean_discrepancy = frobenius_norm(mean - expected);
  if (r.mean_discrepancy > 1e-10) {
    std::ostringstream msg;
    msg << "enumerated mean differs from (I - alpha Sigma)^n by " << r.mean_discrepancy;
    throw std::logic_error(msg.str());
  }

  TailCurve& c = r.curve;
  c.thresholds.assign(t_grid.begin(), t_grid.end());
  c.norm_kind = kind;
  double above = 0.0;
  c.tail.assign(t_grid.size(), 0.0);
  for (std::size_t g = t_grid.size(); g-- > 0;) {
    above += hist[g + 1];
    c.tail[g] = std::clamp(above, 0.0, 1.0);
  }
  for (double t : t_grid) c.bound.push_back(tail_bound(t, p.alpha, d, p.sigma2));
  return r;
}

TailCurve estimate_tail(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                        std::size_t n, std::span<const double> t_grid, NormKind kind,
                        const McOptions& options, const TrajectoryObserver& observer) {
  require_alpha(e, p.alpha);
  require_grid(t_grid);
  if (options.trials == 0) throw std::invalid_argument("trials must be >= 1");
  const Matrix expected = expected_product(s, p.alpha, n).matrix();
  const bool keep = static_cast<bool>(observer);

  auto hist = reduce_histograms(
      options.trials, t_grid.size() + 1, options.threads,
      [&](std::size_t trial, std::vector<std::uint64_t>& h) {
        Trajectory traj = run_trajectory(e, p.alpha, n, {options.seed, trial}, keep);
        ++h[grid_rank(t_grid, deviation_norm(traj.last - expected, kind))];
        if (keep) observer(trial, traj);
      });

  TailCurve c = curve_from_counts(t_grid, hist, options.trials, kind);
  for (double t : t_grid) c.bound.push_back(tail_bound(t, p.alpha, e.dim(), p.sigma2));
  return c;
}

MartingaleTrace martingale_trace(const Trajectory& traj, const Spectrum& s, const TheoryParams& p,
                                 std::size_t i, std::size_t j) {
  const std::size_t d = p.dim();
  if (i >= d || j >= d) throw std::out_of_range("eigenvector index out of range");
  if (is_zero_eigenvalue(p.lambdas[i], p.lambdas[0]))
    throw std::invalid_argument("lambda_" + std::to_string(i) +
                                " is zero; the martingale trace is degenerate");
  if (traj.partials.empty())
    throw std::invalid_argument("martingale_trace needs a trajectory recorded with partials");

  const Vector ui = s.vector(i);
  const Vector uj = s.vector(j);
  const double q = p.q[i];
  const double step = p.alpha * p.c[i] * p.lambdas[i];
  const std::size_t n = traj.partials.size() - 1;

  MartingaleTrace m;
  m.i = i;
  m.j = j;
  m.y.resize(n + 1);
  m.increments.assign(n + 1, 0.0);
  m.diff_bounds.assign(n + 1, 0.0);
  m.max_excess = n == 0 ? 0.0 : -INFINITY;
  double z_prev = bilinear(ui, traj.partials[0], uj);
  m.y[0] = z_prev;
  for (std::size_t k = 1; k <= n; ++k) {
    const double scale = std::pow(q, -static_cast<double>(k));
    const double z = bilinear(ui, traj.partials[k], uj);
    m.y[k] = scale * z;
    m.increments[k] = scale * (z - q * z_prev);
    m.diff_bounds[k] = scale * step;
    m.max_excess = std::max(m.max_excess, std::abs(m.increments[k]) - m.diff_bounds[k]);
    z_prev = z;
  }
  return m;
}

double martingale_property_test(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                                std::size_t i, std::size_t j, std::size_t depth) {
  require_alpha(e, p.alpha);
  const std::size_t d = p.dim();
  if (i >= d || j >= d) throw std::out_of_range("eigenvector index out of range");
  if (is_zero_eigenvalue(p.lambdas[i], p.lambdas[0]))
    throw std::invalid_argument("lambda_" + std::to_string(i) +
                                " is zero; the martingale is degenerate");
  const auto& atoms = e.support();
  const std::size_t m = atoms.size();

  std::uint64_t work = 0;
  std::uint64_t level_nodes = 1;
  for (std::size_t l = 0; l <= depth; ++l) {
    if (level_nodes > kEnumerationBudget / m)
      throw EnumerationBudgetError("martingale_property_test: history enumeration over budget");
    work += level_nodes * m;
    if (work > kEnumerationBudget)
      throw EnumerationBudgetError("martingale_property_test: history enumeration over budget");
    level_nodes *= m;
  }

  const Vector ui = s.vector(i);
  const Vector uj = s.vector(j);
  const double q = p.q[i];
  std::vector<Vector> xu;  // X_a u_i
  std::vector<Matrix> factors;
  for (const Atom& a : atoms) {
    xu.push_back(mat_vec(a.matrix.matrix(), ui));
    factors.push_back(factor(a.matrix, p.alpha));
  }

  double worst = 0.0;
  std::function<void(const Matrix&, std::size_t)> visit = [&](const Matrix& z, std::size_t len) {
    const Vector w = mat_vec(z, uj);
    const double zi = dot(ui, w);
    const double y_prev = std::pow(q, -static_cast<double>(len)) * zi;
    double expectation = 0.0;
    for (std::size_t a = 0; a < m; ++a)
      expectation += atoms[a].probability * (zi - p.alpha * dot(xu[a], w));
    expectation *= std::pow(q, -static_cast<double>(len + 1));
    worst = std::max(worst, std::abs(expectation - y_prev));
    if (len == depth) return;
    for (std::size_t a = 0; a < m; ++a) visit(mat_mul(factors[a], z), len + 1);
  };
  visit(Matrix::identity(d), 0);
  return worst;
}

MeanProduct empirical_mean_product(const Ensemble& e, double alpha, std::size_t n,
                                   const McOptions& options) {
  require_alpha(e, alpha);
  if (options.trials == 0) throw std::invalid_argument("trials must be >= 1");
  const std::size_t d = e.dim();

  struct Moments {
    double count = 0.0;
    Matrix mean;
    Matrix m2;
  };
  const std::size_t blocks = block_count(options.trials);
  std::vector<Moments> partial(blocks, Moments{0.0, Matrix(d), Matrix(d)});
  parallel_for_blocks(blocks, options.threads, [&](std::size_t b) {
    Moments& mo = partial[b];
    const std::size_t begin = b * kBlockTrials;
    const std::size_t end = std::min(options.trials, begin + kBlockTrials);
    for (std::size_t trial = begin; trial < end; ++trial) {
      const Matrix z = run_trajectory(e, alpha, n, {options.seed, trial}, false).last;
      mo.count += 1.0;
      for (std::size_t k = 0; k < d * d; ++k) {
        const double x = z.data()[k];
        const double delta = x - mo.mean.data()[k];
        mo.mean.data()[k] += delta / mo.count;
        mo.m2.data()[k] += delta * (x - mo.mean.data()[k]);
      }
    }
  });

  // Pairwise (Chan et al.) merge in block order.
  Moments total = std::move(partial.front());
  for (std::size_t b = 1; b < blocks; ++b) {
    const Moments& mo = partial[b];
    const double count = total.count + mo.count;
    for (std::size_t k = 0; k < d * d; ++k) {
      const double delta = mo.mean.data()[k] - total.mean.data()[k];
      total.mean.data()[k] += delta * mo.count / count;
      total.m2.data()[k] += mo.m2.data()[k] + delta * delta * total.count * mo.count / count;
    }
    total.count = count;
  }

  MeanProduct out{total.mean, Matrix(d)};
  if (total.count > 1.0)
    for (std::size_t k = 0; k < d * d; ++k)
      out.se.data()[k] =
          std::sqrt(std::max(total.m2.data()[k], 0.0) / (total.count - 1.0) / total.count);
  return out;
}

TailCurve entrywise_tail_check(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                               std::size_t n, std::size_t i, std::size_t j,
                               std::span<const double> t_grid, const McOptions& options) {
  require_alpha(e, p.alpha);
  require_grid(t_grid);
  if (options.trials == 0) throw std::invalid_argument("trials must be >= 1");
  const std::size_t d = p.dim();
  if (i >= d || j >= d) throw std::out_of_range("eigenvector index out of range");
  if (is_zero_eigenvalue(p.lambdas[i], p.lambdas[0]))
    throw std::invalid_argument("entrywise check needs lambda_i > 0");

  const Vector ui = s.vector(i);
  const Vector uj = s.vector(j);
  const double mean = i == j ? std::pow(p.q[i], static_cast<double>(n)) : 0.0;

  auto hist = reduce_histograms(
      options.trials, t_grid.size() + 1, options.threads,
      [&](std::size_t trial, std::vector<std::uint64_t>& h) {
        if (p.c[i] == 0.0) {
          // u_i is almost surely an eigenvector of every X_k, so the entry is
          // deterministic: the event holds at t = 0 only.
          ++h[grid_rank(t_grid, 0.0)];
          return;
        }
        const Matrix z = run_trajectory(e, p.alpha, n, {options.seed, trial}, false).last;
        const double dev = std::abs(bilinear(ui, z, uj) - mean);
        std::size_t rank = 0;
        while (rank < t_grid.size() &&
               dev >= entrywise_threshold(t_grid[rank], p.lambdas[i], p.c[i]))
          ++rank;
        ++h[rank];
      });

  TailCurve c = curve_from_counts(t_grid, hist, options.trials, NormKind::Operator);
  c.entrywise = true;
  for (double t : t_grid) c.bound.push_back(entrywise_tail_bound(t, p.alpha));
  return c;
}

}  // namespace rmpc
