#include "rmpc/sgd.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "rmpc/montecarlo.hpp"
#include "rmpc/rng.hpp"

namespace rmpc {

LeastSquaresProblem LeastSquaresProblem::from_solution(std::vector<Vector> rows, Vector x_star) {
  if (rows.empty()) throw std::invalid_argument("least-squares problem needs at least one row");
  if (x_star.empty()) throw std::invalid_argument("x_star must be non-empty");
  LeastSquaresProblem p;
  for (const Vector& a : rows) {
    if (a.size() != x_star.size()) throw std::invalid_argument("row length must match x_star");
    p.targets.push_back(dot(a, x_star));
  }
  p.rows = std::move(rows);
  p.x_star = std::move(x_star);
  return p;
}

LeastSquaresProblem LeastSquaresProblem::synthetic(std::size_t dim, std::size_t rows,
                                                   std::uint64_t seed) {
  if (dim == 0 || rows == 0) throw std::invalid_argument("synthetic problem needs d, m >= 1");
  CounterRng rng({seed, 1});
  Vector x_star(dim);
  for (double& x : x_star) x = rng.normal();
  return from_solution(unit_gaussian_rows(dim, rows, seed), std::move(x_star));
}

SgdPath sgd_run(const LeastSquaresProblem& p, const Vector& x0, double alpha, std::size_t n,
                std::uint64_t seed) {
  if (x0.size() != p.dim()) throw std::invalid_argument("x0 length must match the problem");
  double r = 0.0;
  for (const Vector& a : p.rows) r = std::max(r, dot(a, a));
  if (!validate_alpha(alpha, r)) {
    std::ostringstream msg;
    msg << "alpha = " << alpha << " must lie in (0, 1/(2 max ||a_j||^2)) = (0, " << 0.5 / r << ")";
    throw std::invalid_argument(msg.str());
  }

  CounterRng rng({seed, 0});
  SgdPath path;
  path.iterates.reserve(n + 1);
  path.iterates.push_back(x0);
  Vector x = x0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t j = rng.uniform_index(p.size());
    const Vector& a = p.rows[j];
    const double residual = dot(a, x) - p.targets[j];
    for (std::size_t i = 0; i < x.size(); ++i) x[i] -= alpha * a[i] * residual;
    path.rows_drawn.push_back(j);
    path.iterates.push_back(x);
  }
  return path;
}

double error_propagation_check(const LeastSquaresProblem& p, const Vector& x0, double alpha,
                               std::size_t n, std::uint64_t seed) {
  const SgdPath path = sgd_run(p, x0, alpha, n, seed);
  const Trajectory traj = run_trajectory(p.ensemble(), alpha, n, {seed, 0}, true);
  if (traj.atoms != path.rows_drawn)
    throw std::logic_error("SGD and trajectory drew different row sequences");

  Vector e0(p.dim());
  for (std::size_t i = 0; i < e0.size(); ++i) e0[i] = x0[i] - p.x_star[i];
  double worst = 0.0;
  for (std::size_t k = 0; k <= n; ++k) {
    const Vector predicted = mat_vec(traj.partials[k], e0);
    double s = 0.0;
    for (std::size_t i = 0; i < e0.size(); ++i) {
      const double diff = (path.iterates[k][i] - p.x_star[i]) - predicted[i];
      s += diff * diff;
    }
    worst = std::max(worst, std::sqrt(s));
  }
  return worst;
}

double deviation_at_confidence(double alpha, std::size_t d, double sigma2, double delta) {
  if (!(delta > 0.0 && delta < 1.0)) throw std::invalid_argument("delta must lie in (0, 1)");
  const double dd = static_cast<double>(d);
  return std::sqrt(alpha * sigma2 * std::log(2.0 * dd * dd / delta));
}

Certificate certificate(const TheoryParams& params, std::size_t n, double delta) {
  Certificate c;
  c.sigma2 = params.sigma2;
  c.deviation = deviation_at_confidence(params.alpha, params.dim(), params.sigma2, delta);
  const double lambda_min = std::max(params.lambdas.back(), 0.0);
  c.mean_contraction = std::pow(1.0 - params.alpha * lambda_min, static_cast<double>(n));
  c.radius = c.mean_contraction + c.deviation;
  c.vacuous = c.deviation >= 1.0;
  return c;
}

Certificate certificate(const LeastSquaresProblem& p, double alpha, std::size_t n, double delta) {
  return certificate(analyze(p.ensemble(), alpha).second, n, delta);
}

}  // namespace rmpc
