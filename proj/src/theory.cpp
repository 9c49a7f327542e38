#include "rmpc/theory.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace rmpc {

bool is_zero_eigenvalue(double lambda, double lambda_max) noexcept {
  return lambda_max <= 0.0 || lambda <= kZeroEigenRelTol * lambda_max;
}

namespace {

// ||(X - lambda I) u|| for symmetric X.
double residual_norm(const SymMatrix& x, double lambda, std::span<const double> u) {
  const std::size_t d = x.dim();
  double s = 0.0;
  for (std::size_t r = 0; r < d; ++r) {
    double v = -lambda * u[r];
    for (std::size_t k = 0; k < d; ++k) v += x(r, k) * u[k];
    s += v * v;
  }
  return std::sqrt(s);
}

}  // namespace

DeviationConstants compute_c(const Ensemble& e, const Spectrum& s,
                             const CEstimateOptions& options) {
  const std::size_t d = s.dim();
  if (e.dim() != d) throw std::invalid_argument("compute_c: dimension mismatch");
  const double lambda_max = s.eigenvalues.front();

  std::vector<Vector> u(d);
  for (std::size_t i = 0; i < d; ++i) u[i] = s.vector(i);

  DeviationConstants out{Vector(d, 0.0), e.has_finite_support()};
  auto absorb = [&](const SymMatrix& x) {
    for (std::size_t i = 0; i < d; ++i) {
      const double lambda = s.eigenvalues[i];
      if (is_zero_eigenvalue(lambda, lambda_max)) continue;
      out.c[i] = std::max(out.c[i], residual_norm(x, lambda, u[i]) / lambda);
    }
  };

  if (e.has_finite_support()) {
    for (const Atom& a : e.support()) absorb(a.matrix);
  } else {
    CounterRng rng(options.rng);
    for (std::size_t k = 0; k < options.samples; ++k) absorb(e.sample(rng));
  }
  return out;
}

double compute_sigma2(std::span<const double> c, std::span<const double> lambdas, std::size_t d) {
  if (c.size() != d || lambdas.size() != d)
    throw std::invalid_argument("compute_sigma2: lengths must equal d");
  double s = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    if (c[i] < 0.0 || lambdas[i] < 0.0)
      throw std::invalid_argument("compute_sigma2: entries must be non-negative");
    s += c[i] * c[i] * lambdas[i];
  }
  return 4.0 * static_cast<double>(d) / 3.0 * s;
}

double tail_bound(double t, double alpha, std::size_t d, double sigma2) {
  if (t < 0.0 || !(alpha > 0.0) || sigma2 < 0.0)
    throw std::invalid_argument("tail_bound: need t >= 0, alpha > 0, sigma2 >= 0");
  if (t == 0.0) return 1.0;
  if (sigma2 == 0.0) return 0.0;
  const double dd = static_cast<double>(d);
  return std::min(1.0, 2.0 * dd * dd * std::exp(-t * t / (alpha * sigma2)));
}

double entrywise_tail_bound(double t, double alpha) {
  if (t < 0.0 || !(alpha > 0.0))
    throw std::invalid_argument("entrywise_tail_bound: need t >= 0, alpha > 0");
  return std::min(1.0, 2.0 * std::exp(-t * t / alpha));
}

double entrywise_threshold(double t, double lambda, double c) {
  return t * std::sqrt(4.0 * lambda / 3.0) * c;
}

SymMatrix expected_product(const Spectrum& s, double alpha, std::size_t n) {
  const std::size_t d = s.dim();
  SymMatrix out(d);
  for (std::size_t k = 0; k < d; ++k) {
    const double w = std::pow(1.0 - alpha * s.eigenvalues[k], static_cast<double>(n));
    for (std::size_t i = 0; i < d; ++i)
      for (std::size_t j = i; j < d; ++j)
        out.set(i, j, out(i, j) + w * s.eigenvectors(i, k) * s.eigenvectors(j, k));
  }
  return out;
}

GeometricSum geometric_sum_check(double q, std::size_t n) {
  if (!(q >= 0.5 && q < 1.0)) {
    std::ostringstream msg;
    msg << "geometric_sum_check: q = " << q << " outside [1/2, 1)";
    throw std::invalid_argument(msg.str());
  }
  if (n == 0) throw std::invalid_argument("geometric_sum_check: n must be >= 1");
  const double q2 = q * q;
  double lhs = 0.0;
  double term = 1.0;
  for (std::size_t k = 0; k < n; ++k) {
    lhs += term;
    term *= q2;
    if (term == 0.0) break;
  }
  return {lhs, 2.0 / (3.0 * (1.0 - q))};
}

bool validate_alpha(double alpha, double r) {
  if (!(r > 0.0)) throw std::invalid_argument("validate_alpha: r must be positive");
  return alpha > 0.0 && alpha < 1.0 / (2.0 * r);
}

std::pair<Spectrum, TheoryParams> analyze(const Ensemble& e, double alpha,
                                          const CEstimateOptions& options,
                                          std::optional<double> sigma2_override) {
  const double r = e.radius();
  if (!(r > 0.0))
    throw std::invalid_argument("ensemble radius is zero; every factor is the zero matrix");
  if (!validate_alpha(alpha, r)) {
    std::ostringstream msg;
    msg << "alpha = " << alpha << " is outside the open interval (0, 1/(2r)) = (0, "
        << 1.0 / (2.0 * r) << ")";
    throw std::invalid_argument(msg.str());
  }

  Spectrum s = sym_eigen(e.mean());
  TheoryParams p;
  p.alpha = alpha;
  p.r = r;
  p.lambdas = s.eigenvalues;
  // Clamp round-off negatives; the mean of PSD matrices is PSD.
  for (double& l : p.lambdas) l = std::max(l, 0.0);
  auto c = compute_c(e, s, options);
  p.c = std::move(c.c);
  p.c_exact = c.exact;
  p.q.resize(p.dim());
  for (std::size_t i = 0; i < p.dim(); ++i) p.q[i] = 1.0 - alpha * p.lambdas[i];
  p.sigma2 = sigma2_override ? *sigma2_override : compute_sigma2(p.c, p.lambdas, p.dim());
  return {std::move(s), std::move(p)};
}

}  // namespace rmpc
