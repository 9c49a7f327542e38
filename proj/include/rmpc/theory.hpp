#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <utility>

#include "rmpc/ensemble.hpp"
#include "rmpc/linalg.hpp"

namespace rmpc {

/// Eigenvalues at or below this fraction of lambda_1 count as zero.
inline constexpr double kZeroEigenRelTol = 1e-12;
/// Samples used to estimate c_i for continuous laws.
inline constexpr std::size_t kDefaultCSamples = 1'000'000;

struct DeviationConstants {
  Vector c;
  /// True when c was maximized over the full support rather than estimated.
  bool exact = true;
};

/// Every quantity entering the tail bound for one (ensemble, alpha) pair.
struct TheoryParams {
  double alpha = 0.0;
  double r = 0.0;
  Vector lambdas;
  Vector c;
  Vector q;
  double sigma2 = 0.0;
  bool c_exact = true;

  std::size_t dim() const noexcept { return lambdas.size(); }
};

/// True for eigenvalues the artifact treats as exact zeros.
bool is_zero_eigenvalue(double lambda, double lambda_max) noexcept;

struct CEstimateOptions {
  std::size_t samples = kDefaultCSamples;
  RngState rng{0, 0};
};

/// c_i = sup ||(X - lambda_i I) u_i|| / lambda_i. Exact over the support when it
/// is finite; otherwise the maximum over `options.samples` draws (a lower
/// estimate, flagged with exact = false). c_i = 0 on zero eigenvalues.
DeviationConstants compute_c(const Ensemble& e, const Spectrum& s,
                             const CEstimateOptions& options = {});

/// (4d/3) * sum_i c_i^2 lambda_i
double compute_sigma2(std::span<const double> c, std::span<const double> lambdas, std::size_t d);

/// min(1, 2 d^2 exp(-t^2 / (alpha sigma2))). Zero for t > 0 when sigma2 == 0.
double tail_bound(double t, double alpha, std::size_t d, double sigma2);

/// min(1, 2 exp(-t^2 / alpha)), the per-entry bound in the eigenbasis.
double entrywise_tail_bound(double t, double alpha);
/// t * sqrt(4 lambda / 3) * c
double entrywise_threshold(double t, double lambda, double c);

/// (I - alpha Sigma)^n evaluated spectrally.
SymMatrix expected_product(const Spectrum& s, double alpha, std::size_t n);

struct GeometricSum {
  double lhs;
  double rhs;
};

/// lhs = sum_{k<n} q^{2k}, rhs = 2 / (3 (1 - q)). Requires q in [1/2, 1), n >= 1.
GeometricSum geometric_sum_check(double q, std::size_t n);

/// 0 < alpha < 1/(2r)
bool validate_alpha(double alpha, double r);

/// Diagonalizes the ensemble mean and fills every TheoryParams field.
/// Throws std::invalid_argument when alpha is outside (0, 1/(2r)).
/// A set `sigma2_override` replaces the computed variance parameter.
std::pair<Spectrum, TheoryParams> analyze(const Ensemble& e, double alpha,
                                          const CEstimateOptions& options = {},
                                          std::optional<double> sigma2_override = std::nullopt);

}  // namespace rmpc
