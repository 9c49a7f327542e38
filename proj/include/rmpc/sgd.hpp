#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "rmpc/ensemble.hpp"
#include "rmpc/linalg.hpp"
#include "rmpc/theory.hpp"

namespace rmpc {

/// Consistent least-squares instance: b_j = a_j^T x_star for every row.
struct LeastSquaresProblem {
  std::vector<Vector> rows;
  Vector targets;
  Vector x_star;

  std::size_t dim() const noexcept { return x_star.size(); }
  std::size_t size() const noexcept { return rows.size(); }

  static LeastSquaresProblem from_solution(std::vector<Vector> rows, Vector x_star);
  /// unit_gaussian_rows(dim, rows, seed) and a standard normal x_star drawn
  /// from stream (seed, 1).
  static LeastSquaresProblem synthetic(std::size_t dim, std::size_t rows, std::uint64_t seed);

  /// X = a_j a_j^T with j uniform: the law of the error-propagation factors.
  Ensemble ensemble() const { return Ensemble::rank_one_rows(rows); }
};

struct SgdPath {
  std::vector<Vector> iterates;
  std::vector<std::size_t> rows_drawn;
};

/// x_k = x_{k-1} - alpha a_j (a_j^T x_{k-1} - b_j), j uniform, drawn from
/// stream (seed, 0) exactly as the rank-one ensemble draws its atoms.
/// Requires 0 < alpha < 1 / (2 max_j ||a_j||^2).
SgdPath sgd_run(const LeastSquaresProblem& p, const Vector& x0, double alpha, std::size_t n,
                std::uint64_t seed);

/// max_k ||(x_k - x_star) - Z_k (x_0 - x_star)|| with both sides driven by the
/// same row sequence.
double error_propagation_check(const LeastSquaresProblem& p, const Vector& x0, double alpha,
                               std::size_t n, std::uint64_t seed);

struct Certificate {
  /// Deviation level t with 2 d^2 exp(-t^2 / (alpha sigma2)) = delta.
  double deviation = 0.0;
  /// ||E Z_n|| = (1 - alpha lambda_min)^n
  double mean_contraction = 0.0;
  /// mean_contraction + deviation: bound on ||e_n|| / ||e_0|| w.p. >= 1 - delta.
  double radius = 0.0;
  /// The deviation alone already reaches 1.
  bool vacuous = false;
  double sigma2 = 0.0;
};

/// Deviation level for a given variance parameter; the inverse of tail_bound.
double deviation_at_confidence(double alpha, std::size_t d, double sigma2, double delta);

Certificate certificate(const LeastSquaresProblem& p, double alpha, std::size_t n, double delta);
Certificate certificate(const TheoryParams& params, std::size_t n, double delta);

}  // namespace rmpc
