#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string_view>
#include <vector>

#include "rmpc/ensemble.hpp"
#include "rmpc/linalg.hpp"
#include "rmpc/rng.hpp"
#include "rmpc/theory.hpp"

namespace rmpc {

enum class NormKind { Operator, Frobenius };

/// "op" or "fro"
const char* to_string(NormKind kind) noexcept;
std::optional<NormKind> parse_norm_kind(std::string_view s) noexcept;

double deviation_norm(const Matrix& m, NormKind kind);

/// Leaf evaluations allowed for exhaustive enumeration of sample paths.
inline constexpr std::uint64_t kEnumerationBudget = 20'000'000;
inline constexpr double kCiConfidence = 0.99;
inline constexpr double kContractionTol = 1e-10;
inline constexpr double kMartingaleStepTol = 1e-12;

class EnumerationBudgetError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct Trajectory {
  /// X_1..X_n; only filled when partials are kept.
  std::vector<SymMatrix> factors;
  /// Support index of each draw (finite-support laws only).
  std::vector<std::size_t> atoms;
  /// Z_0 = I, Z_1, ..., Z_n; only filled when partials are kept.
  std::vector<Matrix> partials;
  Matrix last{1};
};

/// Z_n = (I - alpha X_n) ... (I - alpha X_1) by successive left multiplication.
/// Throws std::invalid_argument unless alpha is in (0, 1/(2r)).
Trajectory run_trajectory(const Ensemble& e, double alpha, std::size_t n, RngState rng,
                          bool keep_partials);

/// Rebuilds a trajectory (with partials) from a list of support indices.
Trajectory replay_trajectory(const Ensemble& e, double alpha, std::span<const std::size_t> atoms);

struct TailCurve {
  Vector thresholds;
  Vector tail;
  /// Empty for exact curves.
  Vector ci_low;
  Vector ci_high;
  Vector bound;
  NormKind norm_kind = NormKind::Operator;
  /// Unset for exact (enumerated) curves.
  std::optional<std::size_t> trials;
  /// Deviation measured on one eigenbasis entry rather than a matrix norm.
  bool entrywise = false;

  bool exact() const noexcept { return !trials.has_value(); }
};

struct Interval {
  double low;
  double high;
};

/// Two-sided exact binomial interval for `successes` out of `trials`.
Interval clopper_pearson(std::size_t successes, std::size_t trials,
                         double confidence = kCiConfidence);

/// `count` evenly spaced points on [lo, hi].
Vector linear_grid(double lo, double hi, std::size_t count);

using PathObserver = std::function<void(std::span<const std::size_t> atoms, double probability)>;

struct BruteForceResult {
  TailCurve curve;
  std::uint64_t paths = 0;
  /// ||enumerated mean - (I - alpha Sigma)^n||_F
  double mean_discrepancy = 0.0;
};

/// Exact tail probabilities by depth-first enumeration of every sample path.
/// Throws EnumerationBudgetError when |support|^n exceeds kEnumerationBudget.
BruteForceResult brute_force_tail(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                                  std::size_t n, std::span<const double> t_grid, NormKind kind,
                                  const PathObserver& observer = {});

struct McOptions {
  std::size_t trials = 1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
};

/// Called once per trial, possibly from several threads at once.
using TrajectoryObserver = std::function<void(std::size_t trial, const Trajectory&)>;

/// Empirical tail frequencies with Clopper-Pearson intervals. Trial j draws
/// from stream (seed, j); results do not depend on the thread count. A set
/// observer receives every trajectory with partials kept.
TailCurve estimate_tail(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                        std::size_t n, std::span<const double> t_grid, NormKind kind,
                        const McOptions& options, const TrajectoryObserver& observer = {});

struct MartingaleTrace {
  std::size_t i = 0;
  std::size_t j = 0;
  /// Y_k = q_i^{-k} u_i^T Z_k u_j, k = 0..n
  Vector y;
  /// Y_k - Y_{k-1} for k = 1..n (index 0 is 0), evaluated as q^{-k}(z_k - q z_{k-1}).
  Vector increments;
  /// q_i^{-k} alpha c_i lambda_i (index 0 is 0).
  Vector diff_bounds;
  /// max_k (|increment_k| - diff_bounds_k); non-positive when every step is in bound.
  double max_excess = 0.0;

  bool bounded(double tol = kMartingaleStepTol) const noexcept { return max_excess <= tol; }
};

/// Requires a trajectory with partials and lambda_i above the zero threshold.
MartingaleTrace martingale_trace(const Trajectory& traj, const Spectrum& s, const TheoryParams& p,
                                 std::size_t i, std::size_t j);

/// max over histories of length <= depth of |E[Y_k | history] - Y_{k-1}|,
/// with the conditional expectation summed exactly over the support.
double martingale_property_test(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                                std::size_t i, std::size_t j, std::size_t depth);

struct MeanProduct {
  Matrix mean{1};
  /// Entrywise standard errors of the mean.
  Matrix se{1};
};

MeanProduct empirical_mean_product(const Ensemble& e, double alpha, std::size_t n,
                                   const McOptions& options);

/// Frequency of |u_i^T (Z_n - E Z_n) u_j| >= entrywise_threshold(t, lambda_i, c_i),
/// paired with entrywise_tail_bound(t, alpha). With c_i = 0 the entry is
/// deterministic and the event is counted at t = 0 only.
TailCurve entrywise_tail_check(const Ensemble& e, const Spectrum& s, const TheoryParams& p,
                               std::size_t n, std::size_t i, std::size_t j,
                               std::span<const double> t_grid, const McOptions& options);

/// Runs fn(block) for block in [0, blocks) on up to `threads` workers.
void parallel_for_blocks(std::size_t blocks, unsigned threads,
                         const std::function<void(std::size_t)>& fn);

}  // namespace rmpc
