#pragma once

#include <cstddef>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include "rmpc/linalg.hpp"
#include "rmpc/rng.hpp"

namespace rmpc {

enum class EnsembleKind { FiniteSupport, RankOneRows, SphereRankOne };

const char* to_string(EnsembleKind kind) noexcept;

struct Atom {
  SymMatrix matrix;
  double probability;
};

/// Thrown when an operation needs a finite support and the law is continuous.
class UnsupportedEnsemble : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Law of the random PSD factors X_k, with its exact mean and almost-sure
/// operator-norm radius. Immutable after construction.
class Ensemble {
 public:
  /// Atoms must be PSD (tolerance 1e-10) with positive probabilities summing
  /// to 1 within 1e-12; the probabilities are then renormalized.
  static Ensemble finite_support(std::vector<Atom> atoms);
  /// X = a_j a_j^T with j uniform over the rows.
  static Ensemble rank_one_rows(std::vector<Vector> rows);
  /// X = d v v^T with v uniform on the unit sphere of R^d.
  static Ensemble sphere_rank_one(std::size_t dim);

  EnsembleKind kind() const noexcept { return kind_; }
  std::size_t dim() const noexcept { return dim_; }
  bool has_finite_support() const noexcept { return kind_ != EnsembleKind::SphereRankOne; }

  const SymMatrix& mean() const noexcept { return mean_; }
  double radius() const noexcept { return radius_; }

  /// Atom list; rank-one rows give one atom per row with probability 1/m.
  /// Throws UnsupportedEnsemble for the sphere law.
  const std::vector<Atom>& support() const;

  /// Index into support() of one draw. Finite-support kinds only.
  std::size_t draw_atom(CounterRng& rng) const;
  SymMatrix sample(CounterRng& rng) const;

  const std::vector<Vector>& rows() const noexcept { return rows_; }

 private:
  Ensemble(EnsembleKind kind, std::size_t dim) : kind_(kind), dim_(dim), mean_(dim) {}

  EnsembleKind kind_;
  std::size_t dim_;
  std::vector<Atom> atoms_;
  std::vector<double> cumulative_;
  std::vector<Vector> rows_;
  SymMatrix mean_;
  double radius_ = 0.0;
};

/// `count` rows of i.i.d. standard normals, each scaled to unit length,
/// drawn from stream (seed, 0).
std::vector<Vector> unit_gaussian_rows(std::size_t dim, std::size_t count, std::uint64_t seed);

inline constexpr double kProbabilitySumTol = 1e-12;
inline constexpr double kAtomPsdTol = 1e-10;

}  // namespace rmpc
