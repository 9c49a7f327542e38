#include "rmpc/ensemble.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace rmpc {

const char* to_string(EnsembleKind kind) noexcept {
  switch (kind) {
    case EnsembleKind::FiniteSupport: return "finite-support";
    case EnsembleKind::RankOneRows: return "rank-one-rows";
    case EnsembleKind::SphereRankOne: return "sphere-rank-one";
  }
  return "unknown";
}

Ensemble Ensemble::finite_support(std::vector<Atom> atoms) {
  if (atoms.empty()) throw std::invalid_argument("finite-support ensemble needs at least one atom");
  const std::size_t d = atoms.front().matrix.dim();
  double total = 0.0;
  for (std::size_t s = 0; s < atoms.size(); ++s) {
    const Atom& a = atoms[s];
    if (a.matrix.dim() != d) throw std::invalid_argument("atoms must share one dimension");
    if (!(a.probability > 0.0) || !std::isfinite(a.probability))
      throw std::invalid_argument("atom " + std::to_string(s) + " has non-positive probability");
    if (!is_psd(a.matrix, kAtomPsdTol))
      throw std::invalid_argument("atom " + std::to_string(s) + " is not positive semidefinite");
    total += a.probability;
  }
  if (std::abs(total - 1.0) > kProbabilitySumTol)
    throw std::invalid_argument("atom probabilities sum to " + std::to_string(total) +
                                ", not 1");

  Ensemble e(EnsembleKind::FiniteSupport, d);
  double running = 0.0;
  for (Atom& a : atoms) {
    a.probability /= total;
    running += a.probability;
    e.cumulative_.push_back(running);
    SymMatrix term = a.matrix;
    term *= a.probability;
    e.mean_ += term;
    e.radius_ = std::max(e.radius_, operator_norm(a.matrix));
  }
  e.atoms_ = std::move(atoms);
  return e;
}

Ensemble Ensemble::rank_one_rows(std::vector<Vector> rows) {
  if (rows.empty()) throw std::invalid_argument("rank-one-rows ensemble needs at least one row");
  const std::size_t d = rows.front().size();
  if (d == 0) throw std::invalid_argument("rows must be non-empty");
  Ensemble e(EnsembleKind::RankOneRows, d);
  const double p = 1.0 / static_cast<double>(rows.size());
  for (std::size_t j = 0; j < rows.size(); ++j) {
    const Vector& a = rows[j];
    if (a.size() != d) throw std::invalid_argument("rows must share one length");
    if (!std::all_of(a.begin(), a.end(), [](double x) { return std::isfinite(x); }))
      throw std::invalid_argument("row " + std::to_string(j) + " has a non-finite entry");
    SymMatrix x = SymMatrix::outer(a);
    e.radius_ = std::max(e.radius_, dot(a, a));
    e.mean_ += x;
    e.atoms_.push_back({std::move(x), p});
  }
  e.mean_ *= p;
  e.rows_ = std::move(rows);
  return e;
}

Ensemble Ensemble::sphere_rank_one(std::size_t dim) {
  if (dim == 0) throw std::invalid_argument("dimension must be >= 1");
  Ensemble e(EnsembleKind::SphereRankOne, dim);
  e.mean_ = SymMatrix::identity(dim);
  e.radius_ = static_cast<double>(dim);
  return e;
}

const std::vector<Atom>& Ensemble::support() const {
  if (!has_finite_support())
    throw UnsupportedEnsemble(std::string(to_string(kind_)) + " ensemble has continuous support");
  return atoms_;
}

std::size_t Ensemble::draw_atom(CounterRng& rng) const {
  switch (kind_) {
    case EnsembleKind::RankOneRows:
      return rng.uniform_index(atoms_.size());
    case EnsembleKind::FiniteSupport: {
      const double u = rng.uniform();
      const auto it = std::upper_bound(cumulative_.begin(), cumulative_.end(), u);
      return std::min(static_cast<std::size_t>(it - cumulative_.begin()), atoms_.size() - 1);
    }
    case EnsembleKind::SphereRankOne:
      break;
  }
  throw UnsupportedEnsemble("draw_atom needs a finite-support ensemble");
}

SymMatrix Ensemble::sample(CounterRng& rng) const {
  if (kind_ != EnsembleKind::SphereRankOne) return atoms_[draw_atom(rng)].matrix;
  Vector v(dim_);
  double norm_sq = 0.0;
  do {
    norm_sq = 0.0;
    for (double& x : v) {
      x = rng.normal();
      norm_sq += x * x;
    }
  } while (norm_sq == 0.0);
  return SymMatrix::outer(v, static_cast<double>(dim_) / norm_sq);
}

std::vector<Vector> unit_gaussian_rows(std::size_t dim, std::size_t count, std::uint64_t seed) {
  if (dim == 0 || count == 0) throw std::invalid_argument("need dim, count >= 1");
  CounterRng rng({seed, 0});
  std::vector<Vector> rows(count, Vector(dim));
  for (Vector& row : rows) {
    double norm = 0.0;
    do {
      for (double& x : row) x = rng.normal();
      norm = norm2(row);
    } while (norm == 0.0);
    for (double& x : row) x /= norm;
  }
  return rows;
}

}  // namespace rmpc
