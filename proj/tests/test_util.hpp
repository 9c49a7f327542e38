#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <vector>

#include "rmpc/ensemble.hpp"
#include "rmpc/linalg.hpp"

namespace rmpc::testing {

inline Matrix random_matrix(std::mt19937_64& gen, std::size_t d) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Matrix m(d);
  for (double& x : m.data()) x = u(gen);
  return m;
}

inline SymMatrix random_symmetric(std::mt19937_64& gen, std::size_t d) {
  return SymMatrix::symmetrize(random_matrix(gen, d));
}

/// B B^T with B of shape d x rank.
inline SymMatrix random_psd(std::mt19937_64& gen, std::size_t d, std::size_t rank) {
  std::normal_distribution<double> g;
  SymMatrix x(d);
  for (std::size_t k = 0; k < rank; ++k) {
    Vector v(d);
    for (double& e : v) e = g(gen);
    x += SymMatrix::outer(v);
  }
  return x;
}

/// Finite-support ensemble of PSD atoms. When `kernel_dims` > 0 the atoms all
/// vanish on the last `kernel_dims` coordinates, so the mean is singular.
inline Ensemble random_finite_ensemble(std::mt19937_64& gen, std::size_t d, std::size_t atoms,
                                       std::size_t kernel_dims = 0) {
  std::uniform_real_distribution<double> u(0.1, 1.0);
  std::uniform_int_distribution<std::size_t> rank(1, d);
  std::vector<double> w(atoms);
  double total = 0.0;
  for (double& x : w) total += (x = u(gen));
  std::vector<Atom> list;
  for (std::size_t a = 0; a < atoms; ++a) {
    SymMatrix x = random_psd(gen, d, rank(gen));
    for (std::size_t i = d - kernel_dims; i < d; ++i)
      for (std::size_t j = 0; j < d; ++j) x.set(i, j, 0.0);
    list.push_back({x, w[a] / total});
  }
  return Ensemble::finite_support(std::move(list));
}

inline double max_abs_diff(const Matrix& a, const Matrix& b) {
  double m = 0.0;
  for (std::size_t k = 0; k < a.data().size(); ++k)
    m = std::max(m, std::abs(a.data()[k] - b.data()[k]));
  return m;
}

/// d = 1 law with atoms {0, 2}, each with probability 1/2.
inline Ensemble two_point() {
  return Ensemble::finite_support({{SymMatrix{{0.0}}, 0.5}, {SymMatrix{{2.0}}, 0.5}});
}

}  // namespace rmpc::testing
