#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <vector>

namespace rmpc {

using Vector = std::vector<double>;

/// Dense row-major d x d matrix. Houses products of random factors, which are
/// generally not symmetric.
class Matrix {
 public:
  explicit Matrix(std::size_t dim);
  Matrix(std::initializer_list<std::initializer_list<double>> rows);

  static Matrix identity(std::size_t dim);
  static Matrix from_rows(const std::vector<Vector>& rows);

  std::size_t dim() const noexcept { return dim_; }

  double operator()(std::size_t i, std::size_t j) const noexcept {
    return data_[i * dim_ + j];
  }
  double& operator()(std::size_t i, std::size_t j) noexcept {
    return data_[i * dim_ + j];
  }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }

  Matrix transposed() const;

  Matrix& operator+=(const Matrix& other);
  Matrix& operator-=(const Matrix& other);
  Matrix& operator*=(double s);

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t dim_;
  std::vector<double> data_;
};

Matrix operator+(Matrix a, const Matrix& b);
Matrix operator-(Matrix a, const Matrix& b);
Matrix operator*(double s, Matrix a);

/// Real symmetric matrix. Every write goes to both (i, j) and (j, i), so the
/// stored entries are exactly symmetric.
class SymMatrix {
 public:
  explicit SymMatrix(std::size_t dim) : m_(dim) {}
  SymMatrix(std::initializer_list<std::initializer_list<double>> rows);

  /// Throws std::invalid_argument unless `m` is exactly symmetric.
  static SymMatrix from_matrix(const Matrix& m);
  /// Returns (m + m^T) / 2.
  static SymMatrix symmetrize(const Matrix& m);
  static SymMatrix identity(std::size_t dim);
  static SymMatrix diagonal(std::span<const double> values);
  /// scale * v v^T
  static SymMatrix outer(std::span<const double> v, double scale = 1.0);

  std::size_t dim() const noexcept { return m_.dim(); }
  double operator()(std::size_t i, std::size_t j) const noexcept { return m_(i, j); }
  void set(std::size_t i, std::size_t j, double value) noexcept {
    m_(i, j) = value;
    m_(j, i) = value;
  }

  const Matrix& matrix() const noexcept { return m_; }

  SymMatrix& operator+=(const SymMatrix& other);
  SymMatrix& operator*=(double s);

  friend bool operator==(const SymMatrix&, const SymMatrix&) = default;

 private:
  Matrix m_;
};

/// Eigenvalues sorted non-increasing; column k of `eigenvectors` pairs with
/// eigenvalues[k].
struct Spectrum {
  Vector eigenvalues;
  Matrix eigenvectors{1};

  std::size_t dim() const noexcept { return eigenvalues.size(); }
  Vector vector(std::size_t k) const;
};

class ConvergenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kMaxEigenDim = 512;
inline constexpr int kJacobiMaxSweeps = 100;
inline constexpr double kJacobiRelTol = 1e-14;

/// Cyclic Jacobi diagonalization. Stops once the off-diagonal Frobenius mass
/// drops to kJacobiRelTol * ||a||_F; throws ConvergenceError after
/// kJacobiMaxSweeps sweeps.
Spectrum sym_eigen(const SymMatrix& a);

/// Same iteration without accumulating eigenvectors. Sorted non-increasing.
Vector sym_eigenvalues(const SymMatrix& a);

/// Largest singular value, sqrt(lambda_max(m^T m)).
double operator_norm(const Matrix& m);
double operator_norm(const SymMatrix& m);

double frobenius_norm(const Matrix& m);
double frobenius_norm(const SymMatrix& m);

Matrix mat_mul(const Matrix& a, const Matrix& b);
Vector mat_vec(const Matrix& a, std::span<const double> x);

bool is_psd(const SymMatrix& a, double tol);

double dot(std::span<const double> a, std::span<const double> b);
double norm2(std::span<const double> v);

/// u^T m v
double bilinear(std::span<const double> u, const Matrix& m, std::span<const double> v);

/// Q^T m Q
Matrix congruence(const Matrix& q, const Matrix& m);

}  // namespace rmpc
