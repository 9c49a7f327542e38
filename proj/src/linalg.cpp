#include "rmpc/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace rmpc {

Matrix::Matrix(std::size_t dim) : dim_(dim), data_(dim * dim, 0.0) {
  if (dim == 0) throw std::invalid_argument("matrix dimension must be >= 1");
}

Matrix::Matrix(std::initializer_list<std::initializer_list<double>> rows)
    : Matrix(rows.size()) {
  std::size_t i = 0;
  for (const auto& row : rows) {
    if (row.size() != dim_) throw std::invalid_argument("matrix must be square");
    std::copy(row.begin(), row.end(), data_.begin() + static_cast<std::ptrdiff_t>(i * dim_));
    ++i;
  }
}

Matrix Matrix::identity(std::size_t dim) {
  Matrix m(dim);
  for (std::size_t i = 0; i < dim; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(const std::vector<Vector>& rows) {
  Matrix m(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != rows.size()) throw std::invalid_argument("matrix must be square");
    for (std::size_t j = 0; j < rows.size(); ++j) m(i, j) = rows[i][j];
  }
  return m;
}

Matrix Matrix::transposed() const {
  Matrix t(dim_);
  for (std::size_t i = 0; i < dim_; ++i)
    for (std::size_t j = 0; j < dim_; ++j) t(j, i) = (*this)(i, j);
  return t;
}

Matrix& Matrix::operator+=(const Matrix& other) {
  if (other.dim_ != dim_) throw std::invalid_argument("dimension mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] += other.data_[k];
  return *this;
}

Matrix& Matrix::operator-=(const Matrix& other) {
  if (other.dim_ != dim_) throw std::invalid_argument("dimension mismatch");
  for (std::size_t k = 0; k < data_.size(); ++k) data_[k] -= other.data_[k];
  return *this;
}

Matrix& Matrix::operator*=(double s) {
  for (double& x : data_) x *= s;
  return *this;
}

Matrix operator+(Matrix a, const Matrix& b) { return a += b; }
Matrix operator-(Matrix a, const Matrix& b) { return a -= b; }
Matrix operator*(double s, Matrix a) { return a *= s; }

SymMatrix::SymMatrix(std::initializer_list<std::initializer_list<double>> rows)
    : m_(from_matrix(Matrix(rows)).m_) {}

SymMatrix SymMatrix::from_matrix(const Matrix& m) {
  const std::size_t d = m.dim();
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j)
      if (m(i, j) != m(j, i))
        throw std::invalid_argument("matrix is not symmetric at (" + std::to_string(i) + ", " +
                                    std::to_string(j) + ")");
  SymMatrix s(d);
  s.m_ = m;
  return s;
}

SymMatrix SymMatrix::symmetrize(const Matrix& m) {
  const std::size_t d = m.dim();
  SymMatrix s(d);
  for (std::size_t i = 0; i < d; ++i) {
    s.m_(i, i) = m(i, i);
    for (std::size_t j = i + 1; j < d; ++j) s.set(i, j, 0.5 * (m(i, j) + m(j, i)));
  }
  return s;
}

SymMatrix SymMatrix::identity(std::size_t dim) {
  SymMatrix s(dim);
  s.m_ = Matrix::identity(dim);
  return s;
}

SymMatrix SymMatrix::diagonal(std::span<const double> values) {
  SymMatrix s(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) s.m_(i, i) = values[i];
  return s;
}

SymMatrix SymMatrix::outer(std::span<const double> v, double scale) {
  SymMatrix s(v.size());
  for (std::size_t i = 0; i < v.size(); ++i)
    for (std::size_t j = i; j < v.size(); ++j) s.set(i, j, scale * v[i] * v[j]);
  return s;
}

SymMatrix& SymMatrix::operator+=(const SymMatrix& other) {
  m_ += other.m_;
  return *this;
}

SymMatrix& SymMatrix::operator*=(double s) {
  m_ *= s;
  return *this;
}

Vector Spectrum::vector(std::size_t k) const {
  const std::size_t d = eigenvectors.dim();
  Vector u(d);
  for (std::size_t i = 0; i < d; ++i) u[i] = eigenvectors(i, k);
  return u;
}

namespace {

double off_diagonal_norm(const Matrix& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.dim(); ++i)
    for (std::size_t j = i + 1; j < a.dim(); ++j) s += a(i, j) * a(i, j);
  return std::sqrt(2.0 * s);
}

// Diagonalizes `a` in place; the eigenvalues end up on the diagonal. When `v`
// is non-null it accumulates the rotations (columns are eigenvectors).
void jacobi(Matrix& a, Matrix* v) {
  const std::size_t d = a.dim();
  if (d > kMaxEigenDim)
    throw std::invalid_argument("eigensolver limited to d <= " + std::to_string(kMaxEigenDim));
  const double threshold = kJacobiRelTol * frobenius_norm(a);

  for (int sweep = 0;; ++sweep) {
    if (off_diagonal_norm(a) <= threshold) return;
    if (sweep == kJacobiMaxSweeps)
      throw ConvergenceError("Jacobi eigensolver did not converge in " +
                             std::to_string(kJacobiMaxSweeps) + " sweeps");

    for (std::size_t p = 0; p + 1 < d; ++p) {
      for (std::size_t q = p + 1; q < d; ++q) {
        const double apq = a(p, q);
        if (apq == 0.0) continue;
        const double theta = (a(q, q) - a(p, p)) / (2.0 * apq);
        double t;
        if (std::abs(theta) > 1e150) {
          t = 0.5 / theta;
        } else {
          t = 1.0 / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
          if (theta < 0.0) t = -t;
        }
        const double c = 1.0 / std::sqrt(t * t + 1.0);
        const double s = t * c;

        a(p, p) -= t * apq;
        a(q, q) += t * apq;
        a(p, q) = 0.0;
        a(q, p) = 0.0;
        for (std::size_t k = 0; k < d; ++k) {
          if (k == p || k == q) continue;
          const double akp = a(k, p);
          const double akq = a(k, q);
          const double new_kp = c * akp - s * akq;
          const double new_kq = s * akp + c * akq;
          a(k, p) = new_kp;
          a(p, k) = new_kp;
          a(k, q) = new_kq;
          a(q, k) = new_kq;
        }
        if (v != nullptr) {
          Matrix& vm = *v;
          for (std::size_t k = 0; k < d; ++k) {
            const double vkp = vm(k, p);
            const double vkq = vm(k, q);
            vm(k, p) = c * vkp - s * vkq;
            vm(k, q) = s * vkp + c * vkq;
          }
        }
      }
    }
  }
}

}  // namespace

Spectrum sym_eigen(const SymMatrix& a) {
  const std::size_t d = a.dim();
  Matrix work = a.matrix();
  Matrix v = Matrix::identity(d);
  jacobi(work, &v);

  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t x, std::size_t y) { return work(x, x) > work(y, y); });

  Spectrum s;
  s.eigenvalues.resize(d);
  s.eigenvectors = Matrix(d);
  for (std::size_t k = 0; k < d; ++k) {
    s.eigenvalues[k] = work(order[k], order[k]);
    for (std::size_t i = 0; i < d; ++i) s.eigenvectors(i, k) = v(i, order[k]);
  }
  return s;
}

Vector sym_eigenvalues(const SymMatrix& a) {
  Matrix work = a.matrix();
  jacobi(work, nullptr);
  Vector ev(a.dim());
  for (std::size_t i = 0; i < ev.size(); ++i) ev[i] = work(i, i);
  std::sort(ev.begin(), ev.end(), std::greater<>());
  return ev;
}

double operator_norm(const Matrix& m) {
  const std::size_t d = m.dim();
  SymMatrix gram(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < d; ++k) s += m(k, i) * m(k, j);
      gram.set(i, j, s);
    }
  const double top = sym_eigenvalues(gram).front();
  return std::sqrt(std::max(top, 0.0));
}

double operator_norm(const SymMatrix& m) { return operator_norm(m.matrix()); }

double frobenius_norm(const Matrix& m) {
  double s = 0.0;
  for (double x : m.data()) s += x * x;
  return std::sqrt(s);
}

double frobenius_norm(const SymMatrix& m) { return frobenius_norm(m.matrix()); }

Matrix mat_mul(const Matrix& a, const Matrix& b) {
  const std::size_t d = a.dim();
  if (b.dim() != d) throw std::invalid_argument("mat_mul: dimension mismatch");
  Matrix c(d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t k = 0; k < d; ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      for (std::size_t j = 0; j < d; ++j) c(i, j) += aik * b(k, j);
    }
  return c;
}

Vector mat_vec(const Matrix& a, std::span<const double> x) {
  const std::size_t d = a.dim();
  if (x.size() != d) throw std::invalid_argument("mat_vec: dimension mismatch");
  Vector y(d, 0.0);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) y[i] += a(i, j) * x[j];
  return y;
}

bool is_psd(const SymMatrix& a, double tol) {
  if (tol < 0.0) throw std::invalid_argument("is_psd: tol must be >= 0");
  return sym_eigenvalues(a).back() >= -tol;
}

double dot(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw std::invalid_argument("dot: length mismatch");
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

double norm2(std::span<const double> v) { return std::sqrt(dot(v, v)); }

double bilinear(std::span<const double> u, const Matrix& m, std::span<const double> v) {
  return dot(u, mat_vec(m, v));
}

Matrix congruence(const Matrix& q, const Matrix& m) {
  return mat_mul(q.transposed(), mat_mul(m, q));
}

}  // namespace rmpc
