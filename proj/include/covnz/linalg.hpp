#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <span>
#include <vector>

#include "covnz/error.hpp"
#include "covnz/rng.hpp"

namespace covnz {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Dense symmetric matrix. The wrapped storage is kept exactly symmetric:
// every constructor either mirrors one triangle or averages the two, so
// entry (i,j) and (j,i) are the same double, bit for bit.
class SymMatrix {
public:
  SymMatrix() = default;
  explicit SymMatrix(Eigen::Index dim) : m_(Matrix::Zero(dim, dim)) {}

  // 0.5*(a + a^T); the commutative average makes the result exactly symmetric.
  static SymMatrix symmetrized(const Matrix& a);

  // Mirrors the lower triangle (used after triangular rank updates).
  static SymMatrix from_lower(const Matrix& a);

  // Requires max |a - a^T| <= tol, then mirrors the lower triangle.
  static SymMatrix from_symmetric(const Matrix& a, double tol = 0.0);

  static SymMatrix identity(Eigen::Index dim);

  Eigen::Index dim() const { return m_.rows(); }
  double operator()(Eigen::Index i, Eigen::Index j) const { return m_(i, j); }
  void set(Eigen::Index i, Eigen::Index j, double v) {
    m_(i, j) = v;
    m_(j, i) = v;
  }

  const Matrix& mat() const { return m_; }
  Vector diagonal() const { return m_.diagonal(); }
  double trace() const { return m_.trace(); }
  double frobenius() const { return m_.norm(); }
  bool all_finite() const { return m_.allFinite(); }

private:
  explicit SymMatrix(Matrix m) : m_(std::move(m)) {}
  Matrix m_;
};

struct EigenDecomposition {
  Vector values;   // descending
  Matrix vectors;  // column i pairs with values[i]; orthonormal
};

// Full spectrum of a symmetric matrix, descending. Eigenvalue ties keep the
// underlying solver's order; each eigenvector is sign-normalized so its
// largest-magnitude entry (first such entry on ties) is positive.
EigenDecomposition sym_eig(const SymMatrix& m);

// Eigenvalues only, descending.
Vector sym_eigvals(const SymMatrix& m);

// Haar-distributed orthogonal matrix: QR of a Gaussian matrix with the
// column signs corrected by the sign of R's diagonal.
Matrix random_orthogonal(int dim, std::uint64_t seed);

// First `cols` columns of a Haar orthogonal matrix, drawn directly.
Matrix haar_frame(int dim, int cols, Rng& rng);

// Tree (pairwise) summation; deterministic and low-error.
double pairwise_sum(std::span<const double> v);

}  // namespace covnz
