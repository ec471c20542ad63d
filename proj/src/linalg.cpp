#include "covnz/linalg.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#ifdef COVNZ_USE_LAPACK
#include <lapacke.h>
#endif

namespace covnz {

SymMatrix SymMatrix::symmetrized(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidMatrix("symmetrized: matrix is not square");
  SymMatrix s;
  s.m_ = 0.5 * (a + a.transpose());
  return s;
}

SymMatrix SymMatrix::from_lower(const Matrix& a) {
  if (a.rows() != a.cols()) throw InvalidMatrix("from_lower: matrix is not square");
  SymMatrix s;
  s.m_ = a;
  const Eigen::Index n = a.rows();
  for (Eigen::Index j = 0; j < n; ++j)
    for (Eigen::Index i = j + 1; i < n; ++i) s.m_(j, i) = s.m_(i, j);
  return s;
}

SymMatrix SymMatrix::from_symmetric(const Matrix& a, double tol) {
  if (a.rows() != a.cols()) throw InvalidMatrix("from_symmetric: matrix is not square");
  const double gap = (a - a.transpose().eval()).cwiseAbs().maxCoeff();
  if (gap > tol) throw InvalidMatrix("from_symmetric: asymmetry " + std::to_string(gap));
  return from_lower(a);
}

SymMatrix SymMatrix::identity(Eigen::Index dim) {
  SymMatrix s;
  s.m_ = Matrix::Identity(dim, dim);
  return s;
}

namespace {

// Descending reorder with stable ties, then sign normalization.
void finalize_eig(Vector& values, Matrix* vectors) {
  const Eigen::Index n = values.size();
  std::vector<Eigen::Index> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return values[a] > values[b]; });
  Vector sorted(n);
  for (Eigen::Index i = 0; i < n; ++i) sorted[i] = values[idx[i]];
  values = std::move(sorted);
  if (!vectors) return;
  Matrix v(n, n);
  for (Eigen::Index i = 0; i < n; ++i) v.col(i) = vectors->col(idx[i]);
  for (Eigen::Index i = 0; i < n; ++i) {
    Eigen::Index arg = 0;
    double best = -1.0;
    for (Eigen::Index r = 0; r < n; ++r) {
      const double m = std::abs(v(r, i));
      if (m > best) {
        best = m;
        arg = r;
      }
    }
    if (v(arg, i) < 0.0) v.col(i) = -v.col(i);
  }
  *vectors = std::move(v);
}

void solve_sym(const SymMatrix& m, Vector& values, Matrix* vectors) {
  if (!m.all_finite()) throw InvalidMatrix("sym_eig: non-finite entries");
  const Eigen::Index n = m.dim();
  if (n == 0) throw InvalidMatrix("sym_eig: empty matrix");
#ifdef COVNZ_USE_LAPACK
  Matrix work = m.mat();
  values.resize(n);
  const int info = LAPACKE_dsyevd(LAPACK_COL_MAJOR, vectors ? 'V' : 'N', 'L',
                                  static_cast<lapack_int>(n), work.data(),
                                  static_cast<lapack_int>(n), values.data());
  if (info != 0) throw InvalidMatrix("sym_eig: dsyevd failed with info " + std::to_string(info));
  if (vectors) *vectors = work;
#else
  Eigen::SelfAdjointEigenSolver<Matrix> es(m.mat(),
                                           vectors ? Eigen::ComputeEigenvectors
                                                   : Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) throw InvalidMatrix("sym_eig: solver failed");
  values = es.eigenvalues();
  if (vectors) *vectors = es.eigenvectors();
#endif
  finalize_eig(values, vectors);
}

}  // namespace

EigenDecomposition sym_eig(const SymMatrix& m) {
  EigenDecomposition d;
  solve_sym(m, d.values, &d.vectors);
  return d;
}

Vector sym_eigvals(const SymMatrix& m) {
  Vector values;
  solve_sym(m, values, nullptr);
  return values;
}

namespace {

// Fixed fill order (row by row) so the draw sequence is part of the contract.
Matrix gaussian_matrix(int rows, int cols, Rng& rng) {
  Matrix g(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) g(i, j) = rng.normal();
  return g;
}

Matrix haar_from_gaussian(const Matrix& g) {
  Eigen::HouseholderQR<Matrix> qr(g);
  Matrix q = qr.householderQ() * Matrix::Identity(g.rows(), g.cols());
  // Sign correction by diag(R) makes the distribution exactly Haar.
  for (int j = 0; j < g.cols(); ++j) {
    if (qr.matrixQR()(j, j) < 0.0) q.col(j) = -q.col(j);
  }
  return q;
}

}  // namespace

Matrix random_orthogonal(int dim, std::uint64_t seed) {
  if (dim < 1) throw InvalidDimension("random_orthogonal: dim must be >= 1");
  Rng rng(seed);
  return haar_from_gaussian(gaussian_matrix(dim, dim, rng));
}

Matrix haar_frame(int dim, int cols, Rng& rng) {
  if (dim < 1 || cols < 1 || cols > dim)
    throw InvalidDimension("haar_frame: need 1 <= cols <= dim");
  return haar_from_gaussian(gaussian_matrix(dim, cols, rng));
}

double pairwise_sum(std::span<const double> v) {
  const std::size_t n = v.size();
  if (n == 0) return 0.0;
  if (n <= 32) {
    double s = 0.0;
    for (double x : v) s += x;
    return s;
  }
  const std::size_t half = n / 2;
  return pairwise_sum(v.first(half)) + pairwise_sum(v.subspan(half));
}

}  // namespace covnz
