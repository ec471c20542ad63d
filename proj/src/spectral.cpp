#include "covnz/spectral.hpp"

#include <cmath>

#include "covnz/parallel.hpp"

namespace covnz {

GlobalHessian assemble_global_hessian(const SampleCache& cache) {
  GlobalHessian g;
  int dim = 0;
  for (int i = 0; i < cache.size(); ++i) {
    if (!cache.degenerate[i]) {
      dim = cache.hessians[i].dim();
      break;
    }
  }
  if (dim == 0) throw EmptyHessian("assemble_global_hessian: every sample is degenerate");

  auto acc = parallel_reduce_chunks<Matrix>(
      cache.size(), 64, Matrix(Matrix::Zero(dim, dim)),
      [&](std::size_t lo, std::size_t hi) {
        Matrix part = Matrix::Zero(dim, dim);
        for (std::size_t s = lo; s < hi; ++s) {
          if (cache.degenerate[s]) continue;
          const PerSampleHessian& h = cache.hessians[s];
          const int d_in = h.d_in(), d_out = h.d_out();
          const Matrix aat = h.activity * h.activity.transpose();
          for (int r = 0; r < d_out; ++r)
            for (int c = 0; c <= r; ++c)
              part.block(r * d_in, c * d_in, d_in, d_in) += h.hz(r, c) * aat;
        }
        return part;
      },
      [](Matrix& a, const Matrix& b) { a += b; });

  for (int i = 0; i < cache.size(); ++i) {
    if (cache.degenerate[i])
      ++g.skipped;
    else
      ++g.sample_count;
  }
  acc /= static_cast<double>(g.sample_count);
  g.h = SymMatrix::from_lower(acc);
  g.eig = sym_eig(g.h);
  return g;
}

SymMatrix project(const SymMatrix& c, const Matrix& v, int top_n) {
  if (v.rows() != c.dim()) throw ShapeError("project: basis row count mismatch");
  if (top_n < 1 || top_n > v.cols()) throw ShapeError("project: top_n out of range");
  const auto vt = v.leftCols(top_n);
  return SymMatrix::symmetrized(vt.transpose() * c.mat() * vt);
}

Correlation correlation_matrix(const SymMatrix& cp) {
  const Eigen::Index n = cp.dim();
  Correlation out;
  std::vector<Eigen::Index> keep;
  for (Eigen::Index i = 0; i < n; ++i) {
    if (cp(i, i) != 0.0)
      keep.push_back(i);
    else
      out.dropped.push_back(static_cast<int>(i));
  }
  if (keep.empty()) throw DegenerateCovariance("correlation_matrix: all diagonals are zero");
  const Eigen::Index m = static_cast<Eigen::Index>(keep.size());
  SymMatrix r(m);
  for (Eigen::Index a = 0; a < m; ++a) {
    r.set(a, a, 1.0);
    for (Eigen::Index b = 0; b < a; ++b) {
      const double denom =
          std::sqrt(std::abs(cp(keep[a], keep[a]) * cp(keep[b], keep[b])));
      r.set(a, b, cp(keep[a], keep[b]) / denom);
    }
  }
  out.r = std::move(r);
  return out;
}

double mean_offdiag(const SymMatrix& r) {
  const Eigen::Index n = r.dim();
  if (n < 2) throw ShapeError("mean_offdiag: need at least a 2x2 matrix");
  std::vector<double> vals;
  vals.reserve(static_cast<std::size_t>(n) * (n - 1) / 2);
  for (Eigen::Index i = 0; i < n; ++i)
    for (Eigen::Index j = 0; j < i; ++j) vals.push_back(std::abs(r(i, j)));
  return pairwise_sum(vals) / static_cast<double>(vals.size());
}

double theoretical_baseline(int m_spikes) {
  if (m_spikes < 1) throw InvalidSpikes("theoretical_baseline: M must be >= 1");
  return std::sqrt(2.0 / M_PI) / std::sqrt(static_cast<double>(m_spikes));
}

int estimate_effective_spikes(const Vector& descending, double threshold) {
  if (descending.size() == 0)
    throw InvalidSpikes("estimate_effective_spikes: empty spectrum");
  const double cutoff = threshold * descending[0];
  int m = 0;
  for (Eigen::Index i = 0; i < descending.size(); ++i)
    if (descending[i] >= cutoff && descending[i] > 0.0) ++m;
  return m > 0 ? m : 1;
}

ZScore z_score(double mu_obs, int m_spikes, int offdiag_dim) {
  if (m_spikes < 1) throw InvalidSpikes("z_score: M must be >= 1");
  if (offdiag_dim < 2) throw ShapeError("z_score: dimension must be >= 2");
  ZScore out;
  const double m = static_cast<double>(m_spikes);
  out.mu_h0 = 0.8 / std::sqrt(m);
  out.mu_h0_exact = theoretical_baseline(m_spikes);
  out.sigma_single = std::sqrt((1.0 / m) * (1.0 - 2.0 / M_PI));
  out.se = out.sigma_single / static_cast<double>(offdiag_dim);
  out.z = (mu_obs - out.mu_h0) / out.se;
  out.p_one_sided = 0.5 * std::erfc(-out.z / std::sqrt(2.0));
  return out;
}

double commutativity_error(const SymMatrix& a, const SymMatrix& b) {
  if (a.dim() != b.dim()) throw ShapeError("commutativity_error: dimension mismatch");
  if (a.frobenius() == 0.0 || b.frobenius() == 0.0)
    throw DegenerateInput("commutativity_error: zero-norm input");
  const Matrix ab = a.mat() * b.mat();
  const double scale = ab.norm();
  if (scale == 0.0) return 0.0;  // orthogonal ranges commute
  return (ab - ab.transpose().eval()).norm() / scale;
}

double alignment_ratio(const SymMatrix& cp) {
  const double total = cp.mat().cwiseAbs().sum();
  if (total == 0.0) throw DegenerateInput("alignment_ratio: zero matrix");
  return cp.mat().diagonal().cwiseAbs().sum() / total;
}

RotationBaseline random_rotation_baseline(const SymMatrix& c, int top_n, int trials,
                                          std::uint64_t seed, const Vector& h_top) {
  if (trials < 1) throw InvalidDimension("random_rotation_baseline: trials must be >= 1");
  if (top_n < 2 || top_n > c.dim())
    throw ShapeError("random_rotation_baseline: top_n out of range");
  if (h_top.size() != 0 && h_top.size() != top_n)
    throw ShapeError("random_rotation_baseline: h_top length mismatch");
  const Vector spectrum = sym_eigvals(c);

  RotationBaseline out;
  out.trials = trials;
  std::vector<double> mus(trials), commuts(trials, 0.0);
  for (int t = 0; t < trials; ++t) {
    Rng rng(Rng::derive(seed, 0x2Fu, static_cast<std::uint64_t>(t)));
    const Matrix f = haar_frame(static_cast<int>(c.dim()), top_n, rng);
    const SymMatrix block =
        SymMatrix::symmetrized(f.transpose() * spectrum.asDiagonal() * f);
    const Correlation corr = correlation_matrix(block);
    mus[t] = mean_offdiag(corr.r);
    if (h_top.size() != 0) {
      SymMatrix h_diag(top_n);
      for (int i = 0; i < top_n; ++i) h_diag.set(i, i, h_top[i]);
      commuts[t] = commutativity_error(block, h_diag);
    }
    if (t == 0) out.r_rand = corr.r;
  }
  out.mu_rand = pairwise_sum(mus) / trials;
  if (h_top.size() != 0) out.commut_rand = pairwise_sum(commuts) / trials;
  return out;
}

FitResult power_law(const Vector& h_diag, const Vector& c_diag, int top_n) {
  if (h_diag.size() != c_diag.size()) throw ShapeError("power_law: length mismatch");
  if (top_n < 1 || top_n > h_diag.size()) throw ShapeError("power_law: top_n out of range");
  std::vector<double> x(h_diag.data(), h_diag.data() + top_n);
  std::vector<double> y(c_diag.data(), c_diag.data() + top_n);
  return ols_loglog(x, y);
}

BoundsAudit bounds_audit(const SampleCache& cache, const Vector& c_thm1_diag,
                         const Vector& h_recon_diag, double sigma_w_sq, int batch,
                         int top_n) {
  if (c_thm1_diag.size() < top_n || h_recon_diag.size() < top_n)
    throw ShapeError("bounds_audit: top_n exceeds available directions");
  BoundsAudit audit;
  audit.kappa_max = cache.kappa_max;
  audit.psd_fraction = cache.psd_fraction;
  audit.enforced = cache.psd_fraction >= 1.0;
  const double alpha = sigma_w_sq / (2.0 * batch);
  constexpr double kSlack = 1e-9;
  int passed = 0;
  for (int i = 0; i < top_n; ++i) {
    BoundsAudit::Row row;
    row.i = i;
    row.h_ii = h_recon_diag[i];
    row.c_ii = c_thm1_diag[i];
    row.lower = alpha * row.h_ii * row.h_ii;
    row.upper = alpha * audit.kappa_max * row.h_ii;
    row.pass_lower = row.c_ii >= row.lower - kSlack * std::abs(row.lower);
    row.pass_upper = row.c_ii <= row.upper + kSlack * std::abs(row.upper);
    if (row.pass_lower && row.pass_upper) ++passed;
    audit.rows.push_back(row);
  }
  audit.pass_rate = top_n > 0 ? static_cast<double>(passed) / top_n : 1.0;
  return audit;
}

}  // namespace covnz
