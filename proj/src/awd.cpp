#include "covnz/awd.hpp"

#include <algorithm>
#include <cmath>

#include "covnz/parallel.hpp"

namespace covnz {

AwdPerturbation awd_perturbation(const Matrix& w, const Vector& a, const Vector& delta_a) {
  if (w.cols() != a.size() || a.size() != delta_a.size())
    throw ShapeError("awd_perturbation: shape mismatch");
  if (a.squaredNorm() == 0.0) throw DegenerateActivity("awd_perturbation: zero activity");
  AwdPerturbation p;
  p.wda = w * delta_a;
  p.a = a;
  return p;
}

SampleCache build_sample_cache(const MlpParams& params, const MlpConfig& cfg,
                               const Dataset& data) {
  const int n = data.size();
  SampleCache cache;
  cache.hessians.resize(n);
  cache.gz.resize(n);
  cache.degenerate.assign(n, 0);
  parallel_for_chunks(n, 32, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t i = lo; i < hi; ++i) {
      const ForwardTrace t =
          forward(params, cfg, data.inputs.row(i).transpose(), data.labels[i]);
      cache.gz[i] = focal_preact_gradient(t, params, cfg);
      if (t.activities[cfg.focal_layer].squaredNorm() == 0.0) {
        cache.degenerate[i] = 1;
        continue;
      }
      cache.hessians[i] = per_sample_hessian(t, params, cfg);
      cache.hessians[i].sample = static_cast<int>(i);
    }
  });
  int used = 0;
  for (int i = 0; i < n; ++i) {
    if (cache.degenerate[i]) {
      ++cache.skipped;
      continue;
    }
    ++used;
    cache.kappa_max = std::max(cache.kappa_max, cache.hessians[i].kappa.maxCoeff());
  }
  // Negative eigenvalues are judged against the global curvature scale:
  // samples whose entire spectrum sits at the numerical noise floor of the
  // batch would otherwise flip the PSD flag on roundoff alone.
  int psd_ok = 0;
  const double floor = 1e-10 * cache.kappa_max;
  for (int i = 0; i < n; ++i) {
    if (cache.degenerate[i]) continue;
    if (cache.hessians[i].psd() || cache.hessians[i].kappa.minCoeff() >= -floor) ++psd_ok;
  }
  cache.psd_fraction = used > 0 ? static_cast<double>(psd_ok) / used : 1.0;
  return cache;
}

namespace {

Vector vec_outer_row_major(const Vector& u, const Vector& v) {
  Vector out(u.size() * v.size());
  for (Eigen::Index i = 0; i < u.size(); ++i)
    for (Eigen::Index j = 0; j < v.size(); ++j) out[i * v.size() + j] = u[i] * v[j];
  return out;
}

// Per-pair worker shared by grad_diff_terms and covariance_awd. hw_out, when
// present, receives the unscaled per-sample products h_p dw_p; proj_out
// receives the local-basis perturbation projections keyed by sample.
struct PairAccum {
  Vector term_h;
  Vector term_g;
  int skipped = 0;
  std::vector<std::pair<int, Vector>> hw;     // (sample, h_p dw_p)
  std::vector<std::pair<int, Vector>> projs;  // (sample, local projection)
};

PairAccum process_pair(const SampleCache& cache, const MlpParams& params,
                       const MlpConfig& cfg, const MiniBatch& nu,
                       const Pairing& pairing, bool want_hw, bool want_proj) {
  const int d = cfg.focal_dim();
  const int b = nu.size();
  const auto& w_focal = params.weights[cfg.focal_layer];

  struct Slot {
    Vector hw, tii, proj;
    int sample = -1;
    bool ok = false;
  };
  std::vector<Slot> slots(b);
  parallel_for_chunks(b, 16, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      const int sp = nu.indices[k];
      if (cache.degenerate[sp]) continue;
      const PerSampleHessian& h = cache.hessians[sp];
      const int pp = pairing.partner[k];
      const Vector& a = h.activity;
      const Vector a_partner = cache.degenerate[pp]
                                   ? Vector(Vector::Zero(a.size()))
                                   : cache.hessians[pp].activity;
      const Vector delta_a = a_partner - a;
      AwdPerturbation pert;
      pert.wda = w_focal * delta_a;
      pert.a = a;
      pert.sample = sp;
      pert.partner = pp;
      Slot& s = slots[k];
      s.sample = sp;
      s.hw = hessian_action(h, pert.vec());
      s.tii = vec_outer_row_major(cache.gz[sp], delta_a);
      if (want_proj) s.proj = local_projection(h, pert);
      s.ok = true;
    }
  });

  PairAccum acc;
  acc.term_h = Vector::Zero(d);
  acc.term_g = Vector::Zero(d);
  for (int k = 0; k < b; ++k) {
    if (!slots[k].ok) {
      ++acc.skipped;
      continue;
    }
    acc.term_h += slots[k].hw;
    acc.term_g += slots[k].tii;
    if (want_hw) acc.hw.emplace_back(slots[k].sample, std::move(slots[k].hw));
    if (want_proj) acc.projs.emplace_back(slots[k].sample, std::move(slots[k].proj));
  }
  acc.term_h /= static_cast<double>(b);
  acc.term_g /= static_cast<double>(b);
  return acc;
}

}  // namespace

GradDiffTerms grad_diff_terms(const MlpParams& params, const MlpConfig& cfg,
                              const Dataset& data, const MiniBatch& nu,
                              const MiniBatch& mu, const Pairing& pairing) {
  if (pairing.partner.size() != nu.indices.size())
    throw ShapeError("grad_diff_terms: pairing does not match the nu batch");
  for (int partner : pairing.partner) {
    if (std::find(mu.indices.begin(), mu.indices.end(), partner) == mu.indices.end())
      throw PairingError("grad_diff_terms: partner outside the mu batch");
  }
  const SampleCache cache = build_sample_cache(params, cfg, data);
  PairAccum acc = process_pair(cache, params, cfg, nu, pairing, false, false);
  GradDiffTerms out;
  out.term_hessian = std::move(acc.term_h);
  out.term_gradient = std::move(acc.term_g);
  out.skipped = acc.skipped;
  return out;
}

GradientMoments gradient_moments(const MlpParams& params, const MlpConfig& cfg,
                                 const Dataset& data) {
  const int d = cfg.focal_dim();
  const int n = data.size();
  GradientMoments m;
  m.sum_outer = Matrix::Zero(d, d);
  m.sum_grad = Vector::Zero(d);
  m.count = n;
  // Per-sample gradients in row blocks, then one triangular rank-k update
  // per block; block boundaries are fixed so the reduction is deterministic.
  const int block = 256;
  for (int lo = 0; lo < n; lo += block) {
    const int hi = std::min(lo + block, n);
    Matrix g(d, hi - lo);
    parallel_for_chunks(hi - lo, 16, [&](std::size_t a, std::size_t b) {
      for (std::size_t k = a; k < b; ++k) {
        const int i = lo + static_cast<int>(k);
        const ForwardTrace t =
            forward(params, cfg, data.inputs.row(i).transpose(), data.labels[i]);
        g.col(k) = per_sample_gradient(t, params, cfg);
      }
    });
    m.sum_outer.selfadjointView<Eigen::Lower>().rankUpdate(g, 1.0);
    m.sum_grad += g.rowwise().sum();
  }
  return m;
}

SymMatrix GradientMoments::covariance(int batch, bool centered) const {
  if (count < 1) throw InsufficientData("covariance: empty dataset");
  const double n = static_cast<double>(count);
  Matrix c = sum_outer / n;
  if (centered) {
    const Vector mean = sum_grad / n;
    c.selfadjointView<Eigen::Lower>().rankUpdate(mean, -1.0);
  }
  c /= static_cast<double>(batch);
  return SymMatrix::from_lower(c);
}

SymMatrix GradientMoments::fisher() const {
  if (count < 1) throw InsufficientData("fisher: empty dataset");
  return SymMatrix::from_lower(sum_outer / static_cast<double>(count));
}

SymMatrix covariance_empirical(const MlpParams& params, const MlpConfig& cfg,
                               const Dataset& data, int batch, bool centered) {
  if (data.size() < 1) throw InsufficientData("covariance_empirical: empty dataset");
  return gradient_moments(params, cfg, data).covariance(batch, centered);
}

AwdEstimate covariance_awd(const SampleCache& cache, const MlpParams& params,
                           const MlpConfig& cfg, const Dataset& data, int batch,
                           int n_pairs, std::uint64_t seed, PairSource source) {
  if (n_pairs < 1) throw InsufficientPairs("covariance_awd: n_pairs must be >= 1");
  const int d = cfg.focal_dim();
  Matrix raw = Matrix::Zero(d, d), hh = Matrix::Zero(d, d), hg = Matrix::Zero(d, d),
         gg = Matrix::Zero(d, d), hh_sd = Matrix::Zero(d, d);
  AwdEstimate est;
  est.cov.pair_count = n_pairs;

  // Sequential mode walks consecutive batches of stratified epoch
  // partitions; independent mode draws two fresh batches per pair.
  std::vector<MiniBatch> stream;
  std::size_t stream_pos = 0;
  int stream_epoch = 0;
  auto next_sequential = [&]() -> MiniBatch {
    if (stream_pos >= stream.size()) {
      stream = stratified_batches(data, batch, Rng::derive(seed, 0x51u), stream_epoch++);
      stream_pos = 0;
    }
    return stream[stream_pos++];
  };

  for (int k = 0; k < n_pairs; ++k) {
    MiniBatch mu, nu;
    if (source == PairSource::independent) {
      Rng rng(Rng::derive(seed, 0x17u, static_cast<std::uint64_t>(k)));
      mu = draw_stratified_batch(data, batch, rng);
      nu = draw_stratified_batch(data, batch, rng);
    } else {
      mu = next_sequential();
      nu = next_sequential();
    }
    const Pairing pairing = match_pairs(nu, mu, data);
    PairAccum acc = process_pair(cache, params, cfg, nu, pairing, true, true);
    est.cov.skipped_samples += acc.skipped;

    const Vector g = acc.term_h + acc.term_g;
    raw.selfadjointView<Eigen::Lower>().rankUpdate(g, 0.5);
    hh.selfadjointView<Eigen::Lower>().rankUpdate(acc.term_h, 0.5);
    gg.selfadjointView<Eigen::Lower>().rankUpdate(acc.term_g, 0.5);
    hg.selfadjointView<Eigen::Lower>().rankUpdate(acc.term_h, acc.term_g, 0.5);
    if (!acc.hw.empty()) {
      Matrix y(d, acc.hw.size());
      for (std::size_t c = 0; c < acc.hw.size(); ++c) y.col(c) = acc.hw[c].second;
      hh_sd.selfadjointView<Eigen::Lower>().rankUpdate(
          y, 0.5 / (static_cast<double>(batch) * batch));
    }
    for (auto& [sample, proj] : acc.projs)
      est.groups.by_sample[sample].push_back(std::move(proj));
  }

  const double inv = 1.0 / static_cast<double>(n_pairs);
  est.cov.c_awd_raw = SymMatrix::from_lower(raw * inv);
  est.cov.c_hh = SymMatrix::from_lower(hh * inv);
  est.cov.c_hg = SymMatrix::from_lower(hg * inv);
  est.cov.c_gg = SymMatrix::from_lower(gg * inv);
  est.cov.c_hh_sd = SymMatrix::from_lower(hh_sd * inv);
  return est;
}

Vector local_projection(const PerSampleHessian& h, const AwdPerturbation& pert) {
  // u_m . vec(DW) collapses to (hzvec_m^T wda) / |a| for the rank-1 AWD
  // perturbation of the same sample.
  return (h.hz_vectors.transpose() * pert.wda) / std::sqrt(h.activity_sq);
}

PerturbationStats perturbation_stats(const SampleCache& cache,
                                     const PerturbationGroups& groups) {
  if (groups.by_sample.empty())
    throw InsufficientPairs("perturbation_stats: no perturbations provided");
  PerturbationStats stats;
  const double floor = 1e-8 * cache.kappa_max;
  std::vector<double> diag_entries;
  std::vector<double> offdiag_entries;
  for (const auto& [sample, projs] : groups.by_sample) {
    const PerSampleHessian& h = cache.hessians[sample];
    const int k = h.d_out();
    Matrix m = Matrix::Zero(k, k);
    for (const Vector& c : projs) m.selfadjointView<Eigen::Lower>().rankUpdate(c, 1.0);
    m /= static_cast<double>(projs.size());
    Matrix m_full = SymMatrix::from_lower(m).mat();
    stats.samples.push_back(sample);
    for (int i = 0; i < k; ++i) {
      if (h.kappa[i] <= floor) continue;
      diag_entries.push_back(m_full(i, i));
      for (int j = 0; j < k; ++j) {
        if (j == i || h.kappa[j] <= floor) continue;
        offdiag_entries.push_back(std::abs(m_full(i, j)));
      }
    }
    stats.m_p.push_back(std::move(m_full));
  }
  if (diag_entries.empty())
    throw InsufficientPairs("perturbation_stats: no modes above the curvature floor");
  stats.retained_modes = static_cast<int>(diag_entries.size());
  stats.sigma_w_sq = pairwise_sum(diag_entries) / diag_entries.size();
  if (!offdiag_entries.empty() && stats.sigma_w_sq > 0.0) {
    stats.offdiag_over_diag =
        (pairwise_sum(offdiag_entries) / offdiag_entries.size()) / stats.sigma_w_sq;
  }
  double var = 0.0;
  for (double v : diag_entries) var += (v - stats.sigma_w_sq) * (v - stats.sigma_w_sq);
  var /= diag_entries.size();
  if (stats.sigma_w_sq > 0.0) stats.diag_cv = std::sqrt(var) / stats.sigma_w_sq;
  return stats;
}

Matrix local_global_overlaps(const PerSampleHessian& h, const Matrix& basis_top) {
  const int d_out = h.d_out(), d_in = h.d_in();
  if (basis_top.rows() != h.dim())
    throw ShapeError("local_global_overlaps: basis dimension mismatch");
  const Vector ahat = h.activity / std::sqrt(h.activity_sq);
  Matrix y(d_out, basis_top.cols());
  for (int r = 0; r < d_out; ++r)
    y.row(r) = ahat.transpose() * basis_top.middleRows(r * d_in, d_in);
  return h.hz_vectors.transpose() * y;
}

KronProjectionMoments kron_projection_moments(const SampleCache& cache,
                                              const Matrix& basis_top,
                                              bool want_full_second) {
  const int top_n = static_cast<int>(basis_top.cols());
  struct Partial {
    Vector first, second;
    Matrix full;
    int used = 0;
  };
  auto total = parallel_reduce_chunks<Partial>(
      cache.size(), 32,
      Partial{Vector::Zero(top_n), Vector::Zero(top_n),
              want_full_second ? Matrix::Zero(top_n, top_n) : Matrix(), 0},
      [&](std::size_t lo, std::size_t hi) {
        Partial p{Vector::Zero(top_n), Vector::Zero(top_n),
                  want_full_second ? Matrix::Zero(top_n, top_n) : Matrix(), 0};
        for (std::size_t s = lo; s < hi; ++s) {
          if (cache.degenerate[s]) continue;
          const PerSampleHessian& h = cache.hessians[s];
          const Matrix overlaps = local_global_overlaps(h, basis_top);
          const Matrix sq = overlaps.cwiseProduct(overlaps);
          p.first += sq.transpose() * h.kappa;
          const Vector k2 = h.kappa.cwiseProduct(h.kappa);
          p.second += sq.transpose() * k2;
          if (want_full_second) {
            const Matrix weighted = h.kappa.cwiseAbs().asDiagonal() * overlaps;
            p.full.selfadjointView<Eigen::Lower>().rankUpdate(weighted.transpose(), 1.0);
          }
          ++p.used;
        }
        return p;
      },
      [&](Partial& a, const Partial& b) {
        a.first += b.first;
        a.second += b.second;
        if (want_full_second) a.full += b.full;
        a.used += b.used;
      });
  if (total.used == 0) throw EmptyHessian("kron_projection_moments: no usable samples");
  KronProjectionMoments out;
  const double inv = 1.0 / total.used;
  out.first_diag = total.first * inv;
  out.second_diag = total.second * inv;
  if (want_full_second) out.second_full = total.full * inv;
  out.samples_used = total.used;
  return out;
}

SymMatrix covariance_theorem1(const SampleCache& cache, double sigma_w_sq, int batch,
                              const Matrix& basis_top) {
  if (sigma_w_sq < 0.0) throw InvalidMatrix("covariance_theorem1: negative sigma_w^2");
  KronProjectionMoments m = kron_projection_moments(cache, basis_top, true);
  const double scale = sigma_w_sq / (2.0 * batch);
  return SymMatrix::from_lower(scale * m.second_full);
}

FisherDiagnostic fisher_diagnostic(const GradientMoments& moments, const MlpConfig& cfg,
                                   const SymMatrix& hessian) {
  FisherDiagnostic out;
  out.fisher = moments.fisher();
  out.mse_caveat = cfg.loss != LossKind::cross_entropy;
  const double hn = hessian.frobenius();
  out.rel_gap = hn > 0.0 ? (out.fisher.mat() - hessian.mat()).norm() / hn
                         : (out.fisher.frobenius() > 0.0 ? 1.0 : 0.0);
  return out;
}

}  // namespace covnz
