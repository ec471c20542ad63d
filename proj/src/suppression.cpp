#include "covnz/suppression.hpp"

#include <cmath>

#include "covnz/parallel.hpp"
#include "covnz/spectral.hpp"

namespace covnz {

void SuppressionConfig::validate() const {
  if (theta < 0.0 || theta > 1.0) throw ConfigError("suppress: theta must be in [0,1]");
  if (eps_tail <= 0.0 || eps_bg <= 0.0)
    throw ConfigError("suppress: suppression scales must be positive");
}

StiffSet identify_stiff(const std::vector<Vector>& kappas, double theta) {
  if (kappas.empty()) throw EmptyHessian("identify_stiff: empty batch");
  double kmax = -std::numeric_limits<double>::infinity();
  for (const auto& k : kappas) kmax = std::max(kmax, k[0]);
  StiffSet s;
  s.tau = theta * kmax;
  for (std::size_t p = 0; p < kappas.size(); ++p)
    if (kappas[p][0] > s.tau) s.members.push_back(static_cast<int>(p));
  return s;
}

SuppressedSpectra suppress(const std::vector<Vector>& kappas, const SuppressionConfig& cfg) {
  cfg.validate();
  SuppressedSpectra out;
  out.stiff = identify_stiff(kappas, cfg.theta);
  std::vector<char> is_stiff(kappas.size(), 0);
  for (int p : out.stiff.members) is_stiff[p] = 1;

  if (cfg.homogenize) {
    if (out.stiff.members.empty())
      throw EmptyStiffSet("suppress: homogenization requires a nonempty stiff set");
    double sum = 0.0;
    for (int p : out.stiff.members) sum += kappas[p][0];
    out.kappa_bar_stiff = sum / out.stiff.members.size();
  }

  out.kappa_tilde.reserve(kappas.size());
  for (std::size_t p = 0; p < kappas.size(); ++p) {
    Vector kt = kappas[p];
    if (is_stiff[p]) {
      if (cfg.homogenize) kt[0] = out.kappa_bar_stiff;
    } else {
      kt[0] *= cfg.eps_bg;
    }
    for (Eigen::Index m = 1; m < kt.size(); ++m) kt[m] = cfg.eps_tail * kappas[p][m];
    out.kappa_tilde.push_back(std::move(kt));
  }
  return out;
}

Reconstruction reconstruct(const std::vector<Vector>& kappa_tilde,
                           const std::vector<const PerSampleHessian*>& batch,
                           const Matrix& basis_top) {
  if (kappa_tilde.size() != batch.size())
    throw ShapeError("reconstruct: spectra/batch size mismatch");
  if (batch.empty()) throw EmptyHessian("reconstruct: empty batch");
  const int top_n = static_cast<int>(basis_top.cols());
  const int d_out = batch[0]->d_out();

  struct Partial {
    Vector h, c2;
    Matrix cum;  // per-mode c2 contribution, d_out x top_n
  };
  auto total = parallel_reduce_chunks<Partial>(
      batch.size(), 16,
      Partial{Vector::Zero(top_n), Vector::Zero(top_n), Matrix::Zero(d_out, top_n)},
      [&](std::size_t lo, std::size_t hi) {
        Partial part{Vector::Zero(top_n), Vector::Zero(top_n), Matrix::Zero(d_out, top_n)};
        for (std::size_t p = lo; p < hi; ++p) {
          const Matrix overlaps = local_global_overlaps(*batch[p], basis_top);
          const Matrix sq = overlaps.cwiseProduct(overlaps);
          const Vector& kt = kappa_tilde[p];
          part.h += sq.transpose() * kt;
          const Vector kt2 = kt.cwiseProduct(kt);
          part.c2 += sq.transpose() * kt2;
          part.cum += kt2.asDiagonal() * sq;
        }
        return part;
      },
      [](Partial& a, const Partial& b) {
        a.h += b.h;
        a.c2 += b.c2;
        a.cum += b.cum;
      });

  const double inv = 1.0 / static_cast<double>(batch.size());
  Reconstruction out;
  out.h_diag = total.h * inv;
  out.c2_diag = total.c2 * inv;

  // Mode-cumulative share of c2 per direction, averaged over directions with
  // nonzero total mass.
  out.cumulative_mean = Vector::Zero(d_out);
  int used = 0;
  for (int i = 0; i < top_n; ++i) {
    const double tot = total.cum.col(i).sum();
    if (tot <= 0.0) continue;
    ++used;
    double running = 0.0;
    for (int m = 0; m < d_out; ++m) {
      running += total.cum(m, i);
      out.cumulative_mean[m] += running / tot;
    }
  }
  if (used > 0) out.cumulative_mean /= static_cast<double>(used);
  return out;
}

SuppressionExperiment suppression_experiment(const SampleCache& cache, const Dataset& data,
                                             const SuppressionConfig& cfg, int batch,
                                             int top_n, std::uint64_t seed) {
  cfg.validate();
  Rng rng(Rng::derive(seed, 0x5Cu));
  const MiniBatch mb = draw_stratified_batch(data, batch, rng);

  std::vector<const PerSampleHessian*> hs;
  std::vector<Vector> kappas;
  std::vector<int> samples;
  for (int idx : mb.indices) {
    if (cache.degenerate[idx]) continue;
    hs.push_back(&cache.hessians[idx]);
    kappas.push_back(cache.hessians[idx].kappa);
    samples.push_back(idx);
  }
  if (hs.empty()) throw EmptyHessian("suppression_experiment: batch has no usable samples");

  // Basis: eigenvectors of the batch-level Hessian, matching the
  // reconstruction's sample set.
  SampleCache batch_cache;
  batch_cache.degenerate.assign(hs.size(), 0);
  batch_cache.gz.resize(hs.size());
  for (const auto* h : hs) batch_cache.hessians.push_back(*h);
  const GlobalHessian gh = assemble_global_hessian(batch_cache);
  const int positive = static_cast<int>((gh.eig.values.array() > 0.0).count());
  const int fit_n = std::max(2, std::min(top_n, positive));
  const Matrix basis_top = gh.eig.vectors.leftCols(fit_n);

  SuppressionExperiment exp;
  exp.batch_size = static_cast<int>(hs.size());
  exp.top_n = fit_n;
  exp.batch_samples = samples;

  struct RungSpec {
    const char* name;
    SuppressionConfig cfg;
  };
  const RungSpec rungs[4] = {
      {"raw", {cfg.theta, 1.0, 1.0, false}},
      {"rank1", {0.0, cfg.eps_tail, 1.0, false}},
      {"rank1_bg", {cfg.theta, cfg.eps_tail, cfg.eps_bg, false}},
      {"homogenized", {cfg.theta, cfg.eps_tail, cfg.eps_bg, true}},
  };
  for (const auto& spec : rungs) {
    const SuppressedSpectra ss = suppress(kappas, spec.cfg);
    const Reconstruction rec = reconstruct(ss.kappa_tilde, hs, basis_top);
    SuppressionRung rung;
    rung.name = spec.name;
    rung.applied = spec.cfg;
    rung.stiff_count = static_cast<int>(ss.stiff.members.size());
    rung.kappa_bar = ss.kappa_bar_stiff;
    rung.fit = power_law(rec.h_diag, rec.c2_diag, fit_n);
    rung.h_diag = rec.h_diag;
    rung.c2_diag = rec.c2_diag;
    rung.first_mode_share = rec.cumulative_mean.size() > 0 ? rec.cumulative_mean[0] : 0.0;
    exp.rungs.push_back(std::move(rung));
  }
  return exp;
}

}  // namespace covnz
