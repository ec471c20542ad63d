#pragma once

#include <cstdint>
#include <map>
#include <vector>

#include "covnz/data.hpp"
#include "covnz/model.hpp"

namespace covnz {

// Minimal-Frobenius-norm weight perturbation dual to an input-activity
// perturbation: DW* = (W da) a^T / |a|^2, a rank-1 outer product that
// satisfies DW* a = W da exactly. Stored factored as (W da, a).
struct AwdPerturbation {
  Vector wda;  // W * delta_a, length d_out
  Vector a;    // input activity, length d_in
  int sample = -1;
  int partner = -1;

  double a_sq() const { return a.squaredNorm(); }
  Matrix dense() const { return (wda * a.transpose()) / a_sq(); }
  Vector vec() const { return vec_row_major(dense()); }
};

AwdPerturbation awd_perturbation(const Matrix& w, const Vector& a, const Vector& delta_a);

// Precomputed per-sample quantities at a fixed checkpoint: factored
// per-sample Hessians, focal pre-activation gradients, and degeneracy flags
// for samples whose focal input activity vanishes.
struct SampleCache {
  std::vector<PerSampleHessian> hessians;  // empty for degenerate samples
  std::vector<Vector> gz;                  // focal pre-activation gradients
  std::vector<char> degenerate;
  int skipped = 0;
  double kappa_max = 0.0;   // max retained per-sample eigenvalue
  double psd_fraction = 1.0;

  int size() const { return static_cast<int>(degenerate.size()); }
};

SampleCache build_sample_cache(const MlpParams& params, const MlpConfig& cfg,
                               const Dataset& data);

// The two pieces of the AWD gradient-difference expansion for one batch
// pair: term_hessian = (1/B) sum_p h_p dw_p and term_gradient = (1/B)
// sum_p vec(g_z da_p^T), the closed-form contraction of (grad dw)^T grad l.
struct GradDiffTerms {
  Vector term_hessian;
  Vector term_gradient;
  int skipped = 0;
};

GradDiffTerms grad_diff_terms(const MlpParams& params, const MlpConfig& cfg,
                              const Dataset& data, const MiniBatch& nu,
                              const MiniBatch& mu, const Pairing& pairing);

// Running first/second moments of the per-sample focal gradients over a
// dataset; one pass serves the empirical covariance (centered or not) and
// the empirical Fisher.
struct GradientMoments {
  Matrix sum_outer;  // lower triangle of sum g g^T
  Vector sum_grad;
  long long count = 0;

  SymMatrix covariance(int batch, bool centered) const;
  SymMatrix fisher() const;  // (1/N) sum g g^T
};

GradientMoments gradient_moments(const MlpParams& params, const MlpConfig& cfg,
                                 const Dataset& data);

SymMatrix covariance_empirical(const MlpParams& params, const MlpConfig& cfg,
                               const Dataset& data, int batch, bool centered);

enum class PairSource { independent, sequential };

struct CovarianceSet {
  SymMatrix c_emp;  // filled by the caller; covariance_awd leaves it empty
  SymMatrix c_awd_raw;
  SymMatrix c_hh;
  SymMatrix c_hg;
  SymMatrix c_gg;
  SymMatrix c_hh_sd;
  int pair_count = 0;
  int skipped_samples = 0;
};

// Local-basis projections of the AWD perturbations, grouped by dataset
// sample; draw k for sample p holds Uhat_p^T DW ahat_p.
struct PerturbationGroups {
  std::map<int, std::vector<Vector>> by_sample;
};

struct AwdEstimate {
  CovarianceSet cov;
  PerturbationGroups groups;
};

// Monte-Carlo estimate of the AWD covariance ladder over n_pairs stratified
// batch pairs: accumulates (1/2) g g^T of term_hessian + term_gradient into
// c_awd_raw and the separated pieces into c_hh / c_hg / c_gg; c_hh_sd
// restricts the hh double sum to the sample diagonal p = q.
AwdEstimate covariance_awd(const SampleCache& cache, const MlpParams& params,
                           const MlpConfig& cfg, const Dataset& data, int batch,
                           int n_pairs, std::uint64_t seed, PairSource source);

// Projection of the perturbation onto the sample's local eigenbasis.
Vector local_projection(const PerSampleHessian& h, const AwdPerturbation& pert);

struct PerturbationStats {
  std::vector<int> samples;
  std::vector<Matrix> m_p;  // per-sample E_mu[proj proj^T]
  double sigma_w_sq = 0.0;
  double offdiag_over_diag = 0.0;  // mean |M_mn| (m != n) over mean M_mm
  double diag_cv = 0.0;            // spread of the retained diagonal entries
  int retained_modes = 0;
};

// M_p per sample plus the pooled weight-perturbation variance sigma_w^2 =
// mean of M_{p,mm} over retained modes (kappa_m above 1e-8 * kappa_max).
PerturbationStats perturbation_stats(const SampleCache& cache,
                                     const PerturbationGroups& groups);

// Overlap table P(m, i) = u_m . v_i computed through the Kronecker factors:
// u_m . v_i = hzvec_m^T unvec(v_i) ahat at O(d_out * d_in) per entry pair.
Matrix local_global_overlaps(const PerSampleHessian& h, const Matrix& basis_top);

// First and second moments of the projected per-sample spectra over the
// cache: first[i] = E_p[sum_m kappa_m (u_m.v_i)^2], second likewise with
// kappa^2; optionally the full second-moment matrix E_p[P^T diag(k^2) P].
struct KronProjectionMoments {
  Vector first_diag;
  Vector second_diag;
  Matrix second_full;  // top_n x top_n when requested, else empty
  int samples_used = 0;
};

KronProjectionMoments kron_projection_moments(const SampleCache& cache,
                                              const Matrix& basis_top,
                                              bool want_full_second);

// Spectral noise covariance in the top-N global eigenbasis (the thm1
// estimator): (sigma_w^2 / 2B) E_p[sum_m kappa_m^2 (u_m.v_i)(u_m.v_j)].
SymMatrix covariance_theorem1(const SampleCache& cache, double sigma_w_sq, int batch,
                              const Matrix& basis_top);

struct FisherDiagnostic {
  SymMatrix fisher;
  double rel_gap = 0.0;   // |F - H|_F / |H|_F
  bool mse_caveat = false;  // set when the loss is not a log-likelihood
};

FisherDiagnostic fisher_diagnostic(const GradientMoments& moments, const MlpConfig& cfg,
                                   const SymMatrix& hessian);

}  // namespace covnz
