#pragma once

#include <cstdint>
#include <vector>

#include "covnz/awd.hpp"
#include "covnz/linalg.hpp"
#include "covnz/stats.hpp"

namespace covnz {

struct GlobalHessian {
  SymMatrix h;  // D x D mean of the per-sample Hessians
  EigenDecomposition eig;
  int sample_count = 0;
  int skipped = 0;
};

// Dense accumulation of H = E_p[h_p] over the cached samples followed by a
// full eigendecomposition.
GlobalHessian assemble_global_hessian(const SampleCache& cache);

// V^T C V truncated to the leading top_n x top_n block.
SymMatrix project(const SymMatrix& c, const Matrix& v, int top_n);

// Scale-invariant correlation matrix R_ij = C_ij / sqrt(|C_ii C_jj|).
// Directions with a zero diagonal are dropped and reported.
struct Correlation {
  SymMatrix r;
  std::vector<int> dropped;
};
Correlation correlation_matrix(const SymMatrix& cp);

// mu = mean of |R_ij| over i != j.
double mean_offdiag(const SymMatrix& r);

// sqrt(2/pi) / sqrt(M), the expected |R_ij| under a Haar-random basis with M
// dominant spikes.
double theoretical_baseline(int m_spikes);

// M = number of eigenvalues >= threshold * lambda_max.
int estimate_effective_spikes(const Vector& descending, double threshold = 0.05);

struct ZScore {
  double mu_h0 = 0.0;        // 0.8 / sqrt(M), the tabulated null mean
  double mu_h0_exact = 0.0;  // sqrt(2/pi) / sqrt(M)
  double sigma_single = 0.0;
  double se = 0.0;
  double z = 0.0;
  double p_one_sided = 0.0;
};

// Null-hypothesis significance of an observed mean off-diagonal coupling:
// sigma_single = sqrt((1/M)(1 - 2/pi)), SE = sigma_single / D, and
// Z = (mu_obs - 0.8/sqrt(M)) / SE with the one-sided normal tail p.
ZScore z_score(double mu_obs, int m_spikes, int offdiag_dim);

// |AB - BA|_F / |AB|_F for symmetric A, B. Independent Haar-rotated spiked
// pairs sit near sqrt(2); commuting pairs give 0.
double commutativity_error(const SymMatrix& a, const SymMatrix& b);

// sum_i |C_ii| / sum_ij |C_ij|.
double alignment_ratio(const SymMatrix& cp);

// Rotation null for the alignment statistics: per trial the spectrum of C
// is re-embedded in a Haar-random basis and the top-N block is normalized.
// For Haar Q the projected block V^T (Q L Q^T) V equals F^T L F with F a
// Haar top_n-frame, which is what gets sampled. h_top, when non-empty,
// also yields the commutativity null against diag(h_top).
struct RotationBaseline {
  SymMatrix r_rand;  // first trial's correlation matrix
  double mu_rand = 0.0;
  double commut_rand = 0.0;
  int trials = 0;
};
RotationBaseline random_rotation_baseline(const SymMatrix& c, int top_n, int trials,
                                          std::uint64_t seed, const Vector& h_top);

// Log-log fit of C_ii against H_ii over the leading top_n directions.
FitResult power_law(const Vector& h_diag, const Vector& c_diag, int top_n);

// Moment-bound audit: (sigma_w^2/2B) H_ii^2 <= C_ii <= (sigma_w^2 kmax/2B) H_ii
// per direction (Cauchy-Schwarz below, kappa_max above), asserted only when
// every per-sample Hessian is PSD.
struct BoundsAudit {
  struct Row {
    int i;
    double h_ii;   // first-moment reconstruction over the same samples
    double c_ii;   // spectral (thm1) covariance diagonal
    double lower;
    double upper;
    bool pass_lower;
    bool pass_upper;
  };
  std::vector<Row> rows;
  double kappa_max = 0.0;
  double psd_fraction = 0.0;
  double pass_rate = 0.0;
  bool enforced = false;  // true when psd_fraction == 1
};

BoundsAudit bounds_audit(const SampleCache& cache, const Vector& c_thm1_diag,
                         const Vector& h_recon_diag, double sigma_w_sq, int batch,
                         int top_n);

}  // namespace covnz
