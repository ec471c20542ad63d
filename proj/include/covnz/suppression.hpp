#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covnz/awd.hpp"
#include "covnz/stats.hpp"

namespace covnz {

struct SuppressionConfig {
  double theta = 0.05;      // relative stiffness threshold in [0, 1]
  double eps_tail = 1e-5;   // tail-mode (m > 1) scale
  double eps_bg = 1e-3;     // non-stiff leading-mode scale
  bool homogenize = false;  // replace stiff kappa_1 by the group mean

  void validate() const;
};

struct StiffSet {
  std::vector<int> members;  // positions into the batch spectra
  double tau = 0.0;          // theta * max_p kappa_1
};

// S = { p : kappa_1^(p) > theta * max_p kappa_1 }, strict inequality.
StiffSet identify_stiff(const std::vector<Vector>& kappas, double theta);

struct SuppressedSpectra {
  std::vector<Vector> kappa_tilde;
  StiffSet stiff;
  double kappa_bar_stiff = 0.0;  // mean leading eigenvalue over the stiff set
};

// Case table: stiff m=1 -> kappa_bar (homogenize) or unchanged; any m>1 ->
// eps_tail * kappa; non-stiff m=1 -> eps_bg * kappa.
SuppressedSpectra suppress(const std::vector<Vector>& kappas, const SuppressionConfig& cfg);

struct Reconstruction {
  Vector h_diag;            // (1/B) sum_p sum_m kt (u_m.v_i)^2
  Vector c2_diag;           // (1/B) sum_p sum_m kt^2 (u_m.v_i)^2  (= 2 C_ii / sigma_w^2)
  Vector cumulative_mean;   // mean over directions of the mode-cumulative c2 share
};

// Rebuilds the global diagonals from edited per-sample spectra, with the
// eigenvectors untouched. batch[k] must carry the spectra's eigenvectors in
// the original (descending) mode order.
Reconstruction reconstruct(const std::vector<Vector>& kappa_tilde,
                           const std::vector<const PerSampleHessian*>& batch,
                           const Matrix& basis_top);

struct SuppressionRung {
  std::string name;
  SuppressionConfig applied;
  int stiff_count = 0;
  double kappa_bar = 0.0;
  FitResult fit;
  Vector h_diag;
  Vector c2_diag;
  double first_mode_share = 0.0;  // cumulative_mean[0]
};

struct SuppressionExperiment {
  std::vector<SuppressionRung> rungs;  // raw, rank1, rank1+bg, homogenized
  int batch_size = 0;
  int top_n = 0;
  std::vector<int> batch_samples;
};

// The four-rung ablation on one stratified evaluation batch: raw spectra,
// rank-1 retention, rank-1 + background suppression, and homogenization,
// each refit with power_law against the rebuilt diagonals.
SuppressionExperiment suppression_experiment(const SampleCache& cache, const Dataset& data,
                                             const SuppressionConfig& cfg, int batch,
                                             int top_n, std::uint64_t seed);

}  // namespace covnz
