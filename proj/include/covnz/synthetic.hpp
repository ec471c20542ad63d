#pragma once

#include <cstdint>

#include "covnz/linalg.hpp"
#include "covnz/stats.hpp"

namespace covnz {

// Spiked covariance: M planted eigenvalues at spike_value over a flat bulk,
// in a Haar-random basis.
struct SpikedSpec {
  int dim = 2000;
  int spikes = 20;
  double spike_value = 1.0;
  double bulk = 0.0;
  std::uint64_t seed = 0;
};

SymMatrix spiked_covariance(const SpikedSpec& spec);

// Random Shifts Model: every mini-batch loss is a spatial translation of the
// population loss, so the gradient noise is eps = H dw with dw isotropic and
// the covariance tends to sigma^2 H^2.
struct RsmResult {
  SymMatrix c_emp;
  FitResult fit;  // gamma of C_ii against H_ii in H's eigenbasis; a flat
                  // spectrum leaves n_points = 0 and a NaN slope
  Vector ratio;   // C_ii / (sigma^2 H_ii^2) over the fitted modes
};

RsmResult random_shifts_model(const SymMatrix& h, double sigma, int trials,
                              std::uint64_t seed, int top_n = 20);

enum class EnsembleMode { perfect_alignment, degenerate };

// Closed-form per-sample eigen-system ensembles realizing the two limiting
// scaling regimes. perfect_alignment: local bases coincide with the global
// one and curvatures fluctuate with Var proportional to mean^2 (log-normal
// with fixed coefficient of variation). degenerate: the top `modes`
// curvatures are i.i.d. and the aligned frame is perturbed by a small random
// rotation whose bulk leakage spreads over the remaining directions.
struct EnsembleSpec {
  EnsembleMode mode = EnsembleMode::perfect_alignment;
  int dim = 200;       // ambient directions (degenerate mode)
  int modes = 10;      // retained per-sample modes (n); direction count for perfect
  int samples = 2000;  // ensemble size P
  double kappa_mean = 1.0;
  double rel_spread = 0.5;    // perfect: cv, so Var = (cv * mean)^2
  double kappa_sigma = 0.5;   // degenerate: i.i.d. std of kappa
  double mean_decades = 2.0;  // perfect: per-direction mean range
  double jitter_max = 0.1;    // degenerate: rotation angle bound (radians)
  double bulk_decay = 1.0;    // degenerate: leakage weight exponent over bulk dims
  std::uint64_t seed = 0;

  void validate() const;
};

struct EnsembleResult {
  Vector h_diag;   // E_p[sum_m kappa (u_m.v_i)^2]
  Vector c2_diag;  // E_p[sum_m kappa^2 (u_m.v_i)^2], i.e. C_ii * 2B / sigma_w^2
  FitResult fit;
  double mu_kappa = 0.0;     // sample mean of the drawn curvatures
  double mu_kappa_sq = 0.0;  // sample mean of their squares
};

EnsembleResult ensemble_covariance(const EnsembleSpec& spec);

}  // namespace covnz
