#pragma once

#include <optional>

#include "covnz/config.hpp"
#include "covnz/spectral.hpp"
#include "covnz/suppression.hpp"
#include "covnz/synthetic.hpp"

namespace covnz {

struct AnalysisOptions {
  int top_n = 300;
  int n_pairs = 200;
  int rand_trials = 2;
  PairSource pair_source = PairSource::independent;
  bool centered = true;
  double m_threshold = 0.05;
  int analysis_batch = 60;  // stratified pair batches
  int train_batch = 50;     // B of the empirical covariance normalization
  std::uint64_t seed = 0;
};

struct AnalysisResult {
  int top_n = 0;
  int sample_count = 0;
  int skipped_samples = 0;
  int pair_count = 0;

  Vector h_eigvals_top;   // lambda_i = H_ii in the eigenbasis
  Vector h_recon_diag;    // first-moment reconstruction E_p[A_i]
  Vector c_emp_diag;
  Vector c_awd_raw_diag;
  Vector c_hh_diag;
  Vector c_hh_sd_diag;
  Vector c_thm1_diag;  // spectral second-moment estimate

  FitResult fit_emp, fit_awd_raw, fit_hh, fit_hh_sd, fit_thm1;

  SymMatrix r_real, r_rand;
  int r_dropped = 0;
  double mu_real = 0.0, mu_rand_emp = 0.0, mu_rand_theory = 0.0;
  int m_effective = 0;
  ZScore zscore;
  double commut_real = 0.0, commut_rand = 0.0;
  double align_ratio = 0.0;
  std::optional<double> spearman_diag;

  PerturbationStats pstats;
  double norm_emp = 0.0, norm_awd_raw = 0.0, norm_hh = 0.0, norm_hg = 0.0,
         norm_gg = 0.0, norm_hh_sd = 0.0;
  BoundsAudit audit;
  double fisher_rel_gap = 0.0;
  bool fisher_mse_caveat = false;
  double first_moment_rel_err = 0.0;  // assembled H_ii vs reconstruction
  double psd_fraction = 1.0;
};

// Full spectral analysis of one checkpoint: empirical covariance, AWD
// ladder, spectral (thm1) covariance, alignment statistics, baselines, and
// the moment-bound audit.
AnalysisResult analyze_checkpoint(const Checkpoint& ckpt, const Dataset& data,
                                  const AnalysisOptions& opt);

SuppressionExperiment run_suppression(const Checkpoint& ckpt, const Dataset& data,
                                      const SuppressSection& sup, int top_n);

// Command drivers shared by the CLI and the integration tests. Each returns
// the process exit payload implicitly by throwing on failure.
void cmd_fetch(const ExperimentConfig& cfg);
void cmd_train(const ExperimentConfig& cfg, const std::string& out_dir);
void cmd_analyze(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                 const std::string& out_dir);
void cmd_suppress(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                  const std::string& out_dir);
void cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir);

}  // namespace covnz
