#include "covnz/pipeline.hpp"

#include <cmath>
#include <filesystem>

#include "covnz/fetch.hpp"
#include "covnz/jsonio.hpp"
#include "covnz/report.hpp"

namespace covnz {

namespace {

Vector diag_of_projection(const SymMatrix& block) { return block.diagonal(); }

SymMatrix diag_matrix(const Vector& d) {
  SymMatrix m(d.size());
  for (Eigen::Index i = 0; i < d.size(); ++i) m.set(i, i, d[i]);
  return m;
}

}  // namespace

AnalysisResult analyze_checkpoint(const Checkpoint& ckpt, const Dataset& data,
                                  const AnalysisOptions& opt) {
  const MlpConfig& cfg = ckpt.config;
  cfg.validate();
  const MlpParams& params = ckpt.params;
  AnalysisResult res;

  const SampleCache cache = build_sample_cache(params, cfg, data);
  res.skipped_samples = cache.skipped;
  res.psd_fraction = cache.psd_fraction;

  const GlobalHessian gh = assemble_global_hessian(cache);
  res.sample_count = gh.sample_count;
  const int d = static_cast<int>(gh.h.dim());
  const int top_n = std::min(opt.top_n, d);
  res.top_n = top_n;
  res.h_eigvals_top = gh.eig.values.head(top_n);
  const Matrix basis_top = gh.eig.vectors.leftCols(top_n);

  // Empirical side: one gradient pass serves C_emp and the Fisher check.
  const GradientMoments moments = gradient_moments(params, cfg, data);
  const SymMatrix c_emp = moments.covariance(opt.train_batch, opt.centered);
  res.norm_emp = c_emp.frobenius();
  {
    const FisherDiagnostic fd = fisher_diagnostic(moments, cfg, gh.h);
    res.fisher_rel_gap = fd.rel_gap;
    res.fisher_mse_caveat = fd.mse_caveat;
  }

  // AWD ladder.
  AwdEstimate est = covariance_awd(cache, params, cfg, data, opt.analysis_batch,
                                   opt.n_pairs, opt.seed, opt.pair_source);
  res.pair_count = est.cov.pair_count;
  res.norm_awd_raw = est.cov.c_awd_raw.frobenius();
  res.norm_hh = est.cov.c_hh.frobenius();
  res.norm_hg = est.cov.c_hg.frobenius();
  res.norm_gg = est.cov.c_gg.frobenius();
  res.norm_hh_sd = est.cov.c_hh_sd.frobenius();

  res.pstats = perturbation_stats(cache, est.groups);

  // Spectral (thm1) covariance and the first/second projected moments.
  const KronProjectionMoments km = kron_projection_moments(cache, basis_top, true);
  res.h_recon_diag = km.first_diag;
  const double thm1_scale = res.pstats.sigma_w_sq / (2.0 * opt.analysis_batch);
  res.c_thm1_diag = thm1_scale * km.second_diag;

  double max_gap = 0.0;
  for (int i = 0; i < top_n; ++i)
    max_gap = std::max(max_gap, std::abs(res.h_eigvals_top[i] - res.h_recon_diag[i]));
  const double scale = std::max(std::abs(gh.eig.values[0]), 1e-300);
  res.first_moment_rel_err = max_gap / scale;

  // Projections into the top eigenbasis.
  const SymMatrix c_emp_proj = project(c_emp, gh.eig.vectors, top_n);
  res.c_emp_diag = diag_of_projection(c_emp_proj);
  res.c_awd_raw_diag = diag_of_projection(project(est.cov.c_awd_raw, gh.eig.vectors, top_n));
  res.c_hh_diag = diag_of_projection(project(est.cov.c_hh, gh.eig.vectors, top_n));
  res.c_hh_sd_diag = diag_of_projection(project(est.cov.c_hh_sd, gh.eig.vectors, top_n));

  res.fit_emp = power_law(res.h_eigvals_top, res.c_emp_diag, top_n);
  res.fit_awd_raw = power_law(res.h_eigvals_top, res.c_awd_raw_diag, top_n);
  res.fit_hh = power_law(res.h_eigvals_top, res.c_hh_diag, top_n);
  res.fit_hh_sd = power_law(res.h_eigvals_top, res.c_hh_sd_diag, top_n);
  res.fit_thm1 = power_law(res.h_eigvals_top, res.c_thm1_diag, top_n);

  // Alignment statistics and the rotation null.
  {
    const Correlation corr = correlation_matrix(c_emp_proj);
    res.r_real = corr.r;
    res.r_dropped = static_cast<int>(corr.dropped.size());
    res.mu_real = mean_offdiag(corr.r);
  }
  const SymMatrix h_top_diag = diag_matrix(res.h_eigvals_top);
  res.commut_real = commutativity_error(c_emp_proj, h_top_diag);
  res.align_ratio = alignment_ratio(c_emp_proj);
  {
    std::vector<double> x(res.h_eigvals_top.data(), res.h_eigvals_top.data() + top_n);
    std::vector<double> y(res.c_emp_diag.data(), res.c_emp_diag.data() + top_n);
    res.spearman_diag = spearman(x, y);
  }
  {
    const RotationBaseline base = random_rotation_baseline(
        c_emp, top_n, opt.rand_trials, Rng::derive(opt.seed, 0x9Du), res.h_eigvals_top);
    res.r_rand = base.r_rand;
    res.mu_rand_emp = base.mu_rand;
    res.commut_rand = base.commut_rand;
  }
  {
    const Vector c_spectrum = sym_eigvals(c_emp);
    res.m_effective = estimate_effective_spikes(c_spectrum, opt.m_threshold);
  }
  res.mu_rand_theory = theoretical_baseline(res.m_effective);
  res.zscore = z_score(res.mu_real, res.m_effective, top_n);

  res.audit = bounds_audit(cache, res.c_thm1_diag, res.h_recon_diag,
                           res.pstats.sigma_w_sq, opt.analysis_batch, top_n);
  return res;
}

SuppressionExperiment run_suppression(const Checkpoint& ckpt, const Dataset& data,
                                      const SuppressSection& sup, int top_n) {
  const SampleCache cache = build_sample_cache(ckpt.params, ckpt.config, data);
  SuppressionConfig cfg;
  cfg.theta = sup.theta;
  cfg.eps_tail = sup.eps_tail;
  cfg.eps_bg = sup.eps_bg;
  cfg.homogenize = sup.homogenize;
  return suppression_experiment(cache, data, cfg, sup.batch, top_n, sup.seed);
}

namespace {

AnalysisOptions analysis_options(const ExperimentConfig& cfg, const Dataset& data,
                                 const Checkpoint& ckpt) {
  AnalysisOptions opt;
  opt.top_n = cfg.effective_top_n(data.class_count, ckpt.config.focal_dim());
  opt.n_pairs = cfg.analyze.n_pairs;
  opt.rand_trials = cfg.analyze.rand_trials;
  opt.pair_source = cfg.pair_source();
  opt.centered = cfg.analyze.covariance == "centered";
  opt.m_threshold = cfg.analyze.m_threshold;
  opt.analysis_batch = cfg.effective_analyze_batch(data.class_count);
  opt.train_batch = cfg.train.batch;
  opt.seed = Rng::derive(cfg.train.seed, 0xACEu);
  return opt;
}

void check_lineage(const ExperimentConfig& cfg, const Checkpoint& ckpt,
                   const std::string& what) {
  if (!ckpt.lineage_hash.empty() && ckpt.lineage_hash != cfg.lineage_hash)
    throw ConfigError(what + ": checkpoint lineage hash " + ckpt.lineage_hash +
                      " does not match the config (" + cfg.lineage_hash + ")");
}

void emit_fit(JsonWriter& w, const char* name, const FitResult& fit) {
  w.key(name)
      .begin_object()
      .field("gamma", fit.slope)
      .field("intercept", fit.intercept)
      .field("r_squared", fit.r_squared)
      .field("n_points", fit.n_points)
      .field("n_dropped", fit.n_dropped)
      .end_object();
}

}  // namespace

void cmd_fetch(const ExperimentConfig& cfg) {
  if (cfg.dataset.fetch.empty())
    throw ConfigError("fetch: dataset.fetch lists no files");
  const std::string base = cfg.dataset.path.empty() ? "." : cfg.dataset.path;
  for (const auto& item : cfg.dataset.fetch) {
    if (item.url.empty() || item.sha256.empty() || item.file.empty())
      throw ConfigError("fetch: every entry needs url, sha256 and file");
    fetch_dataset(item.url, item.sha256, base + "/" + item.file);
  }
}

void cmd_train(const ExperimentConfig& cfg, const std::string& out_dir) {
  const Dataset data = resolve_dataset(cfg.dataset);
  const MlpConfig mlp = cfg.mlp_config(data.input_dim(), data.class_count);
  const TrainResult tr = train(data, mlp, cfg.train_config());

  CsvWriter metrics("epoch,train_loss,train_accuracy", cfg.config_hash);
  for (const auto& m : tr.metrics)
    metrics.row({std::to_string(m.epoch), csv_cell(m.loss), csv_cell(m.accuracy)});
  metrics.save(out_dir + "/metrics.csv");

  JsonWriter manifest;
  manifest.begin_object()
      .field("schema", kReportSchema)
      .field("tool_version", kToolVersion)
      .field("config_hash", cfg.config_hash)
      .field("lineage_hash", cfg.lineage_hash)
      .field("seed", static_cast<unsigned long long>(cfg.train.seed))
      .field("epochs_run", tr.metrics.back().epoch)
      .field("final_train_loss", tr.metrics.back().loss)
      .field("final_train_accuracy", tr.metrics.back().accuracy);
  manifest.key("checkpoints").begin_array();
  for (const auto& c : tr.checkpoints) {
    Checkpoint stamped = c;
    stamped.config_hash = cfg.config_hash;
    stamped.lineage_hash = cfg.lineage_hash;
    const std::string name = "checkpoint_epoch_" + std::to_string(c.epoch) + ".cvnz";
    save_checkpoint(stamped, out_dir + "/" + name);
    manifest.value(name);
  }
  manifest.end_array();
  manifest.field("metrics_csv", "metrics.csv").end_object();
  write_text_atomic(out_dir + "/train_report.json", manifest.str());
}

void cmd_analyze(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                 const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  check_lineage(cfg, ckpt, "analyze");
  const Dataset data = resolve_dataset(cfg.dataset);
  const AnalysisOptions opt = analysis_options(cfg, data, ckpt);
  const AnalysisResult res = analyze_checkpoint(ckpt, data, opt);

  CsvWriter spectrum("i,H_ii,C_emp_ii,C_awd_raw_ii,C_hh_ii,C_hh_sd_ii,C_thm1_ii",
                     cfg.config_hash);
  for (int i = 0; i < res.top_n; ++i) {
    spectrum.row_values({res.h_eigvals_top[i], res.c_emp_diag[i], res.c_awd_raw_diag[i],
                         res.c_hh_diag[i], res.c_hh_sd_diag[i], res.c_thm1_diag[i]},
                        i + 1);
  }
  spectrum.save(out_dir + "/spectrum.csv");
  write_matrix_csv(out_dir + "/corr_real.csv", res.r_real, cfg.config_hash);
  write_matrix_csv(out_dir + "/corr_rand.csv", res.r_rand, cfg.config_hash);

  JsonWriter w;
  w.begin_object()
      .field("schema", kReportSchema)
      .field("tool_version", kToolVersion)
      .field("config_hash", cfg.config_hash)
      .field("lineage_hash", cfg.lineage_hash)
      .field("seed", static_cast<unsigned long long>(cfg.train.seed));
  w.key("checkpoint")
      .begin_object()
      .field("file", std::filesystem::path(checkpoint_path).filename().string())
      .field("epoch", ckpt.epoch)
      .field("train_loss", ckpt.train_loss)
      .field("train_accuracy", ckpt.train_accuracy)
      .field("loss_kind", loss_name(ckpt.config.loss))
      .end_object();
  w.key("dims")
      .begin_object()
      .field("focal_dim", ckpt.config.focal_dim())
      .field("top_n", res.top_n)
      .field("samples", res.sample_count)
      .field("skipped_samples", res.skipped_samples)
      .field("pairs", res.pair_count)
      .field("analysis_batch", opt.analysis_batch)
      .field("train_batch", opt.train_batch)
      .end_object();
  w.key("gamma").begin_object();
  emit_fit(w, "emp", res.fit_emp);
  emit_fit(w, "awd_raw", res.fit_awd_raw);
  emit_fit(w, "hh", res.fit_hh);
  emit_fit(w, "hh_sd", res.fit_hh_sd);
  emit_fit(w, "thm1", res.fit_thm1);
  w.end_object();
  w.key("alignment")
      .begin_object()
      .field("mu_real", res.mu_real)
      .field("mu_rand_empirical", res.mu_rand_emp)
      .field("mu_rand_theoretical", res.mu_rand_theory)
      .field("m_effective", res.m_effective)
      .field("r_dropped", res.r_dropped)
      .field("commutativity_real", res.commut_real)
      .field("commutativity_rand", res.commut_rand)
      .field("alignment_ratio", res.align_ratio);
  w.key("spearman_diag");
  if (res.spearman_diag) {
    w.value(*res.spearman_diag);
  } else {
    w.begin_object().key("value").null().field("reason", "constant series").end_object();
  }
  w.key("z")
      .begin_object()
      .field("mu_obs", res.mu_real)
      .field("mu_h0", res.zscore.mu_h0)
      .field("mu_h0_exact", res.zscore.mu_h0_exact)
      .field("sigma_single", res.zscore.sigma_single)
      .field("se", res.zscore.se)
      .field("z", res.zscore.z)
      .field("p_one_sided", res.zscore.p_one_sided)
      .field("note",
             "z follows mu_H0=0.8/sqrt(M) and SE=sigma_single/D; the value -3378 "
             "sometimes quoted for (mu_obs=0.066, M=20, D=2560) is inconsistent with "
             "those intermediates, which give z near -2144")
      .end_object();
  w.end_object();
  w.key("awd")
      .begin_object()
      .field("sigma_w_sq", res.pstats.sigma_w_sq)
      .field("isotropy_offdiag_over_diag", res.pstats.offdiag_over_diag)
      .field("isotropy_diag_cv", res.pstats.diag_cv)
      .field("retained_modes", res.pstats.retained_modes)
      .field("norm_c_emp", res.norm_emp)
      .field("norm_c_awd_raw", res.norm_awd_raw)
      .field("norm_c_hh", res.norm_hh)
      .field("norm_c_hg", res.norm_hg)
      .field("norm_c_gg", res.norm_gg)
      .field("norm_c_hh_sd", res.norm_hh_sd)
      .end_object();
  w.key("bounds")
      .begin_object()
      .field("kappa_max", res.audit.kappa_max)
      .field("psd_fraction", res.audit.psd_fraction)
      .field("pass_rate", res.audit.pass_rate)
      .field("enforced", res.audit.enforced)
      .end_object();
  w.key("fisher")
      .begin_object()
      .field("rel_gap", res.fisher_rel_gap)
      .field("mse_caveat", res.fisher_mse_caveat)
      .end_object();
  w.key("consistency")
      .begin_object()
      .field("first_moment_scale_rel_err", res.first_moment_rel_err)
      .end_object();
  w.key("files")
      .begin_array()
      .value("spectrum.csv")
      .value("corr_real.csv")
      .value("corr_rand.csv")
      .end_array();
  w.end_object();
  write_text_atomic(out_dir + "/report.json", w.str());
}

void cmd_suppress(const ExperimentConfig& cfg, const std::string& checkpoint_path,
                  const std::string& out_dir) {
  const Checkpoint ckpt = load_checkpoint(checkpoint_path);
  check_lineage(cfg, ckpt, "suppress");
  const Dataset data = resolve_dataset(cfg.dataset);
  int top_n = cfg.suppress.top_n;
  if (top_n <= 0) top_n = cfg.effective_top_n(data.class_count, ckpt.config.focal_dim());
  const SuppressionExperiment exp = run_suppression(ckpt, data, cfg.suppress, top_n);

  CsvWriter diag("rung,i,H_ii,C2_ii", cfg.config_hash);
  for (const auto& rung : exp.rungs) {
    for (Eigen::Index i = 0; i < rung.h_diag.size(); ++i)
      diag.row({rung.name, std::to_string(i + 1), csv_cell(rung.h_diag[i]),
                csv_cell(rung.c2_diag[i])});
  }
  diag.save(out_dir + "/suppress_diagonals.csv");

  JsonWriter w;
  w.begin_object()
      .field("schema", kReportSchema)
      .field("tool_version", kToolVersion)
      .field("config_hash", cfg.config_hash)
      .field("lineage_hash", cfg.lineage_hash)
      .field("checkpoint_epoch", ckpt.epoch)
      .field("batch", exp.batch_size)
      .field("top_n", exp.top_n)
      .field("theta", cfg.suppress.theta);
  w.key("rungs").begin_array();
  for (const auto& rung : exp.rungs) {
    w.begin_object()
        .field("name", rung.name)
        .field("gamma", rung.fit.slope)
        .field("r_squared", rung.fit.r_squared)
        .field("n_points", rung.fit.n_points)
        .field("n_dropped", rung.fit.n_dropped)
        .field("stiff_count", rung.stiff_count)
        .field("kappa_bar", rung.kappa_bar)
        .field("first_mode_share", rung.first_mode_share)
        .field("homogenize", rung.applied.homogenize)
        .field("eps_tail", rung.applied.eps_tail)
        .field("eps_bg", rung.applied.eps_bg)
        .field("theta", rung.applied.theta)
        .end_object();
  }
  w.end_array();
  w.key("files").begin_array().value("suppress_diagonals.csv").end_array();
  w.end_object();
  write_text_atomic(out_dir + "/suppress_report.json", w.str());
}

void cmd_synth(const ExperimentConfig& cfg, const std::string& out_dir) {
  const SynthSection& s = cfg.synth;
  JsonWriter w;
  w.begin_object()
      .field("schema", kReportSchema)
      .field("tool_version", kToolVersion)
      .field("config_hash", cfg.config_hash)
      .field("mode", s.mode)
      .field("seed", static_cast<unsigned long long>(s.seed));

  CsvWriter diag("i,H_ii,C_ii", cfg.config_hash);
  if (s.mode == "spiked") {
    std::vector<double> mus(s.spiked_trials);
    for (int t = 0; t < s.spiked_trials; ++t) {
      SpikedSpec spec = s.spiked;
      spec.seed = Rng::derive(s.seed, 0xE1u, static_cast<std::uint64_t>(t));
      const SymMatrix c = spiked_covariance(spec);
      mus[t] = mean_offdiag(correlation_matrix(c).r);
      if (t == 0)
        for (int i = 0; i < std::min(spec.dim, 200); ++i)
          diag.row_values({c(i, i), c(i, i)}, i + 1);
    }
    const double mu_mean = pairwise_sum(mus) / s.spiked_trials;
    w.field("trials", s.spiked_trials)
        .field("mu_mean", mu_mean)
        .field("mu_theoretical", theoretical_baseline(s.spiked.spikes))
        .field("expected_mean_diagonal",
               static_cast<double>(s.spiked.spikes) * s.spiked.spike_value / s.spiked.dim);
    w.key("mu_per_trial").begin_array();
    for (double m : mus) w.value(m);
    w.end_array();
  } else if (s.mode == "rsm") {
    // Random PSD curvature: H = A A^T / dim with Gaussian A.
    Rng rng(Rng::derive(s.seed, 0xE2u));
    Matrix a(s.rsm_dim, s.rsm_dim);
    for (int i = 0; i < s.rsm_dim; ++i)
      for (int j = 0; j < s.rsm_dim; ++j) a(i, j) = rng.normal();
    const SymMatrix h =
        SymMatrix::symmetrized(a * a.transpose() / static_cast<double>(s.rsm_dim));
    const RsmResult r =
        random_shifts_model(h, s.rsm_sigma, s.rsm_trials, Rng::derive(s.seed, 0xE3u),
                            s.rsm_top_n);
    const EigenDecomposition eig = sym_eig(h);
    const Vector c_diag = project(r.c_emp, eig.vectors, s.rsm_dim).diagonal();
    for (int i = 0; i < s.rsm_dim; ++i) diag.row_values({eig.values[i], c_diag[i]}, i + 1);
    w.field("dim", s.rsm_dim)
        .field("sigma", s.rsm_sigma)
        .field("trials", s.rsm_trials)
        .field("gamma", r.fit.slope)
        .field("r_squared", r.fit.r_squared);
    if (r.fit.n_points == 0)
      w.field("gamma_reason", "flat curvature spectrum leaves no slope to fit");
    double worst = 0.0;
    for (Eigen::Index i = 0; i < r.ratio.size(); ++i)
      worst = std::max(worst, std::abs(r.ratio[i] - 1.0));
    w.field("max_ratio_error", worst);
  } else {
    EnsembleSpec spec = s.mode == "perfect" ? s.perfect : s.degenerate;
    spec.seed = Rng::derive(s.seed, 0xE4u);
    const EnsembleResult r = ensemble_covariance(spec);
    for (Eigen::Index i = 0; i < r.h_diag.size(); ++i)
      diag.row_values({r.h_diag[i], r.c2_diag[i]}, static_cast<int>(i) + 1);
    w.field("gamma", r.fit.slope)
        .field("r_squared", r.fit.r_squared)
        .field("n_points", r.fit.n_points)
        .field("mu_kappa", r.mu_kappa)
        .field("mu_kappa_sq", r.mu_kappa_sq)
        .field("moment_ratio", r.mu_kappa_sq / r.mu_kappa);
  }
  w.key("files").begin_array().value("synth_diagonals.csv").end_array();
  w.end_object();
  diag.save(out_dir + "/synth_diagonals.csv");
  write_text_atomic(out_dir + "/synth_report.json", w.str());
}

}  // namespace covnz
