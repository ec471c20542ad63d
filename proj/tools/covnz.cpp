// covnz: trains small ReLU MLPs with vanilla SGD, measures the SGD
// gradient-noise covariance and the focal-layer Hessian, reconstructs the
// covariance from per-sample Hessian spectra, and runs the suppression and
// synthetic-ensemble studies. Emits machine-readable CSV/JSON artifacts.

#include <CLI11.hpp>

#include <cstdio>
#include <exception>
#include <string>

#include "covnz/parallel.hpp"
#include "covnz/pipeline.hpp"

namespace {

struct GlobalArgs {
  std::string config_path;
  std::string checkpoint;
  std::string out_dir = ".";
  int threads = 0;
  long long seed_override = -1;
};

covnz::ExperimentConfig load(const GlobalArgs& args) {
  covnz::ExperimentConfig cfg = covnz::load_config(args.config_path);
  if (args.seed_override >= 0) {
    cfg.train.seed = static_cast<std::uint64_t>(args.seed_override);
    cfg.dataset.seed = static_cast<std::uint64_t>(args.seed_override);
    cfg.suppress.seed = static_cast<std::uint64_t>(args.seed_override);
    cfg.synth.seed = static_cast<std::uint64_t>(args.seed_override);
  }
  return cfg;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SGD noise-covariance and loss-curvature analysis toolkit"};
  app.require_subcommand(1);

  GlobalArgs args;
  for (auto* sub : {app.add_subcommand("fetch", "download and verify dataset files"),
                    app.add_subcommand("train", "train the MLP and write checkpoints"),
                    app.add_subcommand("analyze", "spectral analysis of a checkpoint"),
                    app.add_subcommand("suppress", "per-sample spectrum ablation"),
                    app.add_subcommand("synth", "synthetic ensemble validation")}) {
    sub->add_option("--config", args.config_path, "experiment config (JSON)")
        ->required();
    sub->add_option("--out", args.out_dir, "output directory");
    sub->add_option("--threads", args.threads, "worker thread cap");
    sub->add_option("--seed-override", args.seed_override, "replace every section seed");
    if (sub->get_name() == "analyze" || sub->get_name() == "suppress")
      sub->add_option("--checkpoint", args.checkpoint, "checkpoint file")->required();
  }

  CLI11_PARSE(app, argc, argv);

  try {
    covnz::set_thread_cap(args.threads);
    const covnz::ExperimentConfig cfg = load(args);
    if (app.got_subcommand("fetch")) {
      covnz::cmd_fetch(cfg);
    } else if (app.got_subcommand("train")) {
      covnz::cmd_train(cfg, args.out_dir);
    } else if (app.got_subcommand("analyze")) {
      covnz::cmd_analyze(cfg, args.checkpoint, args.out_dir);
    } else if (app.got_subcommand("suppress")) {
      covnz::cmd_suppress(cfg, args.checkpoint, args.out_dir);
    } else if (app.got_subcommand("synth")) {
      covnz::cmd_synth(cfg, args.out_dir);
    }
  } catch (const covnz::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return 2;
  } catch (const covnz::Error& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
