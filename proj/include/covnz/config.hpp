#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covnz/awd.hpp"
#include "covnz/data.hpp"
#include "covnz/model.hpp"
#include "covnz/synthetic.hpp"
#include "covnz/trainer.hpp"

namespace covnz {

struct FetchItem {
  std::string url;
  std::string sha256;
  std::string file;
};

struct DatasetSection {
  std::string name = "idx";  // idx | mnist | cifar10
  std::string path;          // directory for mnist/cifar10
  std::string images;        // explicit idx paths
  std::string labels;
  std::vector<std::string> files;  // cifar10 record files
  std::vector<int> classes;        // empty: all classes of the source
  int per_class = 0;
  std::uint64_t seed = 0;
  std::vector<FetchItem> fetch;
};

struct ModelSection {
  std::vector<int> hidden_dims{50, 50};
  int focal_layer = 1;
  std::string loss = "ce";
};

struct TrainSection {
  int batch = 50;
  double lr = 0.1;
  int epochs = 100;
  std::uint64_t seed = 1;
  std::vector<int> checkpoint_epochs;
  double accuracy_target = -1.0;
  bool early_stop = true;
  bool reshuffle = true;
};

struct AnalyzeSection {
  int top_n = 0;    // 0: per-class-count default, capped at D
  int n_pairs = 200;
  int rand_trials = 2;
  std::string pair_source = "independent";  // independent | sequential
  std::string covariance = "centered";      // centered | uncentered
  double m_threshold = 0.05;
  int batch = 0;    // 0: largest multiple of the class count <= train.batch
};

struct SuppressSection {
  double theta = 0.05;
  double eps_tail = 1e-5;
  double eps_bg = 1e-3;
  bool homogenize = true;
  int batch = 200;
  int top_n = 0;  // 0: inherit analyze.top_n
  std::uint64_t seed = 0;
};

struct SynthSection {
  std::string mode = "spiked";  // spiked | rsm | perfect | degenerate
  std::uint64_t seed = 0;
  SpikedSpec spiked;
  int spiked_trials = 5;
  int rsm_dim = 50;
  double rsm_sigma = 1e-3;
  int rsm_trials = 10000;
  int rsm_top_n = 20;
  EnsembleSpec perfect;
  EnsembleSpec degenerate;
};

struct ExperimentConfig {
  DatasetSection dataset;
  ModelSection model;
  TrainSection train;
  AnalyzeSection analyze;
  SuppressSection suppress;
  SynthSection synth;

  std::string config_hash;   // sha256 of the canonical full serialization
  std::string lineage_hash;  // sha256 over dataset+model+train only

  MlpConfig mlp_config(int input_dim, int classes) const;
  TrainConfig train_config() const;
  int effective_top_n(int classes, int focal_dim) const;
  int effective_analyze_batch(int classes) const;
  PairSource pair_source() const;
};

// Strict parse: unknown keys anywhere in the document are rejected.
ExperimentConfig load_config(const std::string& path);
ExperimentConfig parse_config(const std::string& json_text);

// Canonical serialization used for hashing (fixed key order, defaults
// materialized).
std::string canonical_config(const ExperimentConfig& cfg, bool lineage_only);

// Loads the configured source files and applies the balanced subset.
Dataset resolve_dataset(const DatasetSection& ds);

}  // namespace covnz
