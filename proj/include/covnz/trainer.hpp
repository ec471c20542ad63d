#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covnz/data.hpp"
#include "covnz/model.hpp"

namespace covnz {

struct TrainConfig {
  int batch = 50;
  double lr = 0.1;
  int epochs = 100;
  std::uint64_t seed = 1;
  // Convergence target on train accuracy; <0 selects the per-loss default
  // (1.0 for CE, 0.95 for MSE).
  double accuracy_target = -1.0;
  bool early_stop = false;
  std::vector<int> checkpoint_epochs;  // empty: {0, powers of two, final}
  bool reshuffle_each_epoch = true;

  double effective_target(LossKind kind) const {
    if (accuracy_target >= 0.0) return accuracy_target;
    return kind == LossKind::cross_entropy ? 1.0 : 0.95;
  }
};

struct EpochMetrics {
  int epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
};

struct Checkpoint {
  MlpConfig config;
  MlpParams params;
  int epoch = 0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  std::uint64_t seed = 0;
  std::string rng_state;     // descriptor of the batch-shuffle stream
  std::string config_hash;   // full experiment-config hash (set by the CLI)
  std::string lineage_hash;  // dataset+model+train sections only
};

struct TrainResult {
  std::vector<Checkpoint> checkpoints;
  std::vector<EpochMetrics> metrics;  // row per epoch, starting at epoch 0
};

// Mean loss / accuracy over the full dataset.
EpochMetrics evaluate(const MlpParams& params, const MlpConfig& cfg, const Dataset& data,
                      int epoch);

// One vanilla SGD step: every weight matrix moves by lr times the mean of
// the per-sample gradients over the batch.
MlpParams sgd_step(MlpParams params, const MlpConfig& cfg, const Dataset& data,
                   const MiniBatch& batch, double lr);

// Vanilla SGD over shuffled batches, deterministic for a fixed seed.
TrainResult train(const Dataset& data, const MlpConfig& cfg, const TrainConfig& tc);

// Binary checkpoint format: magic "CVNZ1", little-endian u32 layer count,
// per-layer u32 rows/cols, row-major f64 weights per layer, then a
// u32-length-prefixed UTF-8 JSON metadata blob.
void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

}  // namespace covnz
