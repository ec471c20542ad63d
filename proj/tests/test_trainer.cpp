#include <doctest.h>

#include "covnz/trainer.hpp"
#include "support.hpp"

using namespace covnz;

namespace {

// Linearly separable 2-class toy set in [0,1]^2.
Dataset separable_fixture() {
  Dataset d;
  d.class_count = 2;
  d.source = "toy";
  d.inputs.resize(4, 2);
  d.inputs << 0.9, 0.1, 0.8, 0.2, 0.1, 0.9, 0.2, 0.8;
  d.labels = {0, 0, 1, 1};
  return d;
}

MlpConfig toy_config(LossKind loss = LossKind::cross_entropy) {
  MlpConfig cfg;
  cfg.layer_dims = {2, 6, 2};
  cfg.focal_layer = 1;
  cfg.loss = loss;
  return cfg;
}

MiniBatch all_of(const Dataset& d) {
  MiniBatch mb;
  for (int i = 0; i < d.size(); ++i) mb.indices.push_back(i);
  return mb;
}

}  // namespace

TEST_CASE("sgd_step with zero learning rate leaves params unchanged") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  const MlpParams p0 = MlpParams::init(cfg, 3);
  const MlpParams p1 = sgd_step(p0, cfg, d, all_of(d), 0.0);
  for (int l = 0; l < cfg.weight_count(); ++l)
    CHECK((p1.weights[l] - p0.weights[l]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("sgd_step at an exact CE interpolation point is a no-op") {
  // Saturated softmax: the margin is large enough that the off-class
  // probabilities underflow to exactly zero.
  Dataset d;
  d.class_count = 2;
  d.source = "sat";
  d.inputs.resize(1, 2);
  d.inputs << 1.0, 0.0;
  d.labels = {0};
  MlpConfig cfg = toy_config();
  MlpParams p = MlpParams::init(cfg, 5);
  p.weights[1] *= 1e7;  // logit gap far past the exp underflow threshold
  // Probe the probabilities through the MSE loss (finite either way), then
  // interpolate whichever class saturated.
  MlpConfig probe = cfg;
  probe.loss = LossKind::mse;
  const ForwardTrace t = forward(p, probe, d.inputs.row(0).transpose(), 0);
  REQUIRE(t.probs[t.probs[0] > 0.5 ? 1 : 0] == 0.0);
  if (t.probs[0] != 1.0) d.labels[0] = 1;
  const MlpParams p1 = sgd_step(p, cfg, d, all_of(d), 0.1);
  for (int l = 0; l < cfg.weight_count(); ++l)
    CHECK((p1.weights[l] - p.weights[l]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("one step on a 2-sample batch equals the averaged single-sample steps") {
  Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  const MlpParams p0 = MlpParams::init(cfg, 7);
  MiniBatch both, first, second;
  both.indices = {0, 2};
  first.indices = {0};
  second.indices = {2};
  const MlpParams batch_step = sgd_step(p0, cfg, d, both, 0.3);
  const MlpParams a = sgd_step(p0, cfg, d, first, 0.3);
  const MlpParams b = sgd_step(p0, cfg, d, second, 0.3);
  for (int l = 0; l < cfg.weight_count(); ++l) {
    const Matrix avg = 0.5 * (a.weights[l] + b.weights[l]);
    CHECK((batch_step.weights[l] - avg).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("full-batch step equals gradient descent on the mean loss") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  const MlpParams p0 = MlpParams::init(cfg, 9);
  const MlpParams stepped = sgd_step(p0, cfg, d, all_of(d), 0.2);
  // direct mean-gradient descent
  std::vector<Matrix> mean_grads;
  for (int l = 0; l < cfg.weight_count(); ++l)
    mean_grads.push_back(Matrix::Zero(cfg.layer_dims[l + 1], cfg.layer_dims[l]));
  for (int i = 0; i < d.size(); ++i) {
    const ForwardTrace t = forward(p0, cfg, d.inputs.row(i).transpose(), d.labels[i]);
    Vector g = logit_gradient(t.probs, d.labels[i], cfg.loss);
    for (int l = cfg.weight_count() - 1; l >= 0; --l) {
      mean_grads[l] += g * t.activities[l].transpose() / d.size();
      if (l > 0) g = (p0.weights[l].transpose() * g).cwiseProduct(t.relu_masks[l - 1]);
    }
  }
  for (int l = 0; l < cfg.weight_count(); ++l) {
    const Matrix expect = p0.weights[l] - 0.2 * mean_grads[l];
    CHECK((stepped.weights[l] - expect).cwiseAbs().maxCoeff() < 1e-13);
  }
}

TEST_CASE("train with zero epochs returns the initialization") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 2;
  tc.lr = 0.1;
  tc.epochs = 0;
  tc.seed = 11;
  const TrainResult r = train(d, cfg, tc);
  REQUIRE(r.checkpoints.size() == 1);
  CHECK(r.checkpoints[0].epoch == 0);
  REQUIRE(r.metrics.size() == 1);
  const MlpParams init = MlpParams::init(cfg, 11);
  for (int l = 0; l < cfg.weight_count(); ++l)
    CHECK((r.checkpoints[0].params.weights[l] - init.weights[l]).cwiseAbs().maxCoeff() ==
          0.0);
}

TEST_CASE("train reaches 100% accuracy on the separable fixture") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 2;
  tc.lr = 0.1;
  tc.epochs = 200;
  tc.seed = 4;
  tc.early_stop = true;
  const TrainResult r = train(d, cfg, tc);
  CHECK(r.metrics.back().accuracy == 1.0);
  CHECK(r.checkpoints.back().train_accuracy == 1.0);
}

TEST_CASE("training loss is non-increasing at small lr (smoke property)") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 4;
  tc.lr = 0.01;
  tc.epochs = 100;
  tc.seed = 5;
  tc.early_stop = false;
  const TrainResult r = train(d, cfg, tc);
  int increases = 0;
  for (std::size_t e = 1; e + 1 < r.metrics.size(); ++e)
    if (r.metrics[e + 1].loss > r.metrics[e].loss) ++increases;
  CHECK(increases <= static_cast<int>(0.05 * r.metrics.size()));
}

TEST_CASE("default checkpoint cadence is 0, powers of two, final") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 4;
  tc.lr = 0.01;
  tc.epochs = 8;
  tc.seed = 6;
  tc.early_stop = false;
  const TrainResult r = train(d, cfg, tc);
  std::vector<int> epochs;
  for (const auto& c : r.checkpoints) epochs.push_back(c.epoch);
  CHECK(epochs == std::vector<int>{0, 1, 2, 4, 8});
}

TEST_CASE("same seed yields byte-identical checkpoint files") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 2;
  tc.lr = 0.1;
  tc.epochs = 20;
  tc.seed = 12;
  tc.early_stop = false;
  const auto dir = covnz::test::fresh_tmp_dir("trainer_det");
  const TrainResult r1 = train(d, cfg, tc);
  const TrainResult r2 = train(d, cfg, tc);
  save_checkpoint(r1.checkpoints.back(), (dir / "a.cvnz").string());
  save_checkpoint(r2.checkpoints.back(), (dir / "b.cvnz").string());
  CHECK(covnz::test::read_bytes(dir / "a.cvnz") == covnz::test::read_bytes(dir / "b.cvnz"));
}

TEST_CASE("checkpoint save/load round-trips bit-exactly") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config(LossKind::mse);
  TrainConfig tc;
  tc.batch = 2;
  tc.lr = 0.05;
  tc.epochs = 3;
  tc.seed = 13;
  const TrainResult r = train(d, cfg, tc);
  const Checkpoint& c = r.checkpoints.back();
  const auto dir = covnz::test::fresh_tmp_dir("trainer_ckpt");
  const std::string path = (dir / "c.cvnz").string();
  save_checkpoint(c, path);
  const Checkpoint loaded = load_checkpoint(path);
  CHECK(loaded.epoch == c.epoch);
  CHECK(loaded.config.loss == cfg.loss);
  CHECK(loaded.config.focal_layer == cfg.focal_layer);
  CHECK(loaded.config.layer_dims == cfg.layer_dims);
  CHECK(loaded.train_loss == c.train_loss);
  CHECK(loaded.train_accuracy == c.train_accuracy);
  CHECK(loaded.seed == c.seed);
  for (int l = 0; l < cfg.weight_count(); ++l)
    CHECK((loaded.params.weights[l] - c.params.weights[l]).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoint corruption and version errors") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 2;
  tc.lr = 0.05;
  tc.epochs = 1;
  tc.seed = 14;
  const TrainResult r = train(d, cfg, tc);
  const auto dir = covnz::test::fresh_tmp_dir("trainer_bad");
  const std::string path = (dir / "c.cvnz").string();
  save_checkpoint(r.checkpoints.back(), path);

  auto bytes = covnz::test::read_bytes(path);

  auto truncated = bytes;
  truncated.resize(truncated.size() / 2);
  covnz::test::write_bytes(dir / "trunc.cvnz", truncated);
  CHECK_THROWS_AS(load_checkpoint((dir / "trunc.cvnz").string()), CorruptCheckpoint);

  auto version = bytes;
  version[4] = '2';
  covnz::test::write_bytes(dir / "ver.cvnz", version);
  try {
    load_checkpoint((dir / "ver.cvnz").string());
    CHECK(false);
  } catch (const FormatError& e) {
    CHECK(std::string(e.what()).find("version") != std::string::npos);
  }

  auto magic = bytes;
  magic[0] = 'X';
  covnz::test::write_bytes(dir / "magic.cvnz", magic);
  CHECK_THROWS_AS(load_checkpoint((dir / "magic.cvnz").string()), FormatError);
}

TEST_CASE("divergence carries epoch context") {
  const Dataset d = separable_fixture();
  const MlpConfig cfg = toy_config();
  TrainConfig tc;
  tc.batch = 4;
  tc.lr = 1e18;  // guaranteed blow-up
  tc.epochs = 50;
  tc.seed = 15;
  try {
    train(d, cfg, tc);
    CHECK(false);
  } catch (const DivergenceError& e) {
    CHECK(std::string(e.what()).find("epoch") != std::string::npos);
  }
}
