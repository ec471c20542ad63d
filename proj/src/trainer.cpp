#include "covnz/trainer.hpp"

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>

#include <nlohmann/json.hpp>

#include "covnz/jsonio.hpp"
#include "covnz/parallel.hpp"

namespace covnz {

namespace {

struct GradAcc {
  std::vector<Matrix> grads;
  double loss = 0.0;
  int correct = 0;

  static GradAcc zeros(const MlpConfig& cfg) {
    GradAcc a;
    for (int l = 0; l < cfg.weight_count(); ++l)
      a.grads.push_back(Matrix::Zero(cfg.layer_dims[l + 1], cfg.layer_dims[l]));
    return a;
  }
  void merge(const GradAcc& o) {
    for (std::size_t l = 0; l < grads.size(); ++l) grads[l] += o.grads[l];
    loss += o.loss;
    correct += o.correct;
  }
};

int argmax(const Vector& v) {
  Eigen::Index best = 0;
  v.maxCoeff(&best);
  return static_cast<int>(best);
}

// Full backprop of one sample into the accumulator.
void accumulate_sample(const MlpParams& params, const MlpConfig& cfg, const Vector& x,
                       int y, GradAcc& acc) {
  const ForwardTrace t = forward(params, cfg, x, y);
  acc.loss += t.loss;
  acc.correct += argmax(t.probs) == y ? 1 : 0;
  Vector g = logit_gradient(t.probs, y, cfg.loss);
  for (int l = cfg.weight_count() - 1; l >= 0; --l) {
    acc.grads[l].noalias() += g * t.activities[l].transpose();
    if (l > 0) g = (params.weights[l].transpose() * g).cwiseProduct(t.relu_masks[l - 1]);
  }
}

}  // namespace

EpochMetrics evaluate(const MlpParams& params, const MlpConfig& cfg, const Dataset& data,
                      int epoch) {
  struct Partial {
    double loss = 0.0;
    int correct = 0;
  };
  auto total = parallel_reduce_chunks<Partial>(
      data.size(), 128, Partial{},
      [&](std::size_t lo, std::size_t hi) {
        Partial p;
        for (std::size_t i = lo; i < hi; ++i) {
          const ForwardTrace t =
              forward(params, cfg, data.inputs.row(i).transpose(), data.labels[i]);
          p.loss += t.loss;
          p.correct += argmax(t.probs) == data.labels[i] ? 1 : 0;
        }
        return p;
      },
      [](Partial& a, const Partial& b) {
        a.loss += b.loss;
        a.correct += b.correct;
      });
  EpochMetrics m;
  m.epoch = epoch;
  m.loss = total.loss / data.size();
  m.accuracy = static_cast<double>(total.correct) / data.size();
  return m;
}

MlpParams sgd_step(MlpParams params, const MlpConfig& cfg, const Dataset& data,
                   const MiniBatch& batch, double lr) {
  if (!params.all_finite()) throw DivergenceError("sgd_step: non-finite parameters");
  const std::size_t b = batch.indices.size();
  auto acc = parallel_reduce_chunks<GradAcc>(
      b, 16, GradAcc::zeros(cfg),
      [&](std::size_t lo, std::size_t hi) {
        GradAcc part = GradAcc::zeros(cfg);
        for (std::size_t k = lo; k < hi; ++k) {
          const int i = batch.indices[k];
          accumulate_sample(params, cfg, data.inputs.row(i).transpose(), data.labels[i],
                            part);
        }
        return part;
      },
      [](GradAcc& a, const GradAcc& o) { a.merge(o); });
  const double scale = lr / static_cast<double>(b);
  for (int l = 0; l < cfg.weight_count(); ++l) {
    params.weights[l].noalias() -= scale * acc.grads[l];
    if (!params.weights[l].allFinite())
      throw DivergenceError("sgd_step: update produced non-finite weights");
  }
  return params;
}

namespace {

std::vector<int> default_checkpoint_epochs(int epochs) {
  std::vector<int> at{0};
  for (int p = 1; p < epochs; p *= 2) at.push_back(p);
  at.push_back(epochs);
  std::sort(at.begin(), at.end());
  at.erase(std::unique(at.begin(), at.end()), at.end());
  return at;
}

Checkpoint snapshot(const MlpConfig& cfg, const MlpParams& params,
                    const EpochMetrics& m, const TrainConfig& tc) {
  Checkpoint c;
  c.config = cfg;
  c.params = params;
  c.epoch = m.epoch;
  c.train_loss = m.loss;
  c.train_accuracy = m.accuracy;
  c.seed = tc.seed;
  c.rng_state = "shuffle:seed=" + std::to_string(tc.seed) +
                ",epochs_done=" + std::to_string(m.epoch);
  return c;
}

}  // namespace

TrainResult train(const Dataset& data, const MlpConfig& cfg, const TrainConfig& tc) {
  cfg.validate();
  data.validate();
  if (tc.batch < 1) throw ConfigError("train: batch must be >= 1");
  if (tc.lr <= 0.0) throw ConfigError("train: learning rate must be positive");
  if (tc.epochs < 0) throw ConfigError("train: epochs must be >= 0");
  if (data.input_dim() != cfg.layer_dims[0])
    throw ShapeError("train: dataset dimension does not match the model input");

  std::vector<int> at = tc.checkpoint_epochs.empty() ? default_checkpoint_epochs(tc.epochs)
                                                     : tc.checkpoint_epochs;
  std::sort(at.begin(), at.end());
  at.erase(std::unique(at.begin(), at.end()), at.end());
  auto wants_checkpoint = [&](int e) {
    return std::binary_search(at.begin(), at.end(), e);
  };

  MlpParams params = MlpParams::init(cfg, tc.seed);
  const double target = tc.effective_target(cfg.loss);

  TrainResult out;
  EpochMetrics m = evaluate(params, cfg, data, 0);
  out.metrics.push_back(m);
  if (wants_checkpoint(0)) out.checkpoints.push_back(snapshot(cfg, params, m, tc));

  const int n = data.size();
  std::vector<int> order(n);
  for (int i = 0; i < n; ++i) order[i] = i;

  for (int epoch = 1; epoch <= tc.epochs; ++epoch) {
    if (tc.reshuffle_each_epoch || epoch == 1) {
      Rng rng(Rng::derive(tc.seed, 0x7u, static_cast<std::uint64_t>(
                                             tc.reshuffle_each_epoch ? epoch : 1)));
      for (int i = 0; i < n; ++i) order[i] = i;
      rng.shuffle(order);
    }
    try {
      for (int lo = 0; lo < n; lo += tc.batch) {
        MiniBatch mb;
        const int hi = std::min(lo + tc.batch, n);
        mb.indices.assign(order.begin() + lo, order.begin() + hi);
        params = sgd_step(std::move(params), cfg, data, mb, tc.lr);
      }
      m = evaluate(params, cfg, data, epoch);
    } catch (const DivergenceError& e) {
      throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                            ")");
    } catch (const NumericalOverflow& e) {
      // Overflow inside a forward pass means a previous update diverged.
      throw DivergenceError(std::string(e.what()) + " (epoch " + std::to_string(epoch) +
                            ")");
    }
    out.metrics.push_back(m);
    const bool converged = tc.early_stop && m.accuracy >= target;
    const bool last = converged || epoch == tc.epochs;
    if (wants_checkpoint(epoch) || last) {
      if (out.checkpoints.empty() || out.checkpoints.back().epoch != epoch)
        out.checkpoints.push_back(snapshot(cfg, params, m, tc));
    }
    if (converged) break;
  }
  return out;
}

namespace {

constexpr char kMagic[5] = {'C', 'V', 'N', 'Z', '1'};

void put_u32(std::ostream& os, std::uint32_t v) {
  char b[4] = {char(v & 0xff), char((v >> 8) & 0xff), char((v >> 16) & 0xff),
               char((v >> 24) & 0xff)};
  os.write(b, 4);
}

std::uint32_t get_u32(std::istream& is) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw CorruptCheckpoint("checkpoint: truncated header field");
  return std::uint32_t(b[0]) | (std::uint32_t(b[1]) << 8) | (std::uint32_t(b[2]) << 16) |
         (std::uint32_t(b[3]) << 24);
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
  namespace fs = std::filesystem;
  const fs::path target(path);
  if (target.has_parent_path()) fs::create_directories(target.parent_path());
  const std::string tmp = path + ".tmp";
  {
    std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
    if (!os) throw FormatError("save_checkpoint: cannot open " + path);
    os.write(kMagic, 5);
    const auto& ws = ckpt.params.weights;
    put_u32(os, std::uint32_t(ws.size()));
    for (const auto& w : ws) {
      put_u32(os, std::uint32_t(w.rows()));
      put_u32(os, std::uint32_t(w.cols()));
    }
    for (const auto& w : ws) {
      for (Eigen::Index i = 0; i < w.rows(); ++i)
        for (Eigen::Index j = 0; j < w.cols(); ++j) {
          const double v = w(i, j);
          os.write(reinterpret_cast<const char*>(&v), 8);
        }
    }
    JsonWriter jw;
    jw.begin_object()
        .field("epoch", ckpt.epoch)
        .field("loss_kind", loss_name(ckpt.config.loss))
        .field("focal_layer", ckpt.config.focal_layer);
    jw.key("metrics")
        .begin_object()
        .field("train_loss", ckpt.train_loss)
        .field("train_accuracy", ckpt.train_accuracy)
        .end_object();
    jw.field("seed", static_cast<unsigned long long>(ckpt.seed))
        .field("rng_state", ckpt.rng_state)
        .field("config_hash", ckpt.config_hash)
        .field("lineage_hash", ckpt.lineage_hash)
        .end_object();
    const std::string& meta = jw.str();
    put_u32(os, std::uint32_t(meta.size()));
    os.write(meta.data(), static_cast<std::streamsize>(meta.size()));
    if (!os) throw FormatError("save_checkpoint: write failed for " + path);
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw FormatError("load_checkpoint: cannot open " + path);
  char magic[5];
  is.read(magic, 5);
  if (!is) throw CorruptCheckpoint("checkpoint: shorter than the magic");
  if (std::memcmp(magic, "CVNZ", 4) != 0)
    throw FormatError("checkpoint: bad magic");
  if (magic[4] != '1')
    throw FormatError(std::string("checkpoint: unsupported version '") + magic[4] +
                      "', expected '1'");

  const std::uint32_t n_layers = get_u32(is);
  if (n_layers == 0 || n_layers > 64) throw CorruptCheckpoint("checkpoint: bad layer count");
  std::vector<std::pair<std::uint32_t, std::uint32_t>> shapes(n_layers);
  for (auto& s : shapes) {
    s.first = get_u32(is);
    s.second = get_u32(is);
    if (s.first == 0 || s.second == 0) throw CorruptCheckpoint("checkpoint: zero dimension");
  }
  for (std::size_t l = 1; l < shapes.size(); ++l) {
    if (shapes[l].second != shapes[l - 1].first)
      throw CorruptCheckpoint("checkpoint: inconsistent layer shapes");
  }

  Checkpoint c;
  for (const auto& [rows, cols] : shapes) {
    Matrix w(rows, cols);
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        double v;
        is.read(reinterpret_cast<char*>(&v), 8);
        if (!is) throw CorruptCheckpoint("checkpoint: truncated weights");
        w(i, j) = v;
      }
    c.params.weights.push_back(std::move(w));
  }
  const std::uint32_t meta_len = get_u32(is);
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (!is) throw CorruptCheckpoint("checkpoint: truncated metadata");

  nlohmann::json j;
  try {
    j = nlohmann::json::parse(meta);
  } catch (const nlohmann::json::exception&) {
    throw CorruptCheckpoint("checkpoint: metadata is not valid JSON");
  }
  c.config.layer_dims.push_back(static_cast<int>(shapes[0].second));
  for (const auto& [rows, cols] : shapes) c.config.layer_dims.push_back(static_cast<int>(rows));
  try {
    c.config.loss = parse_loss(j.at("loss_kind").get<std::string>());
    c.config.focal_layer = j.at("focal_layer").get<int>();
    c.epoch = j.at("epoch").get<int>();
    c.train_loss = j.at("metrics").at("train_loss").get<double>();
    c.train_accuracy = j.at("metrics").at("train_accuracy").get<double>();
    c.seed = j.at("seed").get<std::uint64_t>();
    c.rng_state = j.value("rng_state", "");
    c.config_hash = j.value("config_hash", "");
    c.lineage_hash = j.value("lineage_hash", "");
  } catch (const nlohmann::json::exception& e) {
    throw CorruptCheckpoint(std::string("checkpoint: metadata field error: ") + e.what());
  }
  c.config.validate();
  if (!c.params.all_finite()) throw CorruptCheckpoint("checkpoint: non-finite weights");
  if (!(std::isfinite(c.train_loss) && std::isfinite(c.train_accuracy)))
    throw CorruptCheckpoint("checkpoint: non-finite metrics");
  return c;
}

}  // namespace covnz
