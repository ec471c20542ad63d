#include "covnz/config.hpp"

#include <fstream>
#include <set>

#include <nlohmann/json.hpp>

#include "covnz/fetch.hpp"
#include "covnz/jsonio.hpp"

namespace covnz {

namespace {

using nlohmann::json;

void require_keys(const json& j, const std::string& where,
                  const std::set<std::string>& allowed) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_to(const json& j, const char* key, T& out) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config key '") + key + "': " + e.what());
  }
}

void parse_dataset(const json& j, DatasetSection& s) {
  require_keys(j, "dataset",
               {"name", "path", "images", "labels", "files", "classes", "per_class",
                "seed", "fetch"});
  read_to(j, "name", s.name);
  read_to(j, "path", s.path);
  read_to(j, "images", s.images);
  read_to(j, "labels", s.labels);
  read_to(j, "files", s.files);
  read_to(j, "classes", s.classes);
  read_to(j, "per_class", s.per_class);
  read_to(j, "seed", s.seed);
  if (j.contains("fetch")) {
    for (const auto& item : j.at("fetch")) {
      require_keys(item, "dataset.fetch[]", {"url", "sha256", "file"});
      FetchItem f;
      read_to(item, "url", f.url);
      read_to(item, "sha256", f.sha256);
      read_to(item, "file", f.file);
      s.fetch.push_back(std::move(f));
    }
  }
  if (s.name != "idx" && s.name != "mnist" && s.name != "cifar10")
    throw ConfigError("dataset.name must be idx, mnist or cifar10");
  if (s.per_class < 0) throw ConfigError("dataset.per_class must be >= 0");
}

void parse_model(const json& j, ModelSection& s) {
  require_keys(j, "model", {"hidden_dims", "focal_layer", "loss"});
  read_to(j, "hidden_dims", s.hidden_dims);
  read_to(j, "focal_layer", s.focal_layer);
  read_to(j, "loss", s.loss);
  if (s.hidden_dims.empty()) throw ConfigError("model.hidden_dims must be nonempty");
  for (int d : s.hidden_dims)
    if (d < 1) throw ConfigError("model.hidden_dims entries must be positive");
  parse_loss(s.loss);
  if (s.focal_layer < 0 || s.focal_layer > static_cast<int>(s.hidden_dims.size()))
    throw ConfigError("model.focal_layer out of range");
}

void parse_train(const json& j, TrainSection& s) {
  require_keys(j, "train",
               {"batch", "lr", "epochs", "seed", "checkpoint_epochs", "accuracy_target",
                "early_stop", "reshuffle"});
  read_to(j, "batch", s.batch);
  read_to(j, "lr", s.lr);
  read_to(j, "epochs", s.epochs);
  read_to(j, "seed", s.seed);
  read_to(j, "checkpoint_epochs", s.checkpoint_epochs);
  read_to(j, "accuracy_target", s.accuracy_target);
  read_to(j, "early_stop", s.early_stop);
  read_to(j, "reshuffle", s.reshuffle);
  if (s.batch < 1) throw ConfigError("train.batch must be >= 1");
  if (s.lr <= 0.0) throw ConfigError("train.lr must be positive");
  if (s.epochs < 0) throw ConfigError("train.epochs must be >= 0");
}

void parse_analyze(const json& j, AnalyzeSection& s) {
  require_keys(j, "analyze",
               {"top_n", "n_pairs", "rand_trials", "pair_source", "covariance",
                "m_threshold", "batch"});
  read_to(j, "top_n", s.top_n);
  read_to(j, "n_pairs", s.n_pairs);
  read_to(j, "rand_trials", s.rand_trials);
  read_to(j, "pair_source", s.pair_source);
  read_to(j, "covariance", s.covariance);
  read_to(j, "m_threshold", s.m_threshold);
  read_to(j, "batch", s.batch);
  if (s.pair_source != "independent" && s.pair_source != "sequential")
    throw ConfigError("analyze.pair_source must be independent or sequential");
  if (s.covariance != "centered" && s.covariance != "uncentered")
    throw ConfigError("analyze.covariance must be centered or uncentered");
  if (s.n_pairs < 1) throw ConfigError("analyze.n_pairs must be >= 1");
  if (s.rand_trials < 1) throw ConfigError("analyze.rand_trials must be >= 1");
  if (s.m_threshold <= 0.0 || s.m_threshold >= 1.0)
    throw ConfigError("analyze.m_threshold must lie in (0,1)");
}

void parse_suppress(const json& j, SuppressSection& s) {
  require_keys(j, "suppress",
               {"theta", "eps_tail", "eps_bg", "homogenize", "batch", "top_n", "seed"});
  read_to(j, "theta", s.theta);
  read_to(j, "eps_tail", s.eps_tail);
  read_to(j, "eps_bg", s.eps_bg);
  read_to(j, "homogenize", s.homogenize);
  read_to(j, "batch", s.batch);
  read_to(j, "top_n", s.top_n);
  read_to(j, "seed", s.seed);
  if (s.theta < 0.0 || s.theta > 1.0) throw ConfigError("suppress.theta must be in [0,1]");
  if (s.eps_tail <= 0.0 || s.eps_bg <= 0.0)
    throw ConfigError("suppress scales must be positive");
  if (s.batch < 1) throw ConfigError("suppress.batch must be >= 1");
}

void parse_ensemble(const json& j, const std::string& where, EnsembleSpec& s) {
  require_keys(j, where,
               {"dim", "modes", "samples", "kappa_mean", "rel_spread", "kappa_sigma",
                "mean_decades", "jitter_max", "bulk_decay", "seed"});
  read_to(j, "dim", s.dim);
  read_to(j, "modes", s.modes);
  read_to(j, "samples", s.samples);
  read_to(j, "kappa_mean", s.kappa_mean);
  read_to(j, "rel_spread", s.rel_spread);
  read_to(j, "kappa_sigma", s.kappa_sigma);
  read_to(j, "mean_decades", s.mean_decades);
  read_to(j, "jitter_max", s.jitter_max);
  read_to(j, "bulk_decay", s.bulk_decay);
  read_to(j, "seed", s.seed);
}

void parse_synth(const json& j, SynthSection& s) {
  require_keys(j, "synth", {"mode", "seed", "spiked", "rsm", "perfect", "degenerate"});
  read_to(j, "mode", s.mode);
  read_to(j, "seed", s.seed);
  if (s.mode != "spiked" && s.mode != "rsm" && s.mode != "perfect" &&
      s.mode != "degenerate")
    throw ConfigError("synth.mode must be spiked, rsm, perfect or degenerate");
  if (j.contains("spiked")) {
    const json& sp = j.at("spiked");
    require_keys(sp, "synth.spiked", {"dim", "spikes", "spike_value", "bulk", "trials"});
    read_to(sp, "dim", s.spiked.dim);
    read_to(sp, "spikes", s.spiked.spikes);
    read_to(sp, "spike_value", s.spiked.spike_value);
    read_to(sp, "bulk", s.spiked.bulk);
    read_to(sp, "trials", s.spiked_trials);
  }
  if (j.contains("rsm")) {
    const json& r = j.at("rsm");
    require_keys(r, "synth.rsm", {"dim", "sigma", "trials", "top_n"});
    read_to(r, "dim", s.rsm_dim);
    read_to(r, "sigma", s.rsm_sigma);
    read_to(r, "trials", s.rsm_trials);
    read_to(r, "top_n", s.rsm_top_n);
  }
  if (j.contains("perfect")) parse_ensemble(j.at("perfect"), "synth.perfect", s.perfect);
  if (j.contains("degenerate"))
    parse_ensemble(j.at("degenerate"), "synth.degenerate", s.degenerate);
  s.perfect.mode = EnsembleMode::perfect_alignment;
  s.degenerate.mode = EnsembleMode::degenerate;
}

}  // namespace

ExperimentConfig parse_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config is not valid JSON: ") + e.what());
  }
  require_keys(j, "config", {"dataset", "model", "train", "analyze", "suppress", "synth"});
  ExperimentConfig cfg;
  if (j.contains("dataset")) parse_dataset(j.at("dataset"), cfg.dataset);
  if (j.contains("model")) parse_model(j.at("model"), cfg.model);
  if (j.contains("train")) parse_train(j.at("train"), cfg.train);
  if (j.contains("analyze")) parse_analyze(j.at("analyze"), cfg.analyze);
  if (j.contains("suppress")) parse_suppress(j.at("suppress"), cfg.suppress);
  if (j.contains("synth")) parse_synth(j.at("synth"), cfg.synth);

  const std::string full = canonical_config(cfg, false);
  cfg.config_hash = sha256_hex({reinterpret_cast<const std::uint8_t*>(full.data()),
                                full.size()});
  const std::string lineage = canonical_config(cfg, true);
  cfg.lineage_hash = sha256_hex({reinterpret_cast<const std::uint8_t*>(lineage.data()),
                                 lineage.size()});
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot open config file " + path);
  std::string text(std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>{});
  return parse_config(text);
}

namespace {

void emit_ensemble(JsonWriter& w, const EnsembleSpec& s) {
  w.begin_object()
      .field("dim", s.dim)
      .field("modes", s.modes)
      .field("samples", s.samples)
      .field("kappa_mean", s.kappa_mean)
      .field("rel_spread", s.rel_spread)
      .field("kappa_sigma", s.kappa_sigma)
      .field("mean_decades", s.mean_decades)
      .field("jitter_max", s.jitter_max)
      .field("bulk_decay", s.bulk_decay)
      .field("seed", static_cast<unsigned long long>(s.seed))
      .end_object();
}

}  // namespace

std::string canonical_config(const ExperimentConfig& cfg, bool lineage_only) {
  JsonWriter w;
  w.begin_object();
  w.key("dataset").begin_object();
  w.field("name", cfg.dataset.name)
      .field("path", cfg.dataset.path)
      .field("images", cfg.dataset.images)
      .field("labels", cfg.dataset.labels);
  w.key("files").begin_array();
  for (const auto& f : cfg.dataset.files) w.value(f);
  w.end_array();
  w.key("classes").begin_array();
  for (int c : cfg.dataset.classes) w.value(c);
  w.end_array();
  w.field("per_class", cfg.dataset.per_class)
      .field("seed", static_cast<unsigned long long>(cfg.dataset.seed));
  w.end_object();

  w.key("model").begin_object();
  w.key("hidden_dims").begin_array();
  for (int d : cfg.model.hidden_dims) w.value(d);
  w.end_array();
  w.field("focal_layer", cfg.model.focal_layer).field("loss", cfg.model.loss);
  w.end_object();

  w.key("train").begin_object();
  w.field("batch", cfg.train.batch)
      .field("lr", cfg.train.lr)
      .field("epochs", cfg.train.epochs)
      .field("seed", static_cast<unsigned long long>(cfg.train.seed));
  w.key("checkpoint_epochs").begin_array();
  for (int e : cfg.train.checkpoint_epochs) w.value(e);
  w.end_array();
  w.field("accuracy_target", cfg.train.accuracy_target)
      .field("early_stop", cfg.train.early_stop)
      .field("reshuffle", cfg.train.reshuffle);
  w.end_object();

  if (!lineage_only) {
    w.key("analyze").begin_object();
    w.field("top_n", cfg.analyze.top_n)
        .field("n_pairs", cfg.analyze.n_pairs)
        .field("rand_trials", cfg.analyze.rand_trials)
        .field("pair_source", cfg.analyze.pair_source)
        .field("covariance", cfg.analyze.covariance)
        .field("m_threshold", cfg.analyze.m_threshold)
        .field("batch", cfg.analyze.batch);
    w.end_object();

    w.key("suppress").begin_object();
    w.field("theta", cfg.suppress.theta)
        .field("eps_tail", cfg.suppress.eps_tail)
        .field("eps_bg", cfg.suppress.eps_bg)
        .field("homogenize", cfg.suppress.homogenize)
        .field("batch", cfg.suppress.batch)
        .field("top_n", cfg.suppress.top_n)
        .field("seed", static_cast<unsigned long long>(cfg.suppress.seed));
    w.end_object();

    w.key("synth").begin_object();
    w.field("mode", cfg.synth.mode)
        .field("seed", static_cast<unsigned long long>(cfg.synth.seed));
    w.key("spiked").begin_object();
    w.field("dim", cfg.synth.spiked.dim)
        .field("spikes", cfg.synth.spiked.spikes)
        .field("spike_value", cfg.synth.spiked.spike_value)
        .field("bulk", cfg.synth.spiked.bulk)
        .field("trials", cfg.synth.spiked_trials)
        .end_object();
    w.key("rsm").begin_object();
    w.field("dim", cfg.synth.rsm_dim)
        .field("sigma", cfg.synth.rsm_sigma)
        .field("trials", cfg.synth.rsm_trials)
        .field("top_n", cfg.synth.rsm_top_n)
        .end_object();
    w.key("perfect");
    emit_ensemble(w, cfg.synth.perfect);
    w.key("degenerate");
    emit_ensemble(w, cfg.synth.degenerate);
    w.end_object();
  }
  w.end_object();
  return w.str();
}

MlpConfig ExperimentConfig::mlp_config(int input_dim, int classes) const {
  MlpConfig m;
  m.layer_dims.push_back(input_dim);
  for (int d : model.hidden_dims) m.layer_dims.push_back(d);
  m.layer_dims.push_back(classes);
  m.focal_layer = model.focal_layer;
  m.loss = parse_loss(model.loss);
  m.validate();
  return m;
}

TrainConfig ExperimentConfig::train_config() const {
  TrainConfig tc;
  tc.batch = train.batch;
  tc.lr = train.lr;
  tc.epochs = train.epochs;
  tc.seed = train.seed;
  tc.checkpoint_epochs = train.checkpoint_epochs;
  tc.accuracy_target = train.accuracy_target;
  tc.early_stop = train.early_stop;
  tc.reshuffle_each_epoch = train.reshuffle;
  return tc;
}

int ExperimentConfig::effective_top_n(int classes, int focal_dim) const {
  int n = analyze.top_n;
  if (n <= 0) n = classes <= 3 ? 300 : 1000;
  return std::min(n, focal_dim);
}

int ExperimentConfig::effective_analyze_batch(int classes) const {
  if (analyze.batch > 0) {
    if (analyze.batch % classes != 0)
      throw ConfigError("analyze.batch must be divisible by the class count");
    return analyze.batch;
  }
  const int b = (train.batch / classes) * classes;
  return b >= classes ? b : classes;
}

PairSource ExperimentConfig::pair_source() const {
  return analyze.pair_source == "sequential" ? PairSource::sequential
                                             : PairSource::independent;
}

Dataset resolve_dataset(const DatasetSection& ds) {
  Dataset full;
  if (ds.name == "mnist") {
    if (ds.path.empty()) throw ConfigError("dataset.path required for mnist");
    full = load_idx_dataset(ds.path + "/train-images-idx3-ubyte",
                            ds.path + "/train-labels-idx1-ubyte", 10, "mnist");
  } else if (ds.name == "idx") {
    if (ds.images.empty() || ds.labels.empty())
      throw ConfigError("dataset.images and dataset.labels required for idx");
    full = load_idx_dataset(ds.images, ds.labels, 0, "idx");
  } else if (ds.name == "cifar10") {
    std::vector<std::string> files = ds.files;
    if (files.empty()) {
      if (ds.path.empty()) throw ConfigError("dataset.path or files required for cifar10");
      for (int i = 1; i <= 5; ++i)
        files.push_back(ds.path + "/data_batch_" + std::to_string(i) + ".bin");
    }
    std::vector<std::uint8_t> all;
    for (const auto& f : files) {
      std::ifstream in(f, std::ios::binary);
      if (!in) throw FormatError("cannot open " + f);
      all.insert(all.end(), std::istreambuf_iterator<char>(in),
                 std::istreambuf_iterator<char>{});
    }
    full = parse_cifar10(all);
  }
  std::vector<int> classes = ds.classes;
  if (classes.empty()) {
    for (int c = 0; c < full.class_count; ++c) classes.push_back(c);
  }
  if (ds.per_class <= 0)
    throw ConfigError("dataset.per_class must be positive to build the working subset");
  return balanced_subset(full, classes, ds.per_class, ds.seed);
}

}  // namespace covnz
