#include "covnz/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "covnz/parallel.hpp"

namespace covnz {

void Dataset::validate() const {
  if (inputs.rows() != static_cast<Eigen::Index>(labels.size()))
    throw FormatError("dataset: image count does not match label count");
  if (class_count < 1) throw FormatError("dataset: class_count must be positive");
  for (int y : labels)
    if (y < 0 || y >= class_count) throw FormatError("dataset: label out of range");
  if (inputs.size() > 0) {
    const double lo = inputs.minCoeff(), hi = inputs.maxCoeff();
    if (!(lo >= 0.0 && hi <= 1.0)) throw FormatError("dataset: inputs outside [0,1]");
  }
}

namespace {

std::uint32_t read_u32_be(std::span<const std::uint8_t> bytes, std::size_t off) {
  if (off + 4 > bytes.size()) throw TruncatedFile("idx: header past end of file");
  return (std::uint32_t(bytes[off]) << 24) | (std::uint32_t(bytes[off + 1]) << 16) |
         (std::uint32_t(bytes[off + 2]) << 8) | std::uint32_t(bytes[off + 3]);
}

void write_u32_be(std::vector<std::uint8_t>& out, std::uint32_t v) {
  out.push_back(std::uint8_t(v >> 24));
  out.push_back(std::uint8_t(v >> 16));
  out.push_back(std::uint8_t(v >> 8));
  out.push_back(std::uint8_t(v));
}

}  // namespace

IdxPart parse_idx(std::span<const std::uint8_t> bytes) {
  const std::uint32_t magic = read_u32_be(bytes, 0);
  IdxPart part;
  if (magic == 0x00000803u) {
    part.is_images = true;
    part.count = static_cast<int>(read_u32_be(bytes, 4));
    part.rows = static_cast<int>(read_u32_be(bytes, 8));
    part.cols = static_cast<int>(read_u32_be(bytes, 12));
    const std::size_t payload = std::size_t(part.count) * part.rows * part.cols;
    const std::size_t have = bytes.size() - 16;
    if (have < payload) throw TruncatedFile("idx: image payload truncated");
    if (have > payload) throw FormatError("idx: trailing bytes after image payload");
    part.images.resize(part.count, part.rows * part.cols);
    const std::uint8_t* px = bytes.data() + 16;
    for (int n = 0; n < part.count; ++n)
      for (int j = 0; j < part.rows * part.cols; ++j)
        part.images(n, j) = double(px[std::size_t(n) * part.rows * part.cols + j]) / 255.0;
  } else if (magic == 0x00000801u) {
    part.is_images = false;
    part.count = static_cast<int>(read_u32_be(bytes, 4));
    const std::size_t have = bytes.size() - 8;
    if (have < std::size_t(part.count)) throw TruncatedFile("idx: label payload truncated");
    if (have > std::size_t(part.count)) throw FormatError("idx: trailing bytes after labels");
    part.labels.assign(bytes.begin() + 8, bytes.end());
  } else {
    throw FormatError("idx: unsupported magic " + std::to_string(magic));
  }
  return part;
}

std::vector<std::uint8_t> serialize_idx_images(const std::vector<std::uint8_t>& pixels,
                                               int count, int rows, int cols) {
  if (pixels.size() != std::size_t(count) * rows * cols)
    throw FormatError("serialize_idx_images: pixel count mismatch");
  std::vector<std::uint8_t> out;
  out.reserve(16 + pixels.size());
  write_u32_be(out, 0x00000803u);
  write_u32_be(out, std::uint32_t(count));
  write_u32_be(out, std::uint32_t(rows));
  write_u32_be(out, std::uint32_t(cols));
  out.insert(out.end(), pixels.begin(), pixels.end());
  return out;
}

std::vector<std::uint8_t> serialize_idx_labels(const std::vector<std::uint8_t>& labels) {
  std::vector<std::uint8_t> out;
  out.reserve(8 + labels.size());
  write_u32_be(out, 0x00000801u);
  write_u32_be(out, std::uint32_t(labels.size()));
  out.insert(out.end(), labels.begin(), labels.end());
  return out;
}

Dataset parse_cifar10(std::span<const std::uint8_t> bytes) {
  constexpr std::size_t kRecord = 3073;  // 1 label byte + 3*1024 pixels
  if (bytes.size() % kRecord != 0)
    throw FormatError("cifar10: byte length not divisible by 3073");
  const int n = static_cast<int>(bytes.size() / kRecord);
  Dataset d;
  d.class_count = 10;
  d.source = "cifar10";
  d.inputs.resize(n, 3072);
  d.labels.resize(n);
  for (int i = 0; i < n; ++i) {
    const std::uint8_t* rec = bytes.data() + std::size_t(i) * kRecord;
    if (rec[0] > 9) throw FormatError("cifar10: label byte exceeds 9");
    d.labels[i] = rec[0];
    for (int j = 0; j < 3072; ++j) d.inputs(i, j) = double(rec[1 + j]) / 255.0;
  }
  return d;
}

Dataset make_dataset(const IdxPart& images, const IdxPart& labels, int class_count,
                     std::string source) {
  if (!images.is_images || labels.is_images)
    throw FormatError("make_dataset: wrong part kinds");
  if (images.count != labels.count)
    throw FormatError("make_dataset: image/label count mismatch");
  Dataset d;
  d.inputs = images.images;
  d.labels.assign(labels.labels.begin(), labels.labels.end());
  if (class_count <= 0) {  // infer from the label payload
    int k = 2;
    for (int y : d.labels) k = std::max(k, y + 1);
    class_count = k;
  }
  d.class_count = class_count;
  d.source = std::move(source);
  d.validate();
  return d;
}

namespace {

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>());
}

}  // namespace

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int class_count, std::string source) {
  const auto img_bytes = read_file(images_path);
  const auto lbl_bytes = read_file(labels_path);
  return make_dataset(parse_idx(img_bytes), parse_idx(lbl_bytes), class_count,
                      std::move(source));
}

Dataset balanced_subset(const Dataset& d, const std::vector<int>& classes, int per_class,
                        std::uint64_t seed) {
  if (per_class < 0) throw InsufficientClassData("balanced_subset: negative per_class");
  std::vector<std::vector<int>> pools(classes.size());
  for (int i = 0; i < d.size(); ++i) {
    for (std::size_t c = 0; c < classes.size(); ++c)
      if (d.labels[i] == classes[c]) pools[c].push_back(i);
  }
  std::vector<int> chosen;
  std::vector<int> chosen_label;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    if (static_cast<int>(pools[c].size()) < per_class)
      throw InsufficientClassData("balanced_subset: class " + std::to_string(classes[c]) +
                                  " has only " + std::to_string(pools[c].size()) +
                                  " samples, need " + std::to_string(per_class));
    Rng rng(Rng::derive(seed, 0x5u, static_cast<std::uint64_t>(c)));
    rng.shuffle(pools[c]);
    std::vector<int> take(pools[c].begin(), pools[c].begin() + per_class);
    std::sort(take.begin(), take.end());
    for (int idx : take) {
      chosen.push_back(idx);
      chosen_label.push_back(static_cast<int>(c));
    }
  }
  Dataset out;
  out.class_count = static_cast<int>(classes.size());
  out.source = d.source + "/subset";
  out.inputs.resize(chosen.size(), d.inputs.cols());
  out.labels.resize(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    out.inputs.row(i) = d.inputs.row(chosen[i]);
    out.labels[i] = chosen_label[i];
  }
  return out;
}

namespace {

std::vector<std::vector<int>> indices_by_class(const Dataset& d) {
  std::vector<std::vector<int>> by_class(d.class_count);
  for (int i = 0; i < d.size(); ++i) by_class[d.labels[i]].push_back(i);
  return by_class;
}

}  // namespace

std::vector<MiniBatch> stratified_batches(const Dataset& d, int batch, std::uint64_t seed,
                                          int epoch) {
  const int c = d.class_count;
  if (batch < 1 || batch % c != 0)
    throw BatchShapeError("stratified_batches: batch " + std::to_string(batch) +
                          " not divisible by class count " + std::to_string(c));
  const int per_batch = batch / c;
  auto by_class = indices_by_class(d);
  const int per_class = static_cast<int>(by_class[0].size());
  for (const auto& pool : by_class) {
    if (static_cast<int>(pool.size()) != per_class)
      throw BatchShapeError("stratified_batches: classes are not balanced");
  }
  if (per_class % per_batch != 0)
    throw BatchShapeError("stratified_batches: per-class count " + std::to_string(per_class) +
                          " not divisible by per-batch quota " + std::to_string(per_batch));
  for (int k = 0; k < c; ++k) {
    Rng rng(Rng::derive(seed, 0xBu, static_cast<std::uint64_t>(epoch),
                        static_cast<std::uint64_t>(k)));
    rng.shuffle(by_class[k]);
  }
  const int n_batches = per_class / per_batch;
  std::vector<MiniBatch> batches(n_batches);
  for (int b = 0; b < n_batches; ++b) {
    batches[b].indices.reserve(batch);
    for (int k = 0; k < c; ++k)
      for (int j = 0; j < per_batch; ++j)
        batches[b].indices.push_back(by_class[k][b * per_batch + j]);
  }
  return batches;
}

MiniBatch draw_stratified_batch(const Dataset& d, int batch, Rng& rng) {
  const int c = d.class_count;
  if (batch < 1 || batch % c != 0)
    throw BatchShapeError("draw_stratified_batch: batch " + std::to_string(batch) +
                          " not divisible by class count " + std::to_string(c));
  const int per_batch = batch / c;
  auto by_class = indices_by_class(d);
  MiniBatch mb;
  mb.indices.reserve(batch);
  for (int k = 0; k < c; ++k) {
    auto& pool = by_class[k];
    if (static_cast<int>(pool.size()) < per_batch)
      throw BatchShapeError("draw_stratified_batch: class " + std::to_string(k) +
                            " smaller than per-class quota");
    // Partial Fisher-Yates: the first per_batch slots become the draw.
    for (int j = 0; j < per_batch; ++j) {
      const auto pick = j + static_cast<int>(rng.below(pool.size() - j));
      std::swap(pool[j], pool[pick]);
      mb.indices.push_back(pool[j]);
    }
  }
  return mb;
}

Pairing match_pairs(const MiniBatch& nu, const MiniBatch& mu, const Dataset& d) {
  std::vector<std::vector<int>> mu_by_class(d.class_count);
  for (int idx : mu.indices) mu_by_class[d.labels[idx]].push_back(idx);
  for (auto& pool : mu_by_class) std::sort(pool.begin(), pool.end());
  for (int idx : nu.indices) {
    if (mu_by_class[d.labels[idx]].empty())
      throw PairingError("match_pairs: class " + std::to_string(d.labels[idx]) +
                         " missing from mu batch");
  }

  const std::size_t n = nu.indices.size();
  Pairing pairing;
  pairing.partner.resize(n);
  pairing.distance.resize(n);
  parallel_for_chunks(n, 64, [&](std::size_t lo, std::size_t hi) {
    for (std::size_t k = lo; k < hi; ++k) {
      const int p = nu.indices[k];
      const auto& pool = mu_by_class[d.labels[p]];
      int best = -1;
      double best_d2 = 0.0;
      for (int cand : pool) {
        const double d2 = (d.inputs.row(cand) - d.inputs.row(p)).squaredNorm();
        if (best < 0 || d2 < best_d2) {  // pool is sorted, so ties keep the smaller index
          best = cand;
          best_d2 = d2;
        }
      }
      pairing.partner[k] = best;
      pairing.distance[k] = std::sqrt(best_d2);
    }
  });
  std::map<int, int> uses;
  for (int p : pairing.partner) ++uses[p];
  for (const auto& [idx, cnt] : uses)
    if (cnt > 1) pairing.repeated_partners += cnt - 1;
  return pairing;
}

}  // namespace covnz
