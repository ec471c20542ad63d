#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "covnz/error.hpp"
#include "covnz/linalg.hpp"

namespace covnz {

struct Dataset {
  Matrix inputs;            // N x d, entries in [0, 1]
  std::vector<int> labels;  // size N, each in [0, class_count)
  int class_count = 0;
  std::string source;

  int size() const { return static_cast<int>(labels.size()); }
  int input_dim() const { return static_cast<int>(inputs.cols()); }
  void validate() const;
};

struct MiniBatch {
  std::vector<int> indices;  // unique positions into a Dataset
  int size() const { return static_cast<int>(indices.size()); }
};

// Partner assignment for samples of a nu-batch against a mu-batch:
// partner[k] is the dataset index paired with nu.indices[k].
struct Pairing {
  std::vector<int> partner;
  std::vector<double> distance;
  int repeated_partners = 0;  // partners shared by more than one sample
};

// One parsed IDX file: either an image tensor or a label vector.
struct IdxPart {
  bool is_images = false;
  Matrix images;  // N x (rows*cols), pixels scaled to [0,1]
  std::vector<std::uint8_t> labels;
  int count = 0;
  int rows = 0;
  int cols = 0;
};

// IDX with big-endian header; accepts magic 0x00000803 (ubyte images, 3
// dims) and 0x00000801 (ubyte labels, 1 dim).
IdxPart parse_idx(std::span<const std::uint8_t> bytes);

// Inverse of parse_idx for fixture construction; pixels are raw bytes.
std::vector<std::uint8_t> serialize_idx_images(const std::vector<std::uint8_t>& pixels,
                                               int count, int rows, int cols);
std::vector<std::uint8_t> serialize_idx_labels(const std::vector<std::uint8_t>& labels);

// CIFAR-10 binary: 3073-byte records, one label byte then 3072 channel-major
// pixel bytes.
Dataset parse_cifar10(std::span<const std::uint8_t> bytes);

// Joins parsed IDX images and labels into a dataset with K classes.
Dataset make_dataset(const IdxPart& images, const IdxPart& labels, int class_count,
                     std::string source);

Dataset load_idx_dataset(const std::string& images_path, const std::string& labels_path,
                         int class_count, std::string source);

// Deterministic balanced subset: exactly per_class samples for each entry of
// `classes`, labels remapped to 0..C-1 in the given order.
Dataset balanced_subset(const Dataset& d, const std::vector<int>& classes, int per_class,
                        std::uint64_t seed);

// Partitions one epoch into class-balanced batches of size B (B/C per
// class); within-class order is reshuffled per (seed, epoch). Every sample
// appears exactly once per epoch.
std::vector<MiniBatch> stratified_batches(const Dataset& d, int batch, std::uint64_t seed,
                                          int epoch);

// One independent stratified batch draw (B/C per class, sampled without
// replacement inside the batch).
MiniBatch draw_stratified_batch(const Dataset& d, int batch, Rng& rng);

// Within-class nearest-neighbor pairing of nu against mu; ties go to the
// smallest dataset index. Partners may repeat across different samples.
Pairing match_pairs(const MiniBatch& nu, const MiniBatch& mu, const Dataset& d);

}  // namespace covnz
