#include <doctest.h>

#include <set>

#include "covnz/data.hpp"
#include "support.hpp"

using namespace covnz;

TEST_CASE("parse_idx hand-built label file") {
  const auto bytes = serialize_idx_labels({7, 0, 9});
  const IdxPart part = parse_idx(bytes);
  CHECK(!part.is_images);
  REQUIRE(part.labels.size() == 3);
  CHECK(part.labels[0] == 7);
  CHECK(part.labels[1] == 0);
  CHECK(part.labels[2] == 9);
}

TEST_CASE("parse_idx hand-built image file") {
  const auto bytes = serialize_idx_images({0, 255, 255, 0}, 1, 2, 2);
  const IdxPart part = parse_idx(bytes);
  CHECK(part.is_images);
  CHECK(part.count == 1);
  CHECK(part.images(0, 0) == 0.0);
  CHECK(part.images(0, 1) == 1.0);
  CHECK(part.images(0, 2) == 1.0);
  CHECK(part.images(0, 3) == 0.0);
}

TEST_CASE("parse_idx error cases") {
  std::vector<std::uint8_t> bad = serialize_idx_labels({1, 2});
  bad[3] = 0x99;  // magic 0x00000999
  CHECK_THROWS_AS(parse_idx(bad), FormatError);

  auto truncated = serialize_idx_images({1, 2, 3, 4}, 1, 2, 2);
  truncated.pop_back();
  CHECK_THROWS_AS(parse_idx(truncated), TruncatedFile);

  auto trailing = serialize_idx_labels({1, 2});
  trailing.push_back(0);
  CHECK_THROWS_AS(parse_idx(trailing), FormatError);
}

TEST_CASE("parse_idx round-trips random tensors") {
  Rng rng(21);
  for (int round = 0; round < 5; ++round) {
    const int n = 1 + static_cast<int>(rng.below(4));
    const int rows = 1 + static_cast<int>(rng.below(5));
    const int cols = 1 + static_cast<int>(rng.below(5));
    std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * rows * cols);
    for (auto& p : pixels) p = static_cast<std::uint8_t>(rng.below(256));
    const IdxPart part = parse_idx(serialize_idx_images(pixels, n, rows, cols));
    const auto rebuilt = serialize_idx_images(
        [&] {
          std::vector<std::uint8_t> out;
          for (int i = 0; i < n; ++i)
            for (int p = 0; p < rows * cols; ++p)
              out.push_back(static_cast<std::uint8_t>(std::lround(part.images(i, p) * 255.0)));
          return out;
        }(),
        n, rows, cols);
    CHECK(rebuilt == serialize_idx_images(pixels, n, rows, cols));
  }
}

TEST_CASE("parse_cifar10 record handling") {
  std::vector<std::uint8_t> rec(3073, 0);
  rec[0] = 4;
  rec[1] = 255;
  const Dataset d = parse_cifar10(rec);
  CHECK(d.size() == 1);
  CHECK(d.labels[0] == 4);
  CHECK(d.inputs(0, 0) == 1.0);
  CHECK(d.inputs(0, 1) == 0.0);

  CHECK(parse_cifar10(std::vector<std::uint8_t>{}).size() == 0);

  std::vector<std::uint8_t> short_rec(3072, 0);
  CHECK_THROWS_AS(parse_cifar10(short_rec), FormatError);

  std::vector<std::uint8_t> bad_label(3073, 0);
  bad_label[0] = 12;
  CHECK_THROWS_AS(parse_cifar10(bad_label), FormatError);
}

TEST_CASE("balanced_subset sizes, remapping and determinism") {
  const Dataset digits = covnz::test::make_digits(4, 30, 99, 8);
  const Dataset sub = balanced_subset(digits, {2, 0}, 10, 5);
  CHECK(sub.size() == 20);
  CHECK(sub.class_count == 2);
  int zeros = 0;
  for (int y : sub.labels) {
    CHECK(y >= 0);
    CHECK(y < 2);
    zeros += y == 0 ? 1 : 0;
  }
  CHECK(zeros == 10);

  const Dataset again = balanced_subset(digits, {2, 0}, 10, 5);
  CHECK((sub.inputs - again.inputs).cwiseAbs().maxCoeff() == 0.0);

  CHECK(balanced_subset(digits, {1}, 0, 5).size() == 0);
  CHECK_THROWS_AS(balanced_subset(digits, {1}, 31, 5), InsufficientClassData);
}

TEST_CASE("stratified_batches partitions an epoch") {
  const Dataset d = covnz::test::make_digits(2, 4, 7, 6);
  const auto batches = stratified_batches(d, 4, 3, 0);
  REQUIRE(batches.size() == 2);
  std::set<int> seen;
  for (const auto& b : batches) {
    REQUIRE(b.size() == 4);
    int per_class[2] = {0, 0};
    for (int idx : b.indices) {
      seen.insert(idx);
      ++per_class[d.labels[idx]];
    }
    CHECK(per_class[0] == 2);
    CHECK(per_class[1] == 2);
  }
  CHECK(seen.size() == 8);  // every sample exactly once

  const auto same = stratified_batches(d, 4, 3, 0);
  CHECK(same[0].indices == batches[0].indices);
  CHECK(same[1].indices == batches[1].indices);
  const auto other_epoch = stratified_batches(d, 4, 3, 1);
  CHECK((other_epoch[0].indices != batches[0].indices ||
         other_epoch[1].indices != batches[1].indices));
}

TEST_CASE("stratified_batches divisibility errors") {
  const Dataset d4 = covnz::test::make_digits(4, 6, 7, 6);
  CHECK_THROWS_AS(stratified_batches(d4, 6, 1, 0), BatchShapeError);
  const Dataset d2 = covnz::test::make_digits(2, 5, 7, 6);
  CHECK_THROWS_AS(stratified_batches(d2, 4, 1, 0), BatchShapeError);  // 5 % 2 != 0
}

TEST_CASE("draw_stratified_batch quotas and uniqueness") {
  const Dataset d = covnz::test::make_digits(3, 20, 13, 6);
  Rng rng(5);
  const MiniBatch mb = draw_stratified_batch(d, 9, rng);
  REQUIRE(mb.size() == 9);
  std::set<int> uniq(mb.indices.begin(), mb.indices.end());
  CHECK(uniq.size() == 9);
  int per_class[3] = {0, 0, 0};
  for (int idx : mb.indices) ++per_class[d.labels[idx]];
  for (int k = 0; k < 3; ++k) CHECK(per_class[k] == 3);
}

TEST_CASE("match_pairs self-pairing with identical batches") {
  const Dataset d = covnz::test::make_digits(3, 1, 3, 6);
  MiniBatch all;
  all.indices = {0, 1, 2};
  const Pairing p = match_pairs(all, all, d);
  for (std::size_t k = 0; k < 3; ++k) {
    CHECK(p.partner[k] == all.indices[k]);
    CHECK(p.distance[k] == 0.0);
  }
}

TEST_CASE("match_pairs equals exhaustive nearest neighbor") {
  const Dataset d = covnz::test::make_digits(2, 8, 31, 6);
  Rng rng(17);
  const MiniBatch nu = draw_stratified_batch(d, 8, rng);
  const MiniBatch mu = draw_stratified_batch(d, 8, rng);
  const Pairing p = match_pairs(nu, mu, d);
  for (std::size_t k = 0; k < nu.indices.size(); ++k) {
    const int i = nu.indices[k];
    int best = -1;
    double best_d = 0.0;
    for (int j : mu.indices) {
      if (d.labels[j] != d.labels[i]) continue;
      const double dist = (d.inputs.row(j) - d.inputs.row(i)).norm();
      if (best < 0 || dist < best_d || (dist == best_d && j < best)) {
        best = j;
        best_d = dist;
      }
    }
    CHECK(p.partner[k] == best);
    CHECK(p.distance[k] == doctest::Approx(best_d).epsilon(1e-12));
  }
}

TEST_CASE("match_pairs error on missing class") {
  const Dataset d = covnz::test::make_digits(2, 4, 3, 6);
  MiniBatch nu, mu;
  for (int i = 0; i < d.size(); ++i)
    (d.labels[i] == 0 ? nu : mu).indices.push_back(i);
  CHECK_THROWS_AS(match_pairs(nu, mu, d), PairingError);
}
