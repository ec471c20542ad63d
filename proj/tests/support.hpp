#pragma once

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "covnz/awd.hpp"
#include "covnz/data.hpp"
#include "covnz/model.hpp"
#include "covnz/rng.hpp"

namespace covnz::test {

inline std::filesystem::path fresh_tmp_dir(const std::string& tag) {
  auto base = std::filesystem::temp_directory_path() / ("covnz_" + tag);
  std::filesystem::remove_all(base);
  std::filesystem::create_directories(base);
  return base;
}

inline std::vector<std::uint8_t> read_bytes(const std::filesystem::path& p) {
  std::ifstream f(p, std::ios::binary);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(f),
                                   std::istreambuf_iterator<char>{});
}

inline void write_bytes(const std::filesystem::path& p,
                        const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(p, std::ios::binary | std::ios::trunc);
  f.write(reinterpret_cast<const char*>(bytes.data()),
          static_cast<std::streamsize>(bytes.size()));
}

// Random bias-free MLP with dims <= max_dim for derivative oracles.
struct TinyNet {
  MlpConfig cfg;
  MlpParams params;
  Vector x;
  int y = 0;
};

inline TinyNet make_tiny_net(std::uint64_t seed, LossKind loss, int max_dim = 8) {
  Rng rng(seed);
  TinyNet net;
  const int n_weights = 2 + static_cast<int>(rng.below(2));  // 2 or 3 weight layers
  net.cfg.layer_dims.push_back(2 + static_cast<int>(rng.below(max_dim - 1)));
  for (int l = 0; l < n_weights - 1; ++l)
    net.cfg.layer_dims.push_back(2 + static_cast<int>(rng.below(max_dim - 1)));
  net.cfg.layer_dims.push_back(2 + static_cast<int>(rng.below(3)));  // 2..4 classes
  net.cfg.focal_layer = static_cast<int>(rng.below(n_weights));
  net.cfg.loss = loss;
  net.params = MlpParams::init(net.cfg, rng.next_u64());
  for (auto& w : net.params.weights) w *= 1.5;  // O(1) activations, generic masks
  net.x.resize(net.cfg.layer_dims[0]);
  for (Eigen::Index i = 0; i < net.x.size(); ++i) net.x[i] = rng.uniform();
  net.y = static_cast<int>(rng.below(net.cfg.classes()));
  return net;
}

inline double loss_of(const MlpParams& params, const MlpConfig& cfg, const Vector& x,
                      int y) {
  return forward(params, cfg, x, y).loss;
}

// True when every pre-activation sits clear of the ReLU kink, so central
// finite differences with the given step never straddle a mask flip (the
// derivative identities hold almost everywhere; a point exactly on a kink is
// not a valid probe).
inline bool fd_safe_point(const TinyNet& net, double margin = 1e-3) {
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  for (std::size_t l = 0; l + 1 < t.preacts.size(); ++l)
    if (t.preacts[l].cwiseAbs().minCoeff() < margin) return false;
  return t.activities[net.cfg.focal_layer].squaredNorm() > 0.0;
}

// Central finite differences of the loss with respect to the focal weights.
inline Vector fd_focal_gradient(const TinyNet& net, double step = 1e-5) {
  const int f = net.cfg.focal_layer;
  MlpParams p = net.params;
  const int rows = net.cfg.focal_out(), cols = net.cfg.focal_in();
  Vector g(rows * cols);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double keep = p.weights[f](i, j);
      p.weights[f](i, j) = keep + step;
      const double up = loss_of(p, net.cfg, net.x, net.y);
      p.weights[f](i, j) = keep - step;
      const double dn = loss_of(p, net.cfg, net.x, net.y);
      p.weights[f](i, j) = keep;
      g[i * cols + j] = (up - dn) / (2.0 * step);
    }
  }
  return g;
}

// Central finite differences of the analytic focal gradient: the dense
// focal-block Hessian, symmetrized.
inline Matrix fd_focal_hessian(const TinyNet& net, double step = 1e-5) {
  const int f = net.cfg.focal_layer;
  const int rows = net.cfg.focal_out(), cols = net.cfg.focal_in();
  const int dim = rows * cols;
  MlpParams p = net.params;
  Matrix h(dim, dim);
  for (int i = 0; i < rows; ++i) {
    for (int j = 0; j < cols; ++j) {
      const double keep = p.weights[f](i, j);
      p.weights[f](i, j) = keep + step;
      ForwardTrace up_t = forward(p, net.cfg, net.x, net.y);
      const Vector up = per_sample_gradient(up_t, p, net.cfg);
      p.weights[f](i, j) = keep - step;
      ForwardTrace dn_t = forward(p, net.cfg, net.x, net.y);
      const Vector dn = per_sample_gradient(dn_t, p, net.cfg);
      p.weights[f](i, j) = keep;
      h.row(i * cols + j) = ((up - dn) / (2.0 * step)).transpose();
    }
  }
  return 0.5 * (h + h.transpose());
}

// Loss as a function of the focal pre-activation, everything upstream fixed.
inline double loss_from_focal_preact(const MlpParams& params, const MlpConfig& cfg,
                                     const Vector& z_focal, int y) {
  const int n_layers = cfg.weight_count();
  const int f = cfg.focal_layer;
  Vector z = z_focal;
  for (int l = f; l + 1 < n_layers; ++l) {
    const Vector a = z.cwiseMax(0.0);
    z = params.weights[l + 1] * a;
  }
  const double shift = z.maxCoeff();
  const Vector e = (z.array() - shift).exp();
  const Vector probs = e / e.sum();
  if (cfg.loss == LossKind::cross_entropy) return -std::log(probs[y]);
  double s = 0.0;
  for (int k = 0; k < cfg.classes(); ++k) {
    const double r = probs[k] - (k == y ? 1.0 : 0.0);
    s += r * r;
  }
  return s / cfg.classes();
}

// Finite-difference Hessian of the loss with respect to the focal
// pre-activation (second differences of loss_from_focal_preact).
inline Matrix fd_preact_hessian(const TinyNet& net, double step = 1e-4) {
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  const Vector z0 = t.preacts[net.cfg.focal_layer];
  const int n = static_cast<int>(z0.size());
  Matrix h(n, n);
  for (int i = 0; i < n; ++i) {
    for (int j = 0; j <= i; ++j) {
      Vector z = z0;
      auto eval = [&](double di, double dj) {
        z = z0;
        z[i] += di;
        z[j] += dj;
        return loss_from_focal_preact(net.params, net.cfg, z, net.y);
      };
      const double v =
          (eval(step, step) - eval(step, -step) - eval(-step, step) + eval(-step, -step)) /
          (4.0 * step * step);
      h(i, j) = v;
      h(j, i) = v;
    }
  }
  return h;
}

// MNIST-shaped synthetic digits: per class a few fixed bumps on a 28x28
// canvas, per sample strongly jittered positions, widths and amplitudes plus
// a distractor bump and pixel noise. Learnable to 100% train accuracy by a
// small MLP yet hard enough that convergence takes many epochs.
inline Dataset make_digits(int classes, int per_class, std::uint64_t seed, int side = 28) {
  const int d = side * side;
  Dataset data;
  data.class_count = classes;
  data.source = "digits";
  data.inputs.resize(classes * per_class, d);
  data.labels.resize(classes * per_class);

  // Weak class-specific bumps over a strong class-independent background:
  // the labels stay consistent (distinct bump geometry per class) while the
  // nuisance structure dominates the raw pixels, so convergence takes many
  // epochs and the two losses separate cleanly in training speed.
  std::vector<std::vector<double>> centers(classes);
  for (int k = 0; k < classes; ++k) {
    Rng rng(Rng::derive(seed, 0xD1u, static_cast<std::uint64_t>(k)));
    for (int b = 0; b < 3; ++b) {
      centers[k].push_back(5.0 + rng.uniform() * (side - 10));  // cx
      centers[k].push_back(5.0 + rng.uniform() * (side - 10));  // cy
      centers[k].push_back(1.8 + rng.uniform() * 2.0);          // width
    }
  }

  int row = 0;
  for (int k = 0; k < classes; ++k) {
    for (int s = 0; s < per_class; ++s, ++row) {
      Rng rng(Rng::derive(seed, 0xD2u, static_cast<std::uint64_t>(k),
                          static_cast<std::uint64_t>(s)));
      Eigen::ArrayXd img = Eigen::ArrayXd::Zero(d);
      auto stamp = [&](double cx, double cy, double w, double amp) {
        for (int yy = 0; yy < side; ++yy)
          for (int xx = 0; xx < side; ++xx) {
            const double r2 = (xx - cx) * (xx - cx) + (yy - cy) * (yy - cy);
            img[yy * side + xx] += amp * std::exp(-r2 / (2.0 * w * w));
          }
      };
      // Per-sample variation comes from positions and pixel noise only;
      // amplitudes and widths stay near-constant so sample difficulty is
      // homogeneous.
      for (int b = 0; b < 3; ++b) {
        const double cx = centers[k][3 * b] + 2.5 * (2.0 * rng.uniform() - 1.0);
        const double cy = centers[k][3 * b + 1] + 2.5 * (2.0 * rng.uniform() - 1.0);
        const double w = centers[k][3 * b + 2] * (0.95 + 0.1 * rng.uniform());
        stamp(cx, cy, w, 0.30 + 0.03 * rng.uniform());
      }
      // class-independent distractors at signal-comparable amplitude
      for (int b = 0; b < 2; ++b)
        stamp(2.0 + rng.uniform() * (side - 4), 2.0 + rng.uniform() * (side - 4),
              2.2 + 0.4 * rng.uniform(), 0.30 + 0.03 * rng.uniform());
      for (int p = 0; p < d; ++p) {
        const double noisy = img[p] + 0.07 * rng.normal();
        data.inputs(row, p) = std::clamp(noisy, 0.0, 1.0);
      }
      data.labels[row] = k;
    }
  }
  return data;
}

// Serializes a dataset as an IDX image/label file pair (pixels quantized to
// bytes), for driving the CLI through real files.
inline void write_idx_dataset(const std::filesystem::path& dir, const Dataset& data,
                              int side = 28) {
  const int n = data.size();
  std::vector<std::uint8_t> pixels(static_cast<std::size_t>(n) * side * side);
  std::vector<std::uint8_t> labels(n);
  for (int i = 0; i < n; ++i) {
    labels[i] = static_cast<std::uint8_t>(data.labels[i]);
    for (int p = 0; p < side * side; ++p)
      pixels[static_cast<std::size_t>(i) * side * side + p] =
          static_cast<std::uint8_t>(std::lround(data.inputs(i, p) * 255.0));
  }
  write_bytes(dir / "images-idx3-ubyte", serialize_idx_images(pixels, n, side, side));
  write_bytes(dir / "labels-idx1-ubyte", serialize_idx_labels(labels));
}

}  // namespace covnz::test
