#include <doctest.h>

#include "covnz/model.hpp"
#include "support.hpp"

using namespace covnz;
using covnz::test::TinyNet;
using covnz::test::make_tiny_net;

TEST_CASE("forward with all-zero weights is symmetric") {
  MlpConfig cfg;
  cfg.layer_dims = {4, 3, 5};
  cfg.focal_layer = 1;
  cfg.loss = LossKind::cross_entropy;
  const MlpParams params = MlpParams::zeros(cfg);
  Vector x(4);
  x << 0.3, 0.1, 0.9, 0.5;
  const ForwardTrace t = forward(params, cfg, x, 2);
  const int k = 5;
  for (int i = 0; i < k; ++i) CHECK(t.probs[i] == doctest::Approx(1.0 / k).epsilon(1e-14));
  CHECK(t.loss == doctest::Approx(std::log(double(k))).epsilon(1e-14));

  MlpConfig mse = cfg;
  mse.loss = LossKind::mse;
  const double expect =
      ((1.0 - 1.0 / k) * (1.0 - 1.0 / k) + (k - 1) / (double(k) * k)) / k;
  CHECK(forward(params, mse, x, 2).loss == doctest::Approx(expect).epsilon(1e-14));
}

TEST_CASE("forward probabilities form a simplex") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const TinyNet net = make_tiny_net(seed, seed % 2 ? LossKind::mse : LossKind::cross_entropy);
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    CHECK(t.probs.minCoeff() > 0.0);
    CHECK(t.probs.sum() == doctest::Approx(1.0).epsilon(1e-12));
    for (std::size_t l = 0; l < t.relu_masks.size(); ++l)
      for (Eigen::Index i = 0; i < t.relu_masks[l].size(); ++i)
        CHECK(t.relu_masks[l][i] == (t.preacts[l][i] > 0.0 ? 1.0 : 0.0));
  }
}

TEST_CASE("forward loss matches an independent scalar re-evaluation") {
  const TinyNet net = make_tiny_net(40, LossKind::cross_entropy);
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  // plain re-evaluation with scalar loops
  std::vector<double> a(net.x.data(), net.x.data() + net.x.size());
  for (int l = 0; l < net.cfg.weight_count(); ++l) {
    const Matrix& w = net.params.weights[l];
    std::vector<double> z(w.rows(), 0.0);
    for (int i = 0; i < w.rows(); ++i)
      for (int j = 0; j < w.cols(); ++j) z[i] += w(i, j) * a[j];
    if (l + 1 < net.cfg.weight_count())
      for (auto& v : z) v = v > 0.0 ? v : 0.0;
    a = z;
  }
  double mx = a[0];
  for (double v : a) mx = std::max(mx, v);
  double denom = 0.0;
  for (double v : a) denom += std::exp(v - mx);
  const double loss = -std::log(std::exp(a[net.y] - mx) / denom);
  CHECK(t.loss == doctest::Approx(loss).epsilon(1e-12));
}

TEST_CASE("per_sample_gradient matches central finite differences") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const LossKind loss = seed % 2 ? LossKind::mse : LossKind::cross_entropy;
    const TinyNet net = make_tiny_net(100 + seed, loss);
    if (!covnz::test::fd_safe_point(net)) continue;
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    const Vector g = per_sample_gradient(t, net.params, net.cfg);
    const Vector fd = covnz::test::fd_focal_gradient(net);
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    CHECK((g - fd).cwiseAbs().maxCoeff() / scale < 1e-6);
  }
}

TEST_CASE("gradient vanishes with zero input activity") {
  TinyNet net = make_tiny_net(7, LossKind::cross_entropy);
  net.cfg.focal_layer = 0;  // focal input activity is the image itself
  net.x.setZero();
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  CHECK(per_sample_gradient(t, net.params, net.cfg).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("gradient vanishes at an exact CE interpolation point") {
  Vector p(3);
  p << 0.0, 1.0, 0.0;  // one-hot equals the label
  const Vector g = logit_gradient(p, 1, LossKind::cross_entropy);
  CHECK(g.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("logit_hessian closed forms") {
  Vector onehot(3);
  onehot << 0.0, 1.0, 0.0;
  CHECK(logit_hessian(onehot, 1, LossKind::cross_entropy).frobenius() == 0.0);

  Vector uniform(2);
  uniform << 0.5, 0.5;
  const SymMatrix h = logit_hessian(uniform, 0, LossKind::cross_entropy);
  CHECK(h(0, 0) == doctest::Approx(0.25));
  CHECK(h(0, 1) == doctest::Approx(-0.25));
  CHECK(h(1, 1) == doctest::Approx(0.25));

  Vector bad(2);
  bad << 0.7, 0.7;
  CHECK_THROWS_AS(logit_hessian(bad, 0, LossKind::cross_entropy), InvalidDistribution);
}

TEST_CASE("logit_hessian matches finite differences of the logit gradient") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    Rng rng(500 + seed);
    const int k = 2 + static_cast<int>(rng.below(4));
    Vector z(k);
    for (int i = 0; i < k; ++i) z[i] = rng.normal();
    const Vector expz = (z.array() - z.maxCoeff()).exp();
    const Vector p = expz / expz.sum();
    const int y = static_cast<int>(rng.below(k));
    const LossKind loss = seed % 2 ? LossKind::mse : LossKind::cross_entropy;
    const SymMatrix h = logit_hessian(p, y, loss);

    const double step = 1e-6;
    Matrix fd(k, k);
    for (int j = 0; j < k; ++j) {
      Vector zp = z, zm = z;
      zp[j] += step;
      zm[j] -= step;
      auto probs = [](const Vector& logits) {
        const Vector e = (logits.array() - logits.maxCoeff()).exp();
        return Vector(e / e.sum());
      };
      fd.col(j) = (logit_gradient(probs(zp), y, loss) - logit_gradient(probs(zm), y, loss)) /
                  (2.0 * step);
    }
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-8);
    CHECK((h.mat() - 0.5 * (fd + fd.transpose())).cwiseAbs().maxCoeff() / scale < 1e-6);
  }
}

TEST_CASE("downstream_hessian is the logit Hessian at the last layer") {
  TinyNet net = make_tiny_net(3, LossKind::mse);
  net.cfg.focal_layer = net.cfg.weight_count() - 1;
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  const SymMatrix hz = downstream_hessian(t, net.params, net.cfg);
  const SymMatrix hl = logit_hessian(t.probs, net.y, net.cfg.loss);
  CHECK((hz.mat() - hl.mat()).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("downstream_hessian vanishes on a dead path") {
  TinyNet net = make_tiny_net(4, LossKind::cross_entropy);
  net.cfg.focal_layer = 0;
  // Make every downstream ReLU inactive by forcing large negative preacts.
  for (int l = 1; l < net.cfg.weight_count(); ++l) net.params.weights[l].setConstant(-5.0);
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  bool all_dead = true;
  for (std::size_t l = net.cfg.focal_layer; l < t.relu_masks.size(); ++l)
    all_dead = all_dead && t.relu_masks[l].cwiseAbs().maxCoeff() == 0.0;
  if (all_dead) {
    CHECK(downstream_hessian(t, net.params, net.cfg).frobenius() == 0.0);
  }
}

TEST_CASE("downstream_hessian matches finite differences at the pre-activation") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const LossKind loss = seed % 2 ? LossKind::mse : LossKind::cross_entropy;
    const TinyNet net = make_tiny_net(200 + seed, loss);
    if (!covnz::test::fd_safe_point(net)) continue;
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    const SymMatrix hz = downstream_hessian(t, net.params, net.cfg);
    const Matrix fd = covnz::test::fd_preact_hessian(net);
    const double scale = std::max(fd.cwiseAbs().maxCoeff(), 1e-6);
    CHECK((hz.mat() - fd).cwiseAbs().maxCoeff() / scale < 1e-5);
  }
}

TEST_CASE("per_sample_hessian scalar Kronecker factor") {
  // d_in = 1: kappa_m = |a|^2 lambda_m(H_z) with a = [2]
  MlpConfig cfg;
  cfg.layer_dims = {3, 1, 2};
  cfg.focal_layer = 1;
  cfg.loss = LossKind::cross_entropy;
  MlpParams params = MlpParams::init(cfg, 3);
  params.weights[0].setConstant(1.0);  // a_1 = sum(x) can be made 2 exactly
  Vector x(3);
  x << 1.0, 0.5, 0.5;
  const ForwardTrace t = forward(params, cfg, x, 0);
  REQUIRE(t.activities[1][0] == doctest::Approx(2.0));
  const PerSampleHessian h = per_sample_hessian(t, params, cfg);
  const EigenDecomposition hz_eig = sym_eig(h.hz);
  for (int m = 0; m < h.d_out(); ++m)
    CHECK(h.kappa[m] == doctest::Approx(4.0 * hz_eig.values[m]).epsilon(1e-12));
}

TEST_CASE("per_sample_hessian spectrum matches the dense finite-difference Hessian") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const LossKind loss = seed % 2 ? LossKind::mse : LossKind::cross_entropy;
    const TinyNet net = make_tiny_net(300 + seed, loss, 4);  // keeps D <= 16
    if (!covnz::test::fd_safe_point(net)) continue;
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    const PerSampleHessian h = per_sample_hessian(t, net.params, net.cfg);

    const Matrix fd = covnz::test::fd_focal_hessian(net);
    const Vector fd_eigs = sym_eig(SymMatrix::symmetrized(fd)).values;
    Vector analytic = Vector::Zero(fd_eigs.size());
    analytic.head(h.d_out()) = h.kappa;
    std::sort(analytic.data(), analytic.data() + analytic.size(),
              std::greater<double>());
    const double scale = std::max(fd_eigs.cwiseAbs().maxCoeff(), 1e-6);
    for (Eigen::Index i = 0; i < fd_eigs.size(); ++i)
      CHECK(std::abs(analytic[i] - fd_eigs[i]) / scale < 1e-4);
  }
}

TEST_CASE("per_sample_hessian of zero curvature") {
  Vector onehot(3);
  onehot << 1.0, 0.0, 0.0;
  // CE at an exact one-hot: H_logits = 0 so every kappa vanishes.
  TinyNet net = make_tiny_net(11, LossKind::cross_entropy);
  net.cfg.focal_layer = net.cfg.weight_count() - 1;
  ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  t.probs = Vector::Zero(net.cfg.classes());
  t.probs[net.y] = 1.0;
  const PerSampleHessian h = per_sample_hessian(t, net.params, net.cfg);
  CHECK(h.kappa.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("per_sample_hessian rejects zero activity") {
  TinyNet net = make_tiny_net(12, LossKind::cross_entropy);
  net.cfg.focal_layer = 0;
  net.x.setZero();
  const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
  CHECK_THROWS_AS(per_sample_hessian(t, net.params, net.cfg), DegenerateActivity);
}

TEST_CASE("hessian_action agrees with the dense product and eigen identity") {
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const TinyNet net = make_tiny_net(400 + seed, LossKind::cross_entropy, 5);
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    if (t.activities[net.cfg.focal_layer].squaredNorm() == 0.0) continue;
    const PerSampleHessian h = per_sample_hessian(t, net.params, net.cfg);
    const Matrix dense = h.dense();

    Rng rng(seed);
    Vector dw(h.dim());
    for (Eigen::Index i = 0; i < dw.size(); ++i) dw[i] = rng.normal();
    CHECK((hessian_action(h, dw) - dense * dw).cwiseAbs().maxCoeff() <
          1e-10 * std::max(1.0, (dense * dw).cwiseAbs().maxCoeff()));
    CHECK(hessian_action(h, Vector::Zero(h.dim())).cwiseAbs().maxCoeff() == 0.0);

    // eigenvector action: h u_m = kappa_m u_m
    for (int m = 0; m < h.d_out(); ++m) {
      const Vector u = h.eigenvector(m);
      CHECK(std::abs(u.norm() - 1.0) < 1e-12);
      const Vector hu = hessian_action(h, u);
      CHECK((hu - h.kappa[m] * u).cwiseAbs().maxCoeff() <=
            1e-8 * std::max(1.0, std::abs(h.kappa[m])));
    }
    // trace identity through the factored form
    const double tr = h.activity_sq * h.hz.trace();
    CHECK(dense.trace() == doctest::Approx(tr).epsilon(1e-10));
  }
}

TEST_CASE("CE logit Hessians are PSD on forward traces") {
  for (std::uint64_t seed = 0; seed < 8; ++seed) {
    const TinyNet net = make_tiny_net(600 + seed, LossKind::cross_entropy);
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    const Vector eigs = sym_eig(logit_hessian(t.probs, net.y, net.cfg.loss)).values;
    CHECK(eigs.minCoeff() >= -1e-12);
    if (t.activities[net.cfg.focal_layer].squaredNorm() > 0.0) {
      const PerSampleHessian h = per_sample_hessian(t, net.params, net.cfg);
      CHECK(h.psd());
    }
  }
}

TEST_CASE("gradient factorization: grad = vec(g_z a^T)") {
  for (std::uint64_t seed = 0; seed < 4; ++seed) {
    const TinyNet net = make_tiny_net(700 + seed, LossKind::mse);
    const ForwardTrace t = forward(net.params, net.cfg, net.x, net.y);
    const Vector g = per_sample_gradient(t, net.params, net.cfg);
    const Vector gz = focal_preact_gradient(t, net.params, net.cfg);
    const Vector& a = t.activities[net.cfg.focal_layer];
    const Vector outer = vec_row_major(gz * a.transpose());
    CHECK((g - outer).cwiseAbs().maxCoeff() == 0.0);
  }
}
