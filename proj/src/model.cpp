#include "covnz/model.hpp"

#include <cmath>

namespace covnz {

std::string loss_name(LossKind kind) {
  return kind == LossKind::cross_entropy ? "ce" : "mse";
}

LossKind parse_loss(const std::string& name) {
  if (name == "ce" || name == "cross_entropy") return LossKind::cross_entropy;
  if (name == "mse") return LossKind::mse;
  throw ConfigError("unknown loss kind: " + name);
}

void MlpConfig::validate() const {
  if (layer_dims.size() < 3)
    throw ConfigError("model needs at least 2 weight matrices");
  for (int d : layer_dims)
    if (d < 1) throw ConfigError("layer dimensions must be positive");
  if (focal_layer < 0 || focal_layer >= weight_count())
    throw ConfigError("focal_layer out of range");
  if (classes() < 2) throw ConfigError("need at least 2 classes");
}

bool MlpParams::all_finite() const {
  for (const auto& w : weights)
    if (!w.allFinite()) return false;
  return true;
}

MlpParams MlpParams::zeros(const MlpConfig& cfg) {
  MlpParams p;
  for (int l = 0; l < cfg.weight_count(); ++l)
    p.weights.push_back(Matrix::Zero(cfg.layer_dims[l + 1], cfg.layer_dims[l]));
  return p;
}

MlpParams MlpParams::init(const MlpConfig& cfg, std::uint64_t seed) {
  MlpParams p;
  for (int l = 0; l < cfg.weight_count(); ++l) {
    Rng rng(Rng::derive(seed, 0x11u, static_cast<std::uint64_t>(l)));
    const int rows = cfg.layer_dims[l + 1], cols = cfg.layer_dims[l];
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    Matrix w(rows, cols);
    for (int i = 0; i < rows; ++i)
      for (int j = 0; j < cols; ++j) w(i, j) = scale * (2.0 * rng.uniform() - 1.0);
    p.weights.push_back(std::move(w));
  }
  return p;
}

namespace {

Vector softmax(const Vector& logits) {
  const double shift = logits.maxCoeff();
  Vector e = (logits.array() - shift).exp();
  return e / e.sum();
}

void check_simplex(const Vector& p) {
  if (!p.allFinite() || p.minCoeff() < -1e-9 || std::abs(p.sum() - 1.0) > 1e-9)
    throw InvalidDistribution("probabilities are not a simplex point");
}

}  // namespace

ForwardTrace forward(const MlpParams& params, const MlpConfig& cfg, const Vector& x, int y) {
  const int n_layers = cfg.weight_count();
  if (x.size() != cfg.layer_dims[0]) throw ShapeError("forward: input dimension mismatch");
  if (y < 0 || y >= cfg.classes()) throw ShapeError("forward: label out of range");

  ForwardTrace t;
  t.label = y;
  t.activities.reserve(n_layers);
  t.preacts.reserve(n_layers);
  Vector a = x;
  for (int l = 0; l < n_layers; ++l) {
    t.activities.push_back(a);
    Vector z = params.weights[l] * a;
    if (!z.allFinite()) throw NumericalOverflow("forward: non-finite pre-activation");
    t.preacts.push_back(z);
    if (l + 1 < n_layers) {
      // ReLU with the subgradient at 0 taken as 0 (mask off).
      Vector mask = (z.array() > 0.0).cast<double>();
      t.relu_masks.push_back(mask);
      a = z.cwiseProduct(mask);
    }
  }
  t.probs = softmax(t.preacts.back());
  if (!t.probs.allFinite()) throw NumericalOverflow("forward: non-finite probabilities");

  const int k = cfg.classes();
  if (cfg.loss == LossKind::cross_entropy) {
    t.loss = -std::log(t.probs[y]);
  } else {
    double s = 0.0;
    for (int i = 0; i < k; ++i) {
      const double r = t.probs[i] - (i == y ? 1.0 : 0.0);
      s += r * r;
    }
    t.loss = s / k;
  }
  if (!std::isfinite(t.loss)) throw NumericalOverflow("forward: non-finite loss");
  return t;
}

Vector logit_gradient(const Vector& probs, int y, LossKind kind) {
  const int k = static_cast<int>(probs.size());
  Vector e = Vector::Zero(k);
  e[y] = 1.0;
  if (kind == LossKind::cross_entropy) return probs - e;
  // softmax-MSE: J^T q with J = diag(p) - p p^T (symmetric) and
  // q = (2/K)(p - e).
  const Vector q = (2.0 / k) * (probs - e);
  return probs.cwiseProduct(q) - probs * probs.dot(q);
}

SymMatrix logit_hessian(const Vector& probs, int y, LossKind kind) {
  check_simplex(probs);
  const int k = static_cast<int>(probs.size());
  if (y < 0 || y >= k) throw ShapeError("logit_hessian: label out of range");
  Matrix j = Matrix(probs.asDiagonal()) - probs * probs.transpose();
  if (kind == LossKind::cross_entropy) return SymMatrix::symmetrized(j);

  // softmax-MSE Hessian: (2/K) (J J + sum_k (p_k - e_k) S_k) with S_k the
  // softmax second-derivative slice
  // S_k(i,j) = p_k [(d_ki - p_i)(d_kj - p_j) - p_i (d_ij - p_j)].
  Matrix h = j * j;
  for (int kk = 0; kk < k; ++kk) {
    const double r = probs[kk] - (kk == y ? 1.0 : 0.0);
    if (r == 0.0) continue;
    for (int i = 0; i < k; ++i) {
      for (int jj = 0; jj < k; ++jj) {
        const double dki = (kk == i) ? 1.0 : 0.0;
        const double dkj = (kk == jj) ? 1.0 : 0.0;
        const double dij = (i == jj) ? 1.0 : 0.0;
        const double s =
            probs[kk] * ((dki - probs[i]) * (dkj - probs[jj]) - probs[i] * (dij - probs[jj]));
        h(i, jj) += r * s;
      }
    }
  }
  return SymMatrix::symmetrized((2.0 / k) * h);
}

Vector focal_preact_gradient(const ForwardTrace& trace, const MlpParams& params,
                             const MlpConfig& cfg) {
  const int n_layers = cfg.weight_count();
  Vector g = logit_gradient(trace.probs, trace.label, cfg.loss);
  for (int l = n_layers - 1; l > cfg.focal_layer; --l) {
    g = (params.weights[l].transpose() * g).cwiseProduct(trace.relu_masks[l - 1]);
  }
  return g;
}

Vector per_sample_gradient(const ForwardTrace& trace, const MlpParams& params,
                           const MlpConfig& cfg) {
  const Vector gz = focal_preact_gradient(trace, params, cfg);
  const Vector& a = trace.activities[cfg.focal_layer];
  Vector grad(gz.size() * a.size());
  for (Eigen::Index i = 0; i < gz.size(); ++i)
    for (Eigen::Index j = 0; j < a.size(); ++j) grad[i * a.size() + j] = gz[i] * a[j];
  return grad;
}

SymMatrix downstream_hessian(const ForwardTrace& trace, const MlpParams& params,
                             const MlpConfig& cfg) {
  const SymMatrix h_logits = logit_hessian(trace.probs, trace.label, cfg.loss);
  const int f = cfg.focal_layer;
  const int n_layers = cfg.weight_count();
  if (f == n_layers - 1) return h_logits;
  // Pi = W_{L-1} D_{L-2} ... W_{f+1} D_f, the Jacobian of the map from the
  // focal pre-activation to the logits.
  Matrix pi = params.weights[f + 1] * trace.relu_masks[f].asDiagonal();
  for (int l = f + 2; l < n_layers; ++l)
    pi = params.weights[l] * trace.relu_masks[l - 1].asDiagonal() * pi;
  return SymMatrix::symmetrized(pi.transpose() * h_logits.mat() * pi);
}

PerSampleHessian per_sample_hessian(const ForwardTrace& trace, const MlpParams& params,
                                    const MlpConfig& cfg) {
  PerSampleHessian h;
  h.activity = trace.activities[cfg.focal_layer];
  h.activity_sq = h.activity.squaredNorm();
  if (h.activity_sq == 0.0)
    throw DegenerateActivity("per_sample_hessian: zero focal input activity");
  h.hz = downstream_hessian(trace, params, cfg);
  EigenDecomposition eig = sym_eig(h.hz);
  h.kappa = h.activity_sq * eig.values;
  h.hz_vectors = std::move(eig.vectors);
  return h;
}

bool PerSampleHessian::psd(double rel_tol) const {
  const double lo = kappa.minCoeff();
  if (lo >= 0.0) return true;
  const double scale = kappa.cwiseAbs().maxCoeff();
  return lo >= -rel_tol * scale;
}

Vector PerSampleHessian::eigenvector(int m) const {
  const double norm = std::sqrt(activity_sq);
  Vector u(dim());
  for (int i = 0; i < d_out(); ++i)
    for (int j = 0; j < d_in(); ++j) u[i * d_in() + j] = hz_vectors(i, m) * activity[j] / norm;
  return u;
}

Matrix PerSampleHessian::dense() const {
  Matrix out(dim(), dim());
  for (int i = 0; i < d_out(); ++i)
    for (int m = 0; m < d_out(); ++m)
      for (int j = 0; j < d_in(); ++j)
        for (int n = 0; n < d_in(); ++n)
          out(i * d_in() + j, m * d_in() + n) = hz(i, m) * activity[j] * activity[n];
  return out;
}

Vector hessian_action(const PerSampleHessian& h, const Vector& dw) {
  if (dw.size() != h.dim()) throw ShapeError("hessian_action: dimension mismatch");
  const Matrix delta = unvec_row_major(dw, h.d_out(), h.d_in());
  const Vector w1 = delta * h.activity;     // DW a
  const Vector w2 = h.hz.mat() * w1;        // H_z DW a
  Vector out(h.dim());
  for (int i = 0; i < h.d_out(); ++i)
    for (int j = 0; j < h.d_in(); ++j) out[i * h.d_in() + j] = w2[i] * h.activity[j];
  return out;
}

}  // namespace covnz
