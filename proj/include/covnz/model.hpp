#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "covnz/error.hpp"
#include "covnz/linalg.hpp"

namespace covnz {

enum class LossKind { cross_entropy, mse };

std::string loss_name(LossKind kind);
LossKind parse_loss(const std::string& name);

// Bias-free ReLU MLP with a softmax head. layer_dims runs input -> hidden...
// -> output; weight matrix l maps layer_dims[l] to layer_dims[l+1].
// focal_layer indexes the weight matrix whose D = d_out*d_in parameters span
// the analysis subspace.
struct MlpConfig {
  std::vector<int> layer_dims;
  int focal_layer = 0;
  LossKind loss = LossKind::cross_entropy;

  int weight_count() const { return static_cast<int>(layer_dims.size()) - 1; }
  int classes() const { return layer_dims.back(); }
  int focal_in() const { return layer_dims[focal_layer]; }
  int focal_out() const { return layer_dims[focal_layer + 1]; }
  int focal_dim() const { return focal_in() * focal_out(); }
  void validate() const;
};

struct MlpParams {
  std::vector<Matrix> weights;  // weights[l]: layer_dims[l+1] x layer_dims[l]

  bool all_finite() const;
  static MlpParams zeros(const MlpConfig& cfg);
  // Scaled uniform init, U(-1/sqrt(d_in), 1/sqrt(d_in)) per layer.
  static MlpParams init(const MlpConfig& cfg, std::uint64_t seed);
};

struct ForwardTrace {
  std::vector<Vector> activities;  // a_0 = x, then inputs to each later layer
  std::vector<Vector> preacts;     // z_l = W_l a_l
  std::vector<Vector> relu_masks;  // 0/1 mask per hidden layer (z_l > 0)
  Vector probs;                    // softmax of the logits
  double loss = 0.0;
  int label = 0;
};

// vec convention used throughout: vec(W) stacks the rows of W, so the
// focal-layer per-sample Hessian factors as H_z (x) a a^T.
inline Vector vec_row_major(const Matrix& w) {
  Vector v(w.size());
  for (Eigen::Index i = 0; i < w.rows(); ++i)
    for (Eigen::Index j = 0; j < w.cols(); ++j) v[i * w.cols() + j] = w(i, j);
  return v;
}

inline Matrix unvec_row_major(const Vector& v, int rows, int cols) {
  Matrix w(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) w(i, j) = v[i * cols + j];
  return w;
}

ForwardTrace forward(const MlpParams& params, const MlpConfig& cfg, const Vector& x, int y);

// Loss gradient at the logits.
Vector logit_gradient(const Vector& probs, int y, LossKind kind);

// Loss Hessian at the logits: CE gives diag(p) - p p^T; softmax-MSE adds the
// softmax curvature term.
SymMatrix logit_hessian(const Vector& probs, int y, LossKind kind);

// Backpropagated loss derivative at the focal pre-activation.
Vector focal_preact_gradient(const ForwardTrace& trace, const MlpParams& params,
                             const MlpConfig& cfg);

// Gradient of the per-sample loss restricted to the focal weight block,
// vec(g_z a^T) under the row-stacking convention.
Vector per_sample_gradient(const ForwardTrace& trace, const MlpParams& params,
                           const MlpConfig& cfg);

// H_z at the focal pre-activation: Pi^T H_logits Pi with Pi the (piecewise
// linear, hence a.e. exact) Jacobian from focal pre-activation to logits.
SymMatrix downstream_hessian(const ForwardTrace& trace, const MlpParams& params,
                             const MlpConfig& cfg);

// Focal-layer per-sample Hessian h_p = H_z (x) a a^T in factored form with
// its closed-form nonzero eigenpairs kappa_m = |a|^2 lambda_m(H_z),
// u_m = hz_vector_m (x) a/|a|. The remaining D - d_out eigenvalues are
// exactly zero and stay implicit.
struct PerSampleHessian {
  Vector activity;      // focal input activity a
  double activity_sq;   // |a|^2
  SymMatrix hz;         // d_out x d_out
  Vector kappa;         // descending, size d_out
  Matrix hz_vectors;    // column m: unit eigenvector of H_z paired with kappa[m]
  int sample = -1;

  int d_out() const { return static_cast<int>(kappa.size()); }
  int d_in() const { return static_cast<int>(activity.size()); }
  int dim() const { return d_out() * d_in(); }
  bool psd(double rel_tol = 1e-10) const;
  // Materializes u_m as a length-D vector (test/diagnostic use).
  Vector eigenvector(int m) const;
  Matrix dense() const;  // D x D expansion (small fixtures only)
};

PerSampleHessian per_sample_hessian(const ForwardTrace& trace, const MlpParams& params,
                                    const MlpConfig& cfg);

// h_p * dw through the factored form: reshape dw to DW and return
// vec(H_z DW a a^T). Never materializes the D x D matrix.
Vector hessian_action(const PerSampleHessian& h, const Vector& dw);

}  // namespace covnz
