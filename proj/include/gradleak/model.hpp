// SPDX-License-Identifier: Apache-2.0
//
// The simulated client network: an identity-capable conv stack, an optional
// normalization layer, the attack linear layer with ReLU, and a softmax
// classifier head. Gradients are computed analytically for one FedSGD step
// (batch-averaged cross-entropy).

#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <variant>
#include <vector>

#include "gradleak/numerics.hpp"

namespace gradleak {

struct LinearLayer {
  Matrix weights;             // out x in, one row per neuron
  std::vector<double> bias;   // out

  std::size_t outputs() const { return weights.rows(); }
  std::size_t inputs() const { return weights.cols(); }
  // Throws std::invalid_argument if bias length or finiteness is violated.
  void validate() const;

  static LinearLayer zeros(std::size_t outputs, std::size_t inputs);
};

struct ConvIdentitySpec {
  std::size_t channels = 3;
  std::size_t kernel = 3;
  std::size_t stride = 1;
  std::size_t padding = 1;
  std::size_t extra_random_filters = 0;
};

// 2-D convolution, stride 1, zero padding `kernel / 2` (shape preserving).
struct Conv2d {
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 3;
  std::vector<double> weights;  // [out][in][k][k]
  std::vector<double> bias;     // [out]

  double& weight(std::size_t o, std::size_t i, std::size_t r, std::size_t c) {
    return weights[((o * in_channels + i) * kernel + r) * kernel + c];
  }
  double weight(std::size_t o, std::size_t i, std::size_t r,
                std::size_t c) const {
    return weights[((o * in_channels + i) * kernel + r) * kernel + c];
  }
};

// Filters 0..channels-1 copy their own channel (one-hot kernel centre); any
// extra filters are N(0, 1/fan_in) noise appended after them.
Conv2d make_identity_conv(const ConvIdentitySpec& spec, RngStream& rng);

std::vector<double> conv2d_forward(const Conv2d& conv,
                                   std::span<const double> image,
                                   ImageShape shape);
Matrix conv2d_forward(const Conv2d& conv, const Matrix& images,
                      ImageShape shape);

struct BatchNormState {
  std::vector<double> running_mean;
  std::vector<double> running_var;
  std::vector<double> gamma;
  std::vector<double> beta;
  double momentum = 0.1;
  double epsilon = 1e-5;
  // Running-variance update uses the Bessel-corrected batch variance, as
  // PyTorch does. Normalization itself always uses the biased variance.
  bool unbiased_running_var = true;
  std::size_t steps = 0;
  std::size_t last_batch_size = 0;

  // Framework defaults: mean 0, var 1, gamma 1, beta 0.
  static BatchNormState fresh(std::size_t features);
  std::size_t features() const { return running_mean.size(); }
};

struct BatchNormResult {
  Matrix normalized;
  BatchNormState state;
};

// Training-mode batch normalization over each feature column. Requires B >= 2.
BatchNormResult batchnorm_forward(const BatchNormState& state,
                                  const Matrix& batch);

struct LayerNormConfig {
  std::size_t normalized_shape = 0;
  double epsilon = 1e-5;
};

// Per-sample normalization over the whole flattened feature vector (gamma=1,
// beta=0). Requires M >= 2.
Matrix layernorm_forward(const LayerNormConfig& config, const Matrix& batch);

using NormLayer = std::variant<std::monostate, BatchNormState, LayerNormConfig>;

struct MaliciousModel {
  // Literal convolution; when absent the stack is the exact identity map.
  std::optional<Conv2d> conv;
  ImageShape image_shape;  // only consulted when `conv` is set
  NormLayer norm;
  LinearLayer attack;
  LinearLayer head;

  std::size_t input_width() const;
};

// Boolean B x N activation pattern.
class ActivationMask {
 public:
  ActivationMask() = default;
  ActivationMask(std::size_t rows, std::size_t cols)
      : rows_(rows), cols_(cols), bits_(rows * cols, 0) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  bool operator()(std::size_t r, std::size_t c) const {
    return bits_[r * cols_ + c] != 0;
  }
  void set(std::size_t r, std::size_t c, bool v) {
    bits_[r * cols_ + c] = v ? 1 : 0;
  }
  // Number of active rows (samples) per column (neuron).
  std::vector<std::size_t> column_counts() const;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct ForwardTrace {
  Matrix attack_input;       // B x M, what the attack layer saw
  Matrix pre_activations;    // B x N
  Matrix post_relu;          // B x N
  ActivationMask activation_mask;
  Matrix head_logits;        // B x C
  // Running statistics after this step, when the model has a BatchNorm layer.
  std::optional<BatchNormState> batchnorm_after;
};

struct GradientReport {
  Matrix grad_w;                              // N x M
  std::vector<double> grad_b;                 // N
  std::vector<std::size_t> activation_counts; // N
};

struct ModelGradients {
  GradientReport attack;
  Matrix head_grad_w;
  std::vector<double> head_grad_b;
  double loss = 0.0;
};

// Runs conv stack and norm layer only.
Matrix attack_layer_input(const MaliciousModel& model, const Matrix& batch,
                          std::optional<BatchNormState>* batchnorm_after =
                              nullptr);

ForwardTrace forward(const MaliciousModel& model, const Matrix& batch);

ModelGradients compute_model_gradients(const MaliciousModel& model,
                                       const ForwardTrace& trace,
                                       std::span<const int> labels);

GradientReport compute_gradients(const MaliciousModel& model,
                                 const ForwardTrace& trace,
                                 std::span<const int> labels);
GradientReport compute_gradients(const MaliciousModel& model,
                                 const Matrix& batch,
                                 std::span<const int> labels);

double cross_entropy_loss(const MaliciousModel& model, const Matrix& batch,
                          std::span<const int> labels);

LinearLayer make_classifier_head(std::size_t inputs, std::size_t classes,
                                 RngStream& rng, double stddev = 0.01);

}  // namespace gradleak
