// SPDX-License-Identifier: Apache-2.0

#include "gradleak/model.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gradleak {
namespace {

void add_row_bias(Matrix& m, const std::vector<double>& bias) {
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto row = m.row(r);
    for (std::size_t c = 0; c < row.size(); ++c) row[c] += bias[c];
  }
}

void check_labels(std::span<const int> labels, std::size_t batch,
                  std::size_t classes) {
  if (labels.size() != batch) {
    throw std::invalid_argument("compute_gradients: " +
                                std::to_string(labels.size()) +
                                " labels for a batch of " +
                                std::to_string(batch));
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= classes) {
      throw std::invalid_argument("compute_gradients: label " +
                                  std::to_string(y) + " outside [0, " +
                                  std::to_string(classes) + ")");
    }
  }
}

// Row-wise softmax probabilities and the mean cross-entropy.
Matrix softmax_rows(const Matrix& logits, std::span<const int> labels,
                    double& loss) {
  Matrix probs(logits.rows(), logits.cols());
  loss = 0.0;
  for (std::size_t b = 0; b < logits.rows(); ++b) {
    auto z = logits.row(b);
    auto p = probs.row(b);
    const double zmax = *std::max_element(z.begin(), z.end());
    double total = 0.0;
    for (std::size_t c = 0; c < z.size(); ++c) {
      p[c] = std::exp(z[c] - zmax);
      total += p[c];
    }
    for (double& v : p) v /= total;
    loss -= (z[labels[b]] - zmax) - std::log(total);
  }
  loss /= static_cast<double>(logits.rows());
  return probs;
}

}  // namespace

void LinearLayer::validate() const {
  if (bias.size() != weights.rows()) {
    throw std::invalid_argument("LinearLayer: bias length " +
                                std::to_string(bias.size()) + " != rows " +
                                std::to_string(weights.rows()));
  }
  if (!weights.all_finite() ||
      !std::all_of(bias.begin(), bias.end(),
                   [](double v) { return std::isfinite(v); })) {
    throw std::invalid_argument("LinearLayer: non-finite parameter");
  }
}

LinearLayer LinearLayer::zeros(std::size_t outputs, std::size_t inputs) {
  return LinearLayer{Matrix(outputs, inputs), std::vector<double>(outputs)};
}

Conv2d make_identity_conv(const ConvIdentitySpec& spec, RngStream& rng) {
  if (spec.kernel % 2 == 0 || spec.stride != 1 ||
      spec.padding != spec.kernel / 2) {
    throw std::invalid_argument(
        "make_identity_conv: only odd kernels with stride 1 and same padding "
        "preserve the image");
  }
  Conv2d conv;
  conv.in_channels = spec.channels;
  conv.out_channels = spec.channels + spec.extra_random_filters;
  conv.kernel = spec.kernel;
  conv.weights.assign(
      conv.out_channels * conv.in_channels * conv.kernel * conv.kernel, 0.0);
  conv.bias.assign(conv.out_channels, 0.0);
  const std::size_t centre = spec.kernel / 2;
  for (std::size_t i = 0; i < spec.channels; ++i) {
    conv.weight(i, i, centre, centre) = 1.0;
  }
  const double fan_in =
      static_cast<double>(conv.in_channels * conv.kernel * conv.kernel);
  for (std::size_t o = spec.channels; o < conv.out_channels; ++o) {
    for (std::size_t i = 0; i < conv.in_channels; ++i) {
      for (std::size_t r = 0; r < conv.kernel; ++r) {
        for (std::size_t c = 0; c < conv.kernel; ++c) {
          conv.weight(o, i, r, c) = rng.normal() / std::sqrt(fan_in);
        }
      }
    }
  }
  return conv;
}

std::vector<double> conv2d_forward(const Conv2d& conv,
                                   std::span<const double> image,
                                   ImageShape shape) {
  if (shape.channels != conv.in_channels || image.size() != shape.size()) {
    throw std::invalid_argument("conv2d_forward: image does not match layer");
  }
  const std::size_t h = shape.height;
  const std::size_t w = shape.width;
  const auto pad = static_cast<std::ptrdiff_t>(conv.kernel / 2);
  std::vector<double> out(conv.out_channels * h * w);
  for (std::size_t o = 0; o < conv.out_channels; ++o) {
    for (std::size_t y = 0; y < h; ++y) {
      for (std::size_t x = 0; x < w; ++x) {
        double acc = conv.bias[o];
        for (std::size_t i = 0; i < conv.in_channels; ++i) {
          for (std::size_t r = 0; r < conv.kernel; ++r) {
            const auto yy = static_cast<std::ptrdiff_t>(y + r) - pad;
            if (yy < 0 || yy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t c = 0; c < conv.kernel; ++c) {
              const auto xx = static_cast<std::ptrdiff_t>(x + c) - pad;
              if (xx < 0 || xx >= static_cast<std::ptrdiff_t>(w)) continue;
              const double k = conv.weight(o, i, r, c);
              if (k == 0.0) continue;
              acc += k * image[(i * h + static_cast<std::size_t>(yy)) * w +
                               static_cast<std::size_t>(xx)];
            }
          }
        }
        out[(o * h + y) * w + x] = acc;
      }
    }
  }
  return out;
}

Matrix conv2d_forward(const Conv2d& conv, const Matrix& images,
                      ImageShape shape) {
  const std::size_t out_width = conv.out_channels * shape.plane();
  Matrix out(images.rows(), out_width);
  for (std::size_t b = 0; b < images.rows(); ++b) {
    const auto mapped = conv2d_forward(conv, images.row(b), shape);
    std::copy(mapped.begin(), mapped.end(), out.row(b).begin());
  }
  return out;
}

BatchNormState BatchNormState::fresh(std::size_t features) {
  BatchNormState s;
  s.running_mean.assign(features, 0.0);
  s.running_var.assign(features, 1.0);
  s.gamma.assign(features, 1.0);
  s.beta.assign(features, 0.0);
  return s;
}

BatchNormResult batchnorm_forward(const BatchNormState& state,
                                  const Matrix& batch) {
  const std::size_t n = batch.rows();
  const std::size_t m = batch.cols();
  if (n < 2) {
    throw std::invalid_argument(
        "batchnorm_forward: need at least 2 samples for batch variance");
  }
  if (state.features() != m) {
    throw std::invalid_argument("batchnorm_forward: state has " +
                                std::to_string(state.features()) +
                                " features, batch has " + std::to_string(m));
  }
  BatchNormResult out{Matrix(n, m), state};
  const double inv_n = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < m; ++j) {
    double mean = 0.0;
    for (std::size_t b = 0; b < n; ++b) mean += batch(b, j);
    mean *= inv_n;
    double var = 0.0;
    for (std::size_t b = 0; b < n; ++b) {
      const double d = batch(b, j) - mean;
      var += d * d;
    }
    var *= inv_n;
    const double scale = state.gamma[j] / std::sqrt(var + state.epsilon);
    for (std::size_t b = 0; b < n; ++b) {
      out.normalized(b, j) = (batch(b, j) - mean) * scale + state.beta[j];
    }
    const double observed_var =
        state.unbiased_running_var ? var * static_cast<double>(n) /
                                         static_cast<double>(n - 1)
                                   : var;
    out.state.running_mean[j] =
        (1.0 - state.momentum) * state.running_mean[j] + state.momentum * mean;
    out.state.running_var[j] = (1.0 - state.momentum) * state.running_var[j] +
                               state.momentum * observed_var;
  }
  out.state.steps = state.steps + 1;
  out.state.last_batch_size = n;
  return out;
}

Matrix layernorm_forward(const LayerNormConfig& config, const Matrix& batch) {
  const std::size_t m = batch.cols();
  if (m < 2) {
    throw std::invalid_argument("layernorm_forward: need at least 2 features");
  }
  if (config.normalized_shape != m) {
    throw std::invalid_argument("layernorm_forward: normalized_shape " +
                                std::to_string(config.normalized_shape) +
                                " != width " + std::to_string(m));
  }
  Matrix out(batch.rows(), m);
  for (std::size_t b = 0; b < batch.rows(); ++b) {
    auto x = batch.row(b);
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(m);
    double var = 0.0;
    for (double v : x) var += (v - mean) * (v - mean);
    var /= static_cast<double>(m);
    const double inv = 1.0 / std::sqrt(var + config.epsilon);
    auto y = out.row(b);
    for (std::size_t j = 0; j < m; ++j) y[j] = (x[j] - mean) * inv;
  }
  return out;
}

std::size_t MaliciousModel::input_width() const {
  return conv ? image_shape.size() : attack.inputs();
}

std::vector<std::size_t> ActivationMask::column_counts() const {
  std::vector<std::size_t> counts(cols_, 0);
  for (std::size_t r = 0; r < rows_; ++r) {
    const std::uint8_t* row = bits_.data() + r * cols_;
    for (std::size_t c = 0; c < cols_; ++c) counts[c] += row[c];
  }
  return counts;
}

Matrix attack_layer_input(const MaliciousModel& model, const Matrix& batch,
                          std::optional<BatchNormState>* batchnorm_after) {
  if (batch.rows() == 0) {
    throw std::invalid_argument("forward: empty batch");
  }
  if (batch.cols() != model.input_width()) {
    throw std::invalid_argument("forward: batch width " +
                                std::to_string(batch.cols()) +
                                " != model input " +
                                std::to_string(model.input_width()));
  }
  Matrix x = model.conv ? conv2d_forward(*model.conv, batch, model.image_shape)
                        : batch;
  if (const auto* bn = std::get_if<BatchNormState>(&model.norm)) {
    auto result = batchnorm_forward(*bn, x);
    if (batchnorm_after) *batchnorm_after = std::move(result.state);
    x = std::move(result.normalized);
  } else if (const auto* ln = std::get_if<LayerNormConfig>(&model.norm)) {
    x = layernorm_forward(*ln, x);
  }
  if (x.cols() != model.attack.inputs()) {
    throw std::invalid_argument("forward: attack layer expects " +
                                std::to_string(model.attack.inputs()) +
                                " features, got " + std::to_string(x.cols()));
  }
  return x;
}

ForwardTrace forward(const MaliciousModel& model, const Matrix& batch) {
  ForwardTrace t;
  t.attack_input = attack_layer_input(model, batch, &t.batchnorm_after);
  t.pre_activations = matmul_transposed(t.attack_input, model.attack.weights);
  add_row_bias(t.pre_activations, model.attack.bias);

  const std::size_t n_batch = t.pre_activations.rows();
  const std::size_t n_neurons = t.pre_activations.cols();
  t.post_relu = Matrix(n_batch, n_neurons);
  t.activation_mask = ActivationMask(n_batch, n_neurons);
  for (std::size_t b = 0; b < n_batch; ++b) {
    for (std::size_t i = 0; i < n_neurons; ++i) {
      const double z = t.pre_activations(b, i);
      const bool on = z > 0.0;
      t.activation_mask.set(b, i, on);
      t.post_relu(b, i) = on ? z : 0.0;
    }
  }
  if (model.head.outputs() > 0) {
    t.head_logits = matmul_transposed(t.post_relu, model.head.weights);
    add_row_bias(t.head_logits, model.head.bias);
  }
  return t;
}

ModelGradients compute_model_gradients(const MaliciousModel& model,
                                       const ForwardTrace& trace,
                                       std::span<const int> labels) {
  const std::size_t n_batch = trace.pre_activations.rows();
  const std::size_t n_neurons = trace.pre_activations.cols();
  const std::size_t m = trace.attack_input.cols();
  const std::size_t classes = model.head.outputs();
  if (classes == 0 || model.head.inputs() != n_neurons) {
    throw std::invalid_argument(
        "compute_gradients: classifier head does not match attack layer");
  }
  const auto head_w = model.head.weights.data();
  if (std::all_of(head_w.begin(), head_w.end(),
                  [](double v) { return v == 0.0; })) {
    throw std::invalid_argument(
        "compute_gradients: all-zero head weights null every neuron gradient");
  }
  check_labels(labels, n_batch, classes);

  ModelGradients g;
  Matrix dlogits = softmax_rows(trace.head_logits, labels, g.loss);
  const double inv_b = 1.0 / static_cast<double>(n_batch);
  for (std::size_t b = 0; b < n_batch; ++b) {
    auto row = dlogits.row(b);
    row[labels[b]] -= 1.0;
    for (double& v : row) v *= inv_b;
  }

  g.head_grad_w = matmul(dlogits.transposed(), trace.post_relu);
  g.head_grad_b.assign(classes, 0.0);
  for (std::size_t b = 0; b < n_batch; ++b) {
    for (std::size_t c = 0; c < classes; ++c) g.head_grad_b[c] += dlogits(b, c);
  }

  // dL/dz at the attack pre-activations; zero where ReLU is off.
  Matrix delta = matmul(dlogits, model.head.weights);

  GradientReport& r = g.attack;
  r.grad_w = Matrix(n_neurons, m);
  r.grad_b.assign(n_neurons, 0.0);
  r.activation_counts = trace.activation_mask.column_counts();
  for (std::size_t b = 0; b < n_batch; ++b) {
    auto x = trace.attack_input.row(b);
    for (std::size_t i = 0; i < n_neurons; ++i) {
      if (!trace.activation_mask(b, i)) continue;
      const double d = delta(b, i);
      r.grad_b[i] += d;
      auto gw = r.grad_w.row(i);
      for (std::size_t j = 0; j < m; ++j) gw[j] += d * x[j];
    }
  }
  return g;
}

GradientReport compute_gradients(const MaliciousModel& model,
                                 const ForwardTrace& trace,
                                 std::span<const int> labels) {
  return compute_model_gradients(model, trace, labels).attack;
}

GradientReport compute_gradients(const MaliciousModel& model,
                                 const Matrix& batch,
                                 std::span<const int> labels) {
  return compute_gradients(model, forward(model, batch), labels);
}

double cross_entropy_loss(const MaliciousModel& model, const Matrix& batch,
                          std::span<const int> labels) {
  const ForwardTrace t = forward(model, batch);
  check_labels(labels, batch.rows(), model.head.outputs());
  double loss = 0.0;
  softmax_rows(t.head_logits, labels, loss);
  return loss;
}

LinearLayer make_classifier_head(std::size_t inputs, std::size_t classes,
                                 RngStream& rng, double stddev) {
  LinearLayer head = LinearLayer::zeros(classes, inputs);
  rng.fill_normal(head.weights.data(), 0.0, stddev);
  return head;
}

}  // namespace gradleak
