// SPDX-License-Identifier: Apache-2.0

#include "gradleak/attack.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace gradleak {

double qbi_bias(const QbiParams& params) {
  if (params.batch_size < 2) {
    throw std::invalid_argument(
        "qbi: batch size must be >= 2 (B = 1 needs quantile(1) = +inf)");
  }
  if (params.input_width < 1) {
    throw std::invalid_argument("qbi: input width must be >= 1");
  }
  return normal_quantile(1.0 / static_cast<double>(params.batch_size)) *
         std::sqrt(static_cast<double>(params.input_width));
}

LinearLayer qbi_init(const LinearLayer& layer, const QbiParams& params,
                     RngStream& rng) {
  const double bias = qbi_bias(params);
  if (layer.inputs() != params.input_width) {
    throw std::invalid_argument("qbi_init: layer width " +
                                std::to_string(layer.inputs()) +
                                " != input_width " +
                                std::to_string(params.input_width));
  }
  LinearLayer out = LinearLayer::zeros(layer.outputs(), layer.inputs());
  rng.fill_normal(out.weights.data());
  std::fill(out.bias.begin(), out.bias.end(), bias);
  return out;
}

PairsResult pairs_init(const LinearLayer& layer, const PairsParams& params,
                       const Matrix& auxiliary, RngStream& rng) {
  const std::size_t n_neurons = layer.outputs();
  const std::size_t m = layer.inputs();
  const std::size_t group = params.group_size;
  if (group == 0) {
    throw std::invalid_argument("pairs_init: group size must be positive");
  }
  if (auxiliary.rows() < n_neurons) {
    throw std::invalid_argument("pairs_init: need at least " +
                                std::to_string(n_neurons) +
                                " auxiliary samples, got " +
                                std::to_string(auxiliary.rows()));
  }
  if (auxiliary.cols() != m) {
    throw std::invalid_argument("pairs_init: auxiliary width mismatch");
  }

  PairsResult result{layer, {}};
  PairsStats& stats = result.stats;
  if (params.retries == 0 || n_neurons == 0) return result;

  stats.groups = (n_neurons + group - 1) / group;
  std::size_t cursor = 0;
  Matrix batch(group, m);
  std::vector<double> acts(group);

  for (std::size_t k = 0; k < stats.groups; ++k) {
    std::vector<std::size_t> rows(group);
    for (std::size_t j = 0; j < group; ++j) {
      rows[j] = cursor % auxiliary.rows();
      ++cursor;
      std::copy_n(auxiliary.row(rows[j]).begin(), m, batch.row(j).begin());
    }
    std::vector<bool> frozen(group, false);
    std::vector<long> isolated;

    const std::size_t first = k * group;
    const std::size_t last = std::min(first + group, n_neurons);
    for (std::size_t n = first; n < last; ++n) {
      auto w = result.layer.weights.row(n);
      const double b = result.layer.bias[n];
      long found = -1;
      for (std::size_t t = 0; t < params.retries; ++t) {
        matvec(batch, w, acts);
        std::size_t active = 0;
        std::size_t sample = 0;
        for (std::size_t j = 0; j < group; ++j) {
          if (acts[j] + b > 0.0) {
            if (active == 0) sample = j;
            ++active;
          }
        }
        if (active == 1 && !frozen[sample]) {
          frozen[sample] = true;
          found = static_cast<long>(sample);
          break;
        }
        rng.fill_normal(w);
        ++stats.rows_reinitialized;
      }
      if (found >= 0) {
        ++stats.neurons_isolating;
      } else {
        ++stats.neurons_exhausted;
      }
      isolated.push_back(found);
    }
    stats.group_aux_rows.push_back(std::move(rows));
    stats.isolated_sample.push_back(std::move(isolated));
  }
  return result;
}

LinearLayer trap_weights_init(const LinearLayer& layer, double negative_shift,
                              RngStream& rng) {
  if (negative_shift < 0.0 || !std::isfinite(negative_shift)) {
    throw std::invalid_argument("trap_weights_init: shift must be >= 0");
  }
  const std::size_t m = layer.inputs();
  LinearLayer out = LinearLayer::zeros(layer.outputs(), m);
  std::vector<std::size_t> order(m);
  for (std::size_t n = 0; n < out.outputs(); ++n) {
    auto w = out.weights.row(n);
    for (std::size_t j = 0; j < m; ++j) order[j] = j;
    // Partial Fisher-Yates: the first half of `order` gets a positive sign.
    const std::size_t half = m / 2;
    for (std::size_t j = 0; j < half; ++j) {
      const std::size_t pick = j + rng.uniform_index(m - j);
      std::swap(order[j], order[pick]);
    }
    for (std::size_t j = 0; j < m; ++j) {
      const double magnitude = std::abs(rng.normal());
      w[order[j]] =
          j < half ? magnitude : -magnitude * (1.0 + negative_shift);
    }
  }
  return out;
}

LinearLayer benign_init(const LinearLayer& layer, RngStream& rng) {
  LinearLayer out = LinearLayer::zeros(layer.outputs(), layer.inputs());
  const double scale =
      1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(1, layer.inputs())));
  rng.fill_normal(out.weights.data(), 0.0, scale);
  return out;
}

}  // namespace gradleak
