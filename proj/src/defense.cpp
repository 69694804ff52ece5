// SPDX-License-Identifier: Apache-2.0

#include "gradleak/defense.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace gradleak {

void AggpConfig::validate() const {
  if (cutoff <= 2) throw std::invalid_argument("aggp: cutoff must be > 2");
  if (!(p_lower >= 0.0 && p_lower <= p_upper && p_upper <= 1.0)) {
    throw std::invalid_argument("aggp: need 0 <= p_l <= p_u <= 1");
  }
  if (!(retain_fraction >= 0.0 && retain_fraction <= 1.0)) {
    throw std::invalid_argument("aggp: retain_fraction must be in [0, 1]");
  }
}

double p_keep(std::size_t activations, const AggpConfig& cfg) {
  cfg.validate();
  if (activations == 0 || activations >= cfg.cutoff) {
    throw std::domain_error("p_keep: activation count " +
                            std::to_string(activations) + " outside (0, " +
                            std::to_string(cfg.cutoff) + ")");
  }
  const double a1 = static_cast<double>(activations) - 1.0;
  const double c2 = static_cast<double>(cfg.cutoff) - 2.0;
  return a1 * a1 * (cfg.p_upper - cfg.p_lower) / (c2 * c2) + cfg.p_lower;
}

std::size_t aggp_pool_size(std::size_t activations, std::size_t width,
                           const AggpConfig& cfg) {
  // The small offset keeps exact products such as 0.25 * 3072 from rounding up.
  const double k = std::ceil(p_keep(activations, cfg) * static_cast<double>(width) - 1e-9);
  return std::min(width, static_cast<std::size_t>(std::max(0.0, k)));
}

std::size_t aggp_retained_count(std::size_t activations, std::size_t width,
                                const AggpConfig& cfg) {
  const std::size_t pool = aggp_pool_size(activations, width, cfg);
  return static_cast<std::size_t>(
      std::floor(cfg.retain_fraction * static_cast<double>(pool) + 1e-9));
}

GradientReport aggp_prune(const GradientReport& report, const AggpConfig& cfg,
                          RngStream& rng, AggpStats* stats) {
  cfg.validate();
  const std::size_t n_neurons = report.grad_w.rows();
  const std::size_t width = report.grad_w.cols();
  if (report.activation_counts.size() != n_neurons ||
      report.grad_b.size() != n_neurons) {
    throw std::invalid_argument("aggp_prune: report is missing activation counts");
  }
  GradientReport out = report;
  AggpStats local;
  std::vector<std::size_t> order(width);

  for (std::size_t n = 0; n < n_neurons; ++n) {
    const std::size_t a = report.activation_counts[n];
    if (a == 0 || a >= cfg.cutoff) {
      ++local.rows_untouched;
      continue;
    }
    auto g = out.grad_w.row(n);
    const std::size_t pool = aggp_pool_size(a, width, cfg);
    const std::size_t keep = aggp_retained_count(a, width, cfg);

    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
      return std::abs(g[x]) > std::abs(g[y]);
    });
    // Random subset of the pool: partial Fisher-Yates over its first `keep`.
    for (std::size_t j = 0; j < keep; ++j) {
      const std::size_t pick = j + rng.uniform_index(pool - j);
      std::swap(order[j], order[pick]);
    }
    std::vector<double> kept(keep);
    for (std::size_t j = 0; j < keep; ++j) kept[j] = g[order[j]];
    std::fill(g.begin(), g.end(), 0.0);
    for (std::size_t j = 0; j < keep; ++j) g[order[j]] = kept[j];

    if (a == 1) {
      out.grad_b[n] = 0.0;
      ++local.bias_zeroed;
    }
    ++local.rows_pruned;
    local.entries_kept += keep;
  }
  if (stats) *stats = local;
  return out;
}

}  // namespace gradleak
