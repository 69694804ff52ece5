// SPDX-License-Identifier: Apache-2.0
//
// Client-side gradient pruning driven by per-neuron activation counts.

#pragma once

#include <cstddef>

#include "gradleak/model.hpp"
#include "gradleak/numerics.hpp"

namespace gradleak {

struct AggpConfig {
  std::size_t cutoff = 16;        // c: neurons with a >= c are left alone
  double p_lower = 0.01;          // p_l, keep share at a = 1
  double p_upper = 0.95;          // p_u, keep share at a = c - 1
  double retain_fraction = 0.25;  // share of the top-k entries kept

  // Throws std::invalid_argument unless c > 2, 0 <= p_l <= p_u <= 1 and
  // 0 <= retain_fraction <= 1.
  void validate() const;
};

// (a-1)^2 (p_u - p_l) / (c-2)^2 + p_l. Throws std::domain_error unless
// 0 < a < c.
double p_keep(std::size_t activations, const AggpConfig& cfg);

// Size of the top-magnitude pool, ceil(p_keep * width), and how many of it
// survive, floor(retain_fraction * pool).
std::size_t aggp_pool_size(std::size_t activations, std::size_t width,
                           const AggpConfig& cfg);
std::size_t aggp_retained_count(std::size_t activations, std::size_t width,
                                const AggpConfig& cfg);

struct AggpStats {
  std::size_t rows_pruned = 0;
  std::size_t rows_untouched = 0;
  std::size_t bias_zeroed = 0;
  std::size_t entries_kept = 0;  // summed over pruned rows
};

// Returns a pruned copy. Rows with a = 0 or a >= c are untouched. Other rows
// keep a uniformly random retain_fraction of their top ceil(p_keep * M)
// entries by magnitude (ties broken by index) and are zero elsewhere; rows
// with a = 1 also lose their bias gradient.
GradientReport aggp_prune(const GradientReport& report, const AggpConfig& cfg,
                          RngStream& rng, AggpStats* stats = nullptr);

}  // namespace gradleak
