// SPDX-License-Identifier: Apache-2.0
//
// Observed extraction metrics (A, P, R), their closed-form expectations under
// independent Bernoulli(1/B) activations, and run-level confidence intervals.

#pragma once

#include <cstddef>
#include <span>

#include "gradleak/model.hpp"
#include "gradleak/numerics.hpp"

namespace gradleak {

struct ExtractionMetrics {
  double A = 0.0;  // share of neurons active for at least one sample
  double P = 0.0;  // share of neurons active for exactly one sample
  double R = 0.0;  // share of samples isolated by some neuron
  std::size_t N = 0;
  std::size_t B = 0;
};

// R counts distinct samples: several neurons isolating one sample count once.
ExtractionMetrics observed_metrics(const ActivationMask& mask);
ExtractionMetrics observed_metrics(const ForwardTrace& trace);

// 1 - ((B-1)/B)^B. Throws std::invalid_argument for B = 0.
double expected_A(std::size_t B);
// ((B-1)/B)^(B-1). Throws std::invalid_argument for B = 0.
double expected_P(std::size_t B);
// 1 - (1 - P(B)/B)^N; 0 when N = 0.
double expected_R(std::size_t N, std::size_t B);

struct BoundSet {
  double p_A = 0.0;
  double p_u = 0.0;
  double p_R = 0.0;
  double limit_A = 0.0;  // 1 - 1/e
  double limit_u = 0.0;  // 1/e
};

BoundSet bounds(std::size_t N, std::size_t B);

struct ConfidenceInterval {
  double mean = 0.0;
  double half_width = 0.0;  // 1.96 * sample std / sqrt(n)

  bool operator==(const ConfidenceInterval&) const = default;
};

// Throws std::invalid_argument for fewer than two values.
ConfidenceInterval aggregate_ci(std::span<const double> run_means);

// B x N mask with every entry independently Bernoulli(1/B). Uses geometric
// gaps between set bits, so cost scales with the number of ones.
ActivationMask simulate_bernoulli_mask(std::size_t N, std::size_t B,
                                       RngStream& rng);

}  // namespace gradleak
