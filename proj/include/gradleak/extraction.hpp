// SPDX-License-Identifier: Apache-2.0
//
// Server-side reconstruction: per-neuron disaggregation of the attack-layer
// gradients, normalization inversion, and matching against ground truth.

#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <vector>

#include "gradleak/data.hpp"
#include "gradleak/model.hpp"
#include "gradleak/numerics.hpp"

namespace gradleak {

// |grad_b| at or below this is treated as a dead (ReLU-off) neuron.
inline constexpr double kBiasGradientThreshold = 1e-12;

struct Candidate {
  std::size_t neuron = 0;
  std::size_t activation_count = 0;
  std::vector<double> values;  // grad_w[neuron] / grad_b[neuron]
};

struct ReconstructionSet {
  std::size_t width = 0;
  std::vector<Candidate> candidates;
  // Filled in by match_reconstructions, one entry per candidate.
  std::vector<bool> matched;
  std::vector<long> matched_sample;  // -1 when unmatched
  std::vector<double> l2_error;      // error of the match, +inf when unmatched

  std::size_t size() const { return candidates.size(); }
};

ReconstructionSet disaggregate(const GradientReport& report,
                               double tau = kBiasGradientThreshold);

struct BatchStatistics {
  std::vector<double> mean;
  std::vector<double> var;  // biased batch variance, as used to normalize
};

// Solves the first-step running-stat update for the batch mean/variance.
// When the state records a Bessel-corrected running variance, the result is
// converted back to the biased variance with the recorded batch size. Throws
// std::invalid_argument if any recovered variance is not positive.
BatchStatistics recover_batch_statistics(const BatchNormState& post_state);

// x = mean + (y - beta) / gamma * sqrt(var + eps) per feature.
std::vector<double> invert_batchnorm(std::span<const double> candidate,
                                     const BatchNormState& post_state);
void invert_batchnorm(ReconstructionSet& set, const BatchNormState& post_state);

// Approximate de-normalization with public per-channel statistics:
// x = mean[c] + y * std[c]. Exact only when the stats equal the sample's own.
std::vector<double> invert_layernorm(std::span<const double> candidate,
                                     const NormalizationStats& public_stats);

struct MatchCounts {
  std::size_t recovered = 0;   // B_0
  std::size_t batch_size = 0;  // B
  std::vector<bool> sample_recovered;

  double recall() const {
    return batch_size == 0 ? 0.0
                           : static_cast<double>(recovered) /
                                 static_cast<double>(batch_size);
  }
};

// Floating-point stand-in for "l2 error of zero": 1e-6 * sqrt(M).
double default_match_tolerance(std::size_t width);

// Counts distinct ground-truth rows that some candidate reproduces with l2
// error <= tol, and records per-candidate match results in `set`.
MatchCounts match_reconstructions(ReconstructionSet& set,
                                  const Matrix& ground_truth, double tol);

// Flat little-endian dump: uint32 width, then float64 values row-major.
void write_candidates(const std::filesystem::path& file,
                      const ReconstructionSet& set);
Matrix read_candidates(const std::filesystem::path& file);

}  // namespace gradleak
