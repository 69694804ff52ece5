// SPDX-License-Identifier: Apache-2.0
//
// Malicious initialization of the attack layer.

#pragma once

#include <cstddef>
#include <vector>

#include "gradleak/model.hpp"
#include "gradleak/numerics.hpp"

namespace gradleak {

struct QbiParams {
  std::size_t batch_size = 0;   // B >= 2
  std::size_t input_width = 0;  // M >= 1
};

// Bias that makes a N(0,1)-weighted neuron fire for a N(0,1) input with
// probability 1/B: quantile(1/B) * sqrt(M).
double qbi_bias(const QbiParams& params);

// Redraws every weight from N(0,1) and sets every bias to qbi_bias(). Only the
// shape of `layer` is used. Throws std::invalid_argument for B < 2, M < 1 or a
// width that disagrees with the layer.
LinearLayer qbi_init(const LinearLayer& layer, const QbiParams& params,
                     RngStream& rng);

struct PairsParams {
  std::size_t retries = 1000;  // T
  std::size_t group_size = 0;  // B, neurons per group and samples per batch
};

struct PairsStats {
  std::size_t groups = 0;
  std::size_t rows_reinitialized = 0;
  std::size_t neurons_isolating = 0;
  std::size_t neurons_exhausted = 0;
  // For each group: the auxiliary rows it used and, per neuron in the group,
  // the local index of the sample it isolates (-1 if the search ran out).
  std::vector<std::vector<std::size_t>> group_aux_rows;
  std::vector<std::vector<long>> isolated_sample;
};

struct PairsResult {
  LinearLayer layer;
  PairsStats stats;
};

/// Pattern-aware iterative random search.
///
/// Neurons are split into ceil(N/B) groups of B (the last may be short). Group
/// k is tuned against its own auxiliary batch of B rows, taken sequentially
/// from `auxiliary` with wrap-around. Each neuron's weight row is redrawn from
/// N(0,1) until it fires for exactly one sample of the batch that no earlier
/// neuron of the group already claimed, or until `retries` checks have been
/// spent; a neuron that runs out keeps its last draw. Biases are never
/// touched, so the layer should already carry the QBI bias.
///
/// `auxiliary` must already be in the attack layer's input space and hold at
/// least N rows.
PairsResult pairs_init(const LinearLayer& layer, const PairsParams& params,
                       const Matrix& auxiliary, RngStream& rng);

// Approximate trap-weights baseline: each row is N(0,1) magnitudes where a
// random half keep a positive sign and the other half are negated and scaled
// by (1 + negative_shift). Bias 0. negative_shift must be >= 0.
LinearLayer trap_weights_init(const LinearLayer& layer, double negative_shift,
                              RngStream& rng);

// Benign reference initialization: N(0, 1/M) weights, zero bias.
LinearLayer benign_init(const LinearLayer& layer, RngStream& rng);

}  // namespace gradleak
