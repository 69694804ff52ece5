// SPDX-License-Identifier: Apache-2.0

#include "gradleak/metrics.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

namespace gradleak {

ExtractionMetrics observed_metrics(const ActivationMask& mask) {
  ExtractionMetrics m;
  m.B = mask.rows();
  m.N = mask.cols();
  if (m.N == 0 || m.B == 0) return m;

  std::vector<std::size_t> count(m.N, 0);
  std::vector<std::size_t> last(m.N, 0);
  for (std::size_t b = 0; b < m.B; ++b) {
    for (std::size_t n = 0; n < m.N; ++n) {
      if (mask(b, n)) {
        ++count[n];
        last[n] = b;
      }
    }
  }
  std::vector<bool> isolated(m.B, false);
  std::size_t active = 0, unique = 0, recovered = 0;
  for (std::size_t n = 0; n < m.N; ++n) {
    if (count[n] >= 1) ++active;
    if (count[n] == 1) {
      ++unique;
      if (!isolated[last[n]]) {
        isolated[last[n]] = true;
        ++recovered;
      }
    }
  }
  const auto n = static_cast<double>(m.N);
  m.A = static_cast<double>(active) / n;
  m.P = static_cast<double>(unique) / n;
  m.R = static_cast<double>(recovered) / static_cast<double>(m.B);
  return m;
}

ExtractionMetrics observed_metrics(const ForwardTrace& trace) {
  return observed_metrics(trace.activation_mask);
}

double expected_A(std::size_t B) {
  if (B == 0) throw std::invalid_argument("expected_A: B must be >= 1");
  const auto b = static_cast<double>(B);
  return -std::expm1(b * std::log1p(-1.0 / b));
}

double expected_P(std::size_t B) {
  if (B == 0) throw std::invalid_argument("expected_P: B must be >= 1");
  if (B == 1) return 1.0;
  const auto b = static_cast<double>(B);
  return std::exp((b - 1.0) * std::log1p(-1.0 / b));
}

double expected_R(std::size_t N, std::size_t B) {
  if (N == 0) return 0.0;
  const double p_iso = expected_P(B) / static_cast<double>(B);
  if (p_iso >= 1.0) return 1.0;
  return -std::expm1(static_cast<double>(N) * std::log1p(-p_iso));
}

BoundSet bounds(std::size_t N, std::size_t B) {
  BoundSet s;
  s.p_A = expected_A(B);
  s.p_u = expected_P(B);
  s.p_R = expected_R(N, B);
  s.limit_A = -std::expm1(-1.0);
  s.limit_u = std::exp(-1.0);
  return s;
}

ConfidenceInterval aggregate_ci(std::span<const double> run_means) {
  const std::size_t n = run_means.size();
  if (n < 2) throw std::invalid_argument("aggregate_ci: need at least 2 runs");
  // Shifted by the first value so that constant input has exactly zero spread.
  const double shift = run_means[0];
  double sum = 0.0;
  for (double v : run_means) sum += v - shift;
  ConfidenceInterval ci;
  ci.mean = shift + sum / static_cast<double>(n);
  double ss = 0.0;
  for (double v : run_means) ss += (v - ci.mean) * (v - ci.mean);
  const double sd = std::sqrt(ss / static_cast<double>(n - 1));
  ci.half_width = 1.96 * sd / std::sqrt(static_cast<double>(n));
  return ci;
}

ActivationMask simulate_bernoulli_mask(std::size_t N, std::size_t B,
                                       RngStream& rng) {
  if (B == 0) throw std::invalid_argument("simulate_bernoulli_mask: B must be >= 1");
  ActivationMask mask(B, N);
  const std::size_t total = B * N;
  if (B == 1) {
    for (std::size_t n = 0; n < N; ++n) mask.set(0, n, true);
    return mask;
  }
  const double log_q = std::log1p(-1.0 / static_cast<double>(B));
  std::size_t pos = 0;
  while (true) {
    const double gap = std::floor(std::log(rng.uniform()) / log_q);
    if (gap >= static_cast<double>(total - pos)) break;
    pos += static_cast<std::size_t>(gap);
    mask.set(pos / N, pos % N, true);
    if (++pos >= total) break;
  }
  return mask;
}

}  // namespace gradleak
