// SPDX-License-Identifier: Apache-2.0

#include "gradleak/extraction.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

namespace gradleak {
namespace {

template <typename T>
void put_le(std::ostream& out, T value) {
  std::array<char, sizeof(T)> bytes{};
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((value >> (8 * i)) & 0xff);
  }
  out.write(bytes.data(), bytes.size());
}

template <typename T>
T get_le(std::istream& in) {
  std::array<unsigned char, sizeof(T)> bytes{};
  in.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (!in) throw std::runtime_error("read_candidates: truncated file");
  T value = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) {
    value |= static_cast<T>(bytes[i]) << (8 * i);
  }
  return value;
}

}  // namespace

ReconstructionSet disaggregate(const GradientReport& report, double tau) {
  ReconstructionSet set;
  set.width = report.grad_w.cols();
  for (std::size_t i = 0; i < report.grad_b.size(); ++i) {
    const double gb = report.grad_b[i];
    if (!(std::abs(gb) > tau)) continue;
    Candidate c;
    c.neuron = i;
    c.activation_count =
        i < report.activation_counts.size() ? report.activation_counts[i] : 0;
    auto gw = report.grad_w.row(i);
    c.values.resize(gw.size());
    for (std::size_t j = 0; j < gw.size(); ++j) c.values[j] = gw[j] / gb;
    set.candidates.push_back(std::move(c));
  }
  return set;
}

BatchStatistics recover_batch_statistics(const BatchNormState& s) {
  if (!(s.momentum > 0.0)) {
    throw std::invalid_argument("recover_batch_statistics: momentum must be > 0");
  }
  BatchStatistics stats;
  stats.mean.resize(s.features());
  stats.var.resize(s.features());
  double bessel = 1.0;
  if (s.unbiased_running_var) {
    if (s.last_batch_size < 2) {
      throw std::invalid_argument(
          "recover_batch_statistics: unbiased running variance needs the "
          "batch size");
    }
    const auto n = static_cast<double>(s.last_batch_size);
    bessel = (n - 1.0) / n;
  }
  for (std::size_t j = 0; j < s.features(); ++j) {
    stats.mean[j] = s.running_mean[j] / s.momentum;
    const double v = (s.running_var[j] - (1.0 - s.momentum)) / s.momentum;
    if (!(v > 0.0)) {
      throw std::invalid_argument(
          "recover_batch_statistics: recovered variance " + std::to_string(v) +
          " at feature " + std::to_string(j) +
          "; state is not from a first training step");
    }
    stats.var[j] = v * bessel;
  }
  return stats;
}

namespace {

std::vector<double> invert_with(std::span<const double> y,
                                const BatchNormState& s,
                                const BatchStatistics& stats) {
  if (y.size() != s.features()) {
    throw std::invalid_argument("invert_batchnorm: candidate width mismatch");
  }
  std::vector<double> x(y.size());
  for (std::size_t j = 0; j < y.size(); ++j) {
    x[j] = stats.mean[j] +
           (y[j] - s.beta[j]) / s.gamma[j] * std::sqrt(stats.var[j] + s.epsilon);
  }
  return x;
}

}  // namespace

std::vector<double> invert_batchnorm(std::span<const double> candidate,
                                     const BatchNormState& post_state) {
  return invert_with(candidate, post_state,
                     recover_batch_statistics(post_state));
}

void invert_batchnorm(ReconstructionSet& set, const BatchNormState& post_state) {
  const BatchStatistics stats = recover_batch_statistics(post_state);
  for (auto& c : set.candidates) c.values = invert_with(c.values, post_state, stats);
}

std::vector<double> invert_layernorm(std::span<const double> candidate,
                                     const NormalizationStats& public_stats) {
  public_stats.validate();
  const std::size_t channels = public_stats.channels();
  if (channels == 0 || candidate.size() % channels != 0) {
    throw std::invalid_argument("invert_layernorm: width not divisible by channels");
  }
  const std::size_t plane = candidate.size() / channels;
  std::vector<double> x(candidate.size());
  for (std::size_t j = 0; j < candidate.size(); ++j) {
    const std::size_t c = j / plane;
    x[j] = public_stats.mean[c] + candidate[j] * public_stats.stddev[c];
  }
  return x;
}

double default_match_tolerance(std::size_t width) {
  return 1e-6 * std::sqrt(static_cast<double>(width));
}

MatchCounts match_reconstructions(ReconstructionSet& set,
                                  const Matrix& ground_truth, double tol) {
  MatchCounts counts;
  counts.batch_size = ground_truth.rows();
  counts.sample_recovered.assign(ground_truth.rows(), false);
  set.matched.assign(set.size(), false);
  set.matched_sample.assign(set.size(), -1);
  set.l2_error.assign(set.size(), std::numeric_limits<double>::infinity());
  const double tol2 = tol * tol;

  for (std::size_t k = 0; k < set.size(); ++k) {
    const auto& values = set.candidates[k].values;
    if (values.size() != ground_truth.cols()) {
      throw std::invalid_argument("match_reconstructions: width mismatch");
    }
    for (std::size_t b = 0; b < ground_truth.rows(); ++b) {
      auto x = ground_truth.row(b);
      double d2 = 0.0;
      for (std::size_t j = 0; j < x.size() && d2 <= tol2; ++j) {
        const double d = values[j] - x[j];
        d2 += d * d;
      }
      if (d2 <= tol2) {
        set.matched[k] = true;
        set.matched_sample[k] = static_cast<long>(b);
        set.l2_error[k] = std::sqrt(d2);
        if (!counts.sample_recovered[b]) {
          counts.sample_recovered[b] = true;
          ++counts.recovered;
        }
        break;
      }
    }
  }
  return counts;
}

void write_candidates(const std::filesystem::path& file,
                      const ReconstructionSet& set) {
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("write_candidates: cannot open " + file.string());
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(set.width));
  for (const auto& c : set.candidates) {
    for (double v : c.values) put_le<std::uint64_t>(out, std::bit_cast<std::uint64_t>(v));
  }
  if (!out) throw std::runtime_error("write_candidates: write failed");
}

Matrix read_candidates(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("read_candidates: cannot open " + file.string());
  const auto width = get_le<std::uint32_t>(in);
  in.seekg(0, std::ios::end);
  const auto bytes = static_cast<std::size_t>(in.tellg()) - 4;
  in.seekg(4, std::ios::beg);
  if (width == 0 || bytes % (8 * width) != 0) {
    if (width == 0 && bytes == 0) return Matrix();
    throw std::runtime_error("read_candidates: payload is not whole rows");
  }
  const std::size_t rows = bytes / (8 * width);
  Matrix m(rows, width);
  for (double& v : m.data()) v = std::bit_cast<double>(get_le<std::uint64_t>(in));
  return m;
}

}  // namespace gradleak
