// SPDX-License-Identifier: Apache-2.0
//
// Dense row-major matrices, a counter-based random stream, and the normal
// distribution helpers every other module builds on.

#pragma once

#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <span>
#include <vector>

namespace gradleak {

// Channel-major image layout (C x H x W), flattened row-major within a channel.
struct ImageShape {
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;

  std::size_t size() const { return channels * height * width; }
  std::size_t plane() const { return height * width; }
  friend bool operator==(const ImageShape&, const ImageShape&) = default;
};

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0);
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data);

  static Matrix identity(std::size_t n);
  static Matrix from_rows(
      std::initializer_list<std::initializer_list<double>> rows);

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) {
    return data_[r * cols_ + c];
  }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) {
    return {data_.data() + r * cols_, cols_};
  }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }

  bool all_finite() const;
  Matrix transposed() const;

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

// a * b. Throws std::invalid_argument on shape mismatch.
Matrix matmul(const Matrix& a, const Matrix& b);

// a * b^T. This is the natural product for row-major weight matrices, where
// each row of `b` holds one neuron's weights.
Matrix matmul_transposed(const Matrix& a, const Matrix& b);

// out = a * x, with x of length a.cols() and out of length a.rows().
void matvec(const Matrix& a, std::span<const double> x, std::span<double> out);

// Mixes two 64-bit words into one (splitmix64 finalizer over a combined key).
std::uint64_t hash64(std::uint64_t a, std::uint64_t b);
std::uint64_t hash64(std::initializer_list<std::uint64_t> words);

/// Counter-based pseudo-random stream. Output i is a pure function of
/// (seed, i), so sequences are reproducible bit-for-bit on any platform with
/// IEEE doubles and a conforming libm.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed);

  std::uint64_t seed() const { return seed_; }
  std::uint64_t counter() const { return counter_; }

  std::uint64_t next_u64();
  // Uniform on the open interval (0, 1).
  double uniform();
  // Uniform integer in [0, n). n must be positive.
  std::uint64_t uniform_index(std::uint64_t n);
  // Box-Muller standard normal draw.
  double normal();
  void fill_normal(std::span<double> out, double mean = 0.0,
                   double stddev = 1.0);

  // Independent child stream keyed by (seed, tag).
  RngStream split(std::uint64_t tag) const;

 private:
  std::uint64_t seed_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::vector<double> standard_normal_sample(RngStream& rng, std::size_t n);

double normal_cdf(double x);

/// Inverse of the standard normal CDF. Throws std::domain_error unless
/// 0 < p < 1.
double normal_quantile(double p);

}  // namespace gradleak
