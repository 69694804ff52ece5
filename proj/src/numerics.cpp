// SPDX-License-Identifier: Apache-2.0

#include "gradleak/numerics.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>
#include <string>

namespace gradleak {
namespace {

using RowMajor =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMajor>;
using MutMap = Eigen::Map<RowMajor>;

constexpr std::uint64_t kGolden = 0x9e3779b97f4a7c15ULL;

std::uint64_t mix64(std::uint64_t z) {
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string shape_of(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

}  // namespace

Matrix::Matrix(std::size_t rows, std::size_t cols, double fill)
    : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

Matrix::Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
    : rows_(rows), cols_(cols), data_(std::move(data)) {
  if (data_.size() != rows_ * cols_) {
    throw std::invalid_argument("Matrix: data length " +
                                std::to_string(data_.size()) +
                                " does not match " + std::to_string(rows_) +
                                "x" + std::to_string(cols_));
  }
}

Matrix Matrix::identity(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
  return m;
}

Matrix Matrix::from_rows(
    std::initializer_list<std::initializer_list<double>> rows) {
  const std::size_t r = rows.size();
  const std::size_t c = r == 0 ? 0 : rows.begin()->size();
  std::vector<double> data;
  data.reserve(r * c);
  for (const auto& row : rows) {
    if (row.size() != c) {
      throw std::invalid_argument("Matrix::from_rows: ragged rows");
    }
    data.insert(data.end(), row.begin(), row.end());
  }
  return Matrix(r, c, std::move(data));
}

bool Matrix::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

Matrix Matrix::transposed() const {
  Matrix t(cols_, rows_);
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t c = 0; c < cols_; ++c) t(c, r) = (*this)(r, c);
  }
  return t;
}

Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows()) {
    throw std::invalid_argument("matmul: shape mismatch " + shape_of(a) +
                                " * " + shape_of(b));
  }
  Matrix out(a.rows(), b.cols());
  if (out.empty()) return out;
  if (a.cols() == 0) return out;
  ConstMap ea(a.data().data(), a.rows(), a.cols());
  ConstMap eb(b.data().data(), b.rows(), b.cols());
  MutMap eo(out.data().data(), out.rows(), out.cols());
  eo.noalias() = ea * eb;
  return out;
}

Matrix matmul_transposed(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("matmul_transposed: shape mismatch " +
                                shape_of(a) + " * (" + shape_of(b) + ")^T");
  }
  Matrix out(a.rows(), b.rows());
  if (out.empty()) return out;
  if (a.cols() == 0) return out;
  ConstMap ea(a.data().data(), a.rows(), a.cols());
  ConstMap eb(b.data().data(), b.rows(), b.cols());
  MutMap eo(out.data().data(), out.rows(), out.cols());
  eo.noalias() = ea * eb.transpose();
  return out;
}

void matvec(const Matrix& a, std::span<const double> x,
            std::span<double> out) {
  if (x.size() != a.cols() || out.size() != a.rows()) {
    throw std::invalid_argument("matvec: shape mismatch " + shape_of(a));
  }
  if (out.empty()) return;
  if (a.cols() == 0) {
    std::fill(out.begin(), out.end(), 0.0);
    return;
  }
  ConstMap ea(a.data().data(), a.rows(), a.cols());
  Eigen::Map<const Eigen::VectorXd> ex(x.data(), x.size());
  Eigen::Map<Eigen::VectorXd> eo(out.data(), out.size());
  eo.noalias() = ea * ex;
}

std::uint64_t hash64(std::uint64_t a, std::uint64_t b) {
  return mix64(mix64(a + kGolden) ^ (b + 0x632be59bd9b4e019ULL));
}

std::uint64_t hash64(std::initializer_list<std::uint64_t> words) {
  std::uint64_t h = 0x2545f4914f6cdd1dULL;
  for (std::uint64_t w : words) h = hash64(h, w);
  return h;
}

RngStream::RngStream(std::uint64_t seed) : seed_(seed), key_(mix64(seed)) {}

std::uint64_t RngStream::next_u64() {
  ++counter_;
  return mix64(key_ + counter_ * kGolden);
}

double RngStream::uniform() {
  // 53 random bits centred in their cell: never exactly 0 or 1.
  return (static_cast<double>(next_u64() >> 11) + 0.5) * 0x1.0p-53;
}

std::uint64_t RngStream::uniform_index(std::uint64_t n) {
  if (n == 0) throw std::invalid_argument("uniform_index: n must be > 0");
  // Rejection keeps the draw unbiased for any n.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % n);
  for (;;) {
    const std::uint64_t v = next_u64();
    if (v < limit) return v % n;
  }
}

double RngStream::normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  const double u1 = uniform();
  const double u2 = uniform();
  const double r = std::sqrt(-2.0 * std::log(u1));
  const double theta = 2.0 * std::numbers::pi * u2;
  spare_ = r * std::sin(theta);
  has_spare_ = true;
  return r * std::cos(theta);
}

void RngStream::fill_normal(std::span<double> out, double mean,
                            double stddev) {
  for (double& v : out) v = mean + stddev * normal();
}

RngStream RngStream::split(std::uint64_t tag) const {
  return RngStream(hash64(seed_, tag));
}

std::vector<double> standard_normal_sample(RngStream& rng, std::size_t n) {
  std::vector<double> out(n);
  rng.fill_normal(out);
  return out;
}

double normal_cdf(double x) {
  return 0.5 * std::erfc(-x / std::numbers::sqrt2);
}

double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw std::domain_error("normal_quantile: p must lie in (0, 1), got " +
                            std::to_string(p));
  }
  if (p > 0.5) return -normal_quantile(1.0 - p);

  // Rational approximation (relative error ~1e-9), then Halley steps.
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double kLow = 0.02425;

  double x;
  if (p < kLow) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else {
    const double q = p - 0.5;
    const double r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  }

  const double sqrt_2pi = std::sqrt(2.0 * std::numbers::pi);
  for (int step = 0; step < 2; ++step) {
    const double e = normal_cdf(x) - p;
    const double u = e * sqrt_2pi * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

}  // namespace gradleak
