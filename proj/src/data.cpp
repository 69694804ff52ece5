// SPDX-License-Identifier: Apache-2.0

#include "gradleak/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>

namespace gradleak {
namespace {

constexpr std::size_t kCifarPixels = kCifarRecordBytes - 1;

std::vector<std::filesystem::path> cifar_files(
    const std::filesystem::path& dir, Split split) {
  if (split == Split::test) return {dir / "test_batch.bin"};
  std::vector<std::filesystem::path> files;
  for (int i = 1; i <= 5; ++i) {
    files.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
  }
  return files;
}

void check_stats(const NormalizationStats& stats, std::size_t channels,
                 std::size_t width) {
  stats.validate();
  if (stats.channels() != channels || channels == 0 || width % channels != 0) {
    throw std::invalid_argument(
        "normalize: stats carry " + std::to_string(stats.channels()) +
        " channels but samples have " + std::to_string(channels) +
        " (width " + std::to_string(width) + ")");
  }
}

}  // namespace

void NormalizationStats::validate() const {
  if (mean.size() != stddev.size()) {
    throw std::invalid_argument("NormalizationStats: mean/std length mismatch");
  }
  for (double s : stddev) {
    if (!(s > 0.0) || !std::isfinite(s)) {
      throw std::invalid_argument("NormalizationStats: std must be > 0");
    }
  }
}

NormalizationStats NormalizationStats::identity(std::size_t channels) {
  return {std::vector<double>(channels, 0.0),
          std::vector<double>(channels, 1.0)};
}

Dataset synthetic_gaussian(std::size_t n, ImageShape shape, RngStream& rng,
                           std::size_t num_classes) {
  Dataset d;
  d.samples = Matrix(n, shape.size());
  rng.fill_normal(d.samples.data());
  d.labels.resize(n);
  for (int& y : d.labels) y = static_cast<int>(rng.uniform_index(num_classes));
  d.num_classes = num_classes;
  d.image = shape;
  return d;
}

Matrix CifarImages::rows(std::span<const std::size_t> indices) const {
  Matrix out(indices.size(), kCifarPixels);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    const std::uint8_t* src = pixels.data() + indices[r] * kCifarPixels;
    auto dst = out.row(r);
    for (std::size_t j = 0; j < kCifarPixels; ++j) dst[j] = src[j] / 255.0;
  }
  return out;
}

CifarImages cifar10_read_records(const std::filesystem::path& file) {
  std::ifstream in(file, std::ios::binary);
  if (!in) throw std::runtime_error("cifar10: cannot open " + file.string());
  in.seekg(0, std::ios::end);
  const auto length = static_cast<std::size_t>(in.tellg());
  in.seekg(0, std::ios::beg);
  if (length % kCifarRecordBytes != 0) {
    throw std::runtime_error("cifar10: " + file.string() + " has " +
                             std::to_string(length) +
                             " bytes, not a multiple of 3073");
  }
  const std::size_t records = length / kCifarRecordBytes;
  CifarImages out;
  out.pixels.resize(records * kCifarPixels);
  out.labels.resize(records);
  std::vector<char> record(kCifarRecordBytes);
  for (std::size_t r = 0; r < records; ++r) {
    in.read(record.data(), static_cast<std::streamsize>(kCifarRecordBytes));
    if (!in) throw std::runtime_error("cifar10: short read in " + file.string());
    const auto label = static_cast<std::uint8_t>(record[0]);
    if (label > 9) {
      throw std::runtime_error("cifar10: label " + std::to_string(label) +
                               " in record " + std::to_string(r) + " of " +
                               file.string());
    }
    out.labels[r] = label;
    std::copy(record.begin() + 1, record.end(),
              reinterpret_cast<char*>(out.pixels.data() + r * kCifarPixels));
  }
  return out;
}

CifarImages cifar10_load_records(const std::filesystem::path& dir,
                                 Split split) {
  CifarImages all;
  for (const auto& file : cifar_files(dir, split)) {
    CifarImages part = cifar10_read_records(file);
    all.pixels.insert(all.pixels.end(), part.pixels.begin(), part.pixels.end());
    all.labels.insert(all.labels.end(), part.labels.begin(), part.labels.end());
  }
  return all;
}

Dataset cifar10_load(const std::filesystem::path& dir, Split split,
                     std::size_t limit) {
  const CifarImages records = cifar10_load_records(dir, split);
  const std::size_t n =
      limit == 0 ? records.size() : std::min(limit, records.size());
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  Dataset d;
  d.samples = records.rows(idx);
  d.labels.assign(records.labels.begin(), records.labels.begin() + n);
  d.num_classes = 10;
  d.image = kCifarShape;
  return d;
}

void cifar10_write(const std::filesystem::path& file, const Dataset& dataset) {
  if (dataset.width() != kCifarPixels) {
    throw std::invalid_argument("cifar10_write: rows must have 3072 pixels");
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cifar10_write: cannot open " + file.string());
  std::vector<char> record(kCifarRecordBytes);
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    const int label = dataset.labels[r];
    if (label < 0 || label > 9) {
      throw std::invalid_argument("cifar10_write: label out of range");
    }
    record[0] = static_cast<char>(label);
    auto row = dataset.samples.row(r);
    for (std::size_t j = 0; j < kCifarPixels; ++j) {
      const double v = std::clamp(row[j], 0.0, 1.0);
      record[j + 1] = static_cast<char>(
          static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
    out.write(record.data(), static_cast<std::streamsize>(record.size()));
  }
  if (!out) throw std::runtime_error("cifar10_write: write failed");
}

bool cifar10_available(const std::filesystem::path& dir) {
  if (dir.empty()) return false;
  for (Split s : {Split::train, Split::test}) {
    for (const auto& f : cifar_files(dir, s)) {
      std::error_code ec;
      if (!std::filesystem::is_regular_file(f, ec)) return false;
    }
  }
  return true;
}

NormalizationStats compute_channel_stats(const Dataset& dataset) {
  const std::size_t channels = dataset.channels();
  const std::size_t plane = dataset.width() / channels;
  std::vector<double> sum(channels, 0.0), sq(channels, 0.0);
  for (std::size_t r = 0; r < dataset.size(); ++r) {
    auto row = dataset.samples.row(r);
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t j = 0; j < plane; ++j) {
        const double v = row[c * plane + j];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
  }
  NormalizationStats stats;
  const double count = static_cast<double>(dataset.size() * plane);
  for (std::size_t c = 0; c < channels; ++c) {
    const double mean = sum[c] / count;
    stats.mean.push_back(mean);
    stats.stddev.push_back(std::sqrt(std::max(sq[c] / count - mean * mean,
                                              std::numeric_limits<double>::min())));
  }
  return stats;
}

NormalizationStats compute_channel_stats(const CifarImages& images) {
  constexpr std::size_t plane = 1024;
  // Integer accumulation is exact for 50000 x 1024 byte values.
  std::vector<std::uint64_t> sum(3, 0), sq(3, 0);
  for (std::size_t r = 0; r < images.size(); ++r) {
    const std::uint8_t* px = images.pixels.data() + r * kCifarPixels;
    for (std::size_t c = 0; c < 3; ++c) {
      for (std::size_t j = 0; j < plane; ++j) {
        const std::uint64_t v = px[c * plane + j];
        sum[c] += v;
        sq[c] += v * v;
      }
    }
  }
  NormalizationStats stats;
  const double count = static_cast<double>(images.size() * plane);
  for (std::size_t c = 0; c < 3; ++c) {
    const double mean = static_cast<double>(sum[c]) / count / 255.0;
    const double meansq =
        static_cast<double>(sq[c]) / count / (255.0 * 255.0);
    stats.mean.push_back(mean);
    stats.stddev.push_back(std::sqrt(meansq - mean * mean));
  }
  return stats;
}

void normalize_rows(Matrix& samples, const NormalizationStats& stats) {
  check_stats(stats, stats.channels(), samples.cols());
  const std::size_t plane = samples.cols() / stats.channels();
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    auto row = samples.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const std::size_t c = j / plane;
      row[j] = (row[j] - stats.mean[c]) / stats.stddev[c];
    }
  }
}

void denormalize_rows(Matrix& samples, const NormalizationStats& stats) {
  check_stats(stats, stats.channels(), samples.cols());
  const std::size_t plane = samples.cols() / stats.channels();
  for (std::size_t r = 0; r < samples.rows(); ++r) {
    auto row = samples.row(r);
    for (std::size_t j = 0; j < row.size(); ++j) {
      const std::size_t c = j / plane;
      row[j] = row[j] * stats.stddev[c] + stats.mean[c];
    }
  }
}

Dataset normalize(const Dataset& dataset, const NormalizationStats& stats) {
  check_stats(stats, dataset.channels(), dataset.width());
  Dataset out = dataset;
  normalize_rows(out.samples, stats);
  return out;
}

Dataset denormalize(const Dataset& dataset, const NormalizationStats& stats) {
  check_stats(stats, dataset.channels(), dataset.width());
  Dataset out = dataset;
  denormalize_rows(out.samples, stats);
  return out;
}

Matrix random_embedding_table(std::size_t vocab, std::size_t embed_dim,
                              RngStream& rng) {
  Matrix table(vocab, embed_dim);
  rng.fill_normal(table.data());
  return table;
}

std::vector<double> embed_tokens(std::span<const int> tokens,
                                 const Matrix& table) {
  const std::size_t dim = table.cols();
  std::vector<double> out(tokens.size() * dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    if (tokens[t] < 0 || static_cast<std::size_t>(tokens[t]) >= table.rows()) {
      throw std::invalid_argument("embed_tokens: token id out of range");
    }
    auto src = table.row(static_cast<std::size_t>(tokens[t]));
    std::copy(src.begin(), src.end(), out.begin() + t * dim);
  }
  return out;
}

std::vector<int> detokenize(std::span<const double> embedded,
                            const Matrix& table) {
  const std::size_t dim = table.cols();
  if (dim == 0 || embedded.size() % dim != 0) {
    throw std::invalid_argument("detokenize: width not a multiple of embed_dim");
  }
  std::vector<int> tokens(embedded.size() / dim);
  for (std::size_t t = 0; t < tokens.size(); ++t) {
    auto chunk = embedded.subspan(t * dim, dim);
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t v = 0; v < table.rows(); ++v) {
      auto e = table.row(v);
      double d2 = 0.0;
      for (std::size_t j = 0; j < dim && d2 < best; ++j) {
        const double d = chunk[j] - e[j];
        d2 += d * d;
      }
      if (d2 < best) {
        best = d2;
        tokens[t] = static_cast<int>(v);
      }
    }
  }
  return tokens;
}

Dataset synthetic_tokens(std::size_t n, std::size_t seq_len, std::size_t vocab,
                         std::size_t embed_dim, RngStream& rng) {
  if (vocab < 2) throw std::invalid_argument("synthetic_tokens: vocab < 2");
  Dataset d;
  d.embedding = random_embedding_table(vocab, embed_dim, rng);
  d.tokens = TokenLayout{seq_len, embed_dim, vocab};
  d.num_classes = 2;
  d.samples = Matrix(n, seq_len * embed_dim);
  d.labels.resize(n);
  d.token_ids.resize(n);
  for (std::size_t r = 0; r < n; ++r) {
    auto& ids = d.token_ids[r];
    ids.resize(seq_len);
    for (int& t : ids) t = static_cast<int>(rng.uniform_index(vocab));
    const auto row = embed_tokens(ids, d.embedding);
    std::copy(row.begin(), row.end(), d.samples.row(r).begin());
    d.labels[r] = static_cast<int>(rng.uniform_index(2));
  }
  return d;
}

void write_pnm(const std::filesystem::path& file,
               std::span<const double> pixels, ImageShape shape) {
  if (pixels.size() != shape.size()) {
    throw std::invalid_argument("write_pnm: pixel count does not match shape");
  }
  if (shape.channels != 1 && shape.channels != 3) {
    throw std::invalid_argument("write_pnm: need 1 or 3 channels");
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("write_pnm: cannot open " + file.string());
  out << (shape.channels == 3 ? "P6" : "P5") << '\n'
      << shape.width << ' ' << shape.height << "\n255\n";
  const std::size_t plane = shape.plane();
  std::vector<char> bytes(pixels.size());
  // PNM interleaves channels per pixel.
  for (std::size_t p = 0; p < plane; ++p) {
    for (std::size_t c = 0; c < shape.channels; ++c) {
      const double v = std::clamp(pixels[c * plane + p], 0.0, 1.0);
      bytes[p * shape.channels + c] = static_cast<char>(
          static_cast<std::uint8_t>(std::lround(v * 255.0)));
    }
  }
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write_pnm: write failed");
}

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices) {
  Matrix out(indices.size(), m.cols());
  for (std::size_t r = 0; r < indices.size(); ++r) {
    auto src = m.row(indices[r]);
    std::copy(src.begin(), src.end(), out.row(r).begin());
  }
  return out;
}

}  // namespace gradleak
