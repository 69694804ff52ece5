// SPDX-License-Identifier: Apache-2.0
//
// Dataset providers (synthetic Gaussian, CIFAR-10 binary, synthetic token
// embeddings), per-channel normalization, and PNM image export.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "gradleak/numerics.hpp"

namespace gradleak {

struct NormalizationStats {
  std::vector<double> mean;    // per channel
  std::vector<double> stddev;  // per channel, > 0

  std::size_t channels() const { return mean.size(); }
  // Throws std::invalid_argument on length mismatch or non-positive stddev.
  void validate() const;

  static NormalizationStats identity(std::size_t channels);
};

struct TokenLayout {
  std::size_t seq_len = 0;
  std::size_t embed_dim = 0;
  std::size_t vocab = 0;
};

struct Dataset {
  Matrix samples;           // one flattened sample per row
  std::vector<int> labels;  // one per sample
  std::size_t num_classes = 10;
  std::optional<ImageShape> image;
  std::optional<TokenLayout> tokens;
  // Token pipeline only: the embedding table (vocab x embed_dim) and the ids
  // behind every row.
  Matrix embedding;
  std::vector<std::vector<int>> token_ids;

  std::size_t size() const { return samples.rows(); }
  std::size_t width() const { return samples.cols(); }
  // Feature groups normalization applies to: image channels, or 1.
  std::size_t channels() const { return image ? image->channels : 1; }
};

// i.i.d. N(0,1) features with uniform labels in [0, num_classes).
Dataset synthetic_gaussian(std::size_t n, ImageShape shape, RngStream& rng,
                           std::size_t num_classes = 10);

inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr ImageShape kCifarShape{3, 32, 32};

enum class Split { train, test };

// Raw CIFAR-10 records kept as bytes; rows are expanded to [0,1] doubles on
// demand. A full train split as doubles would take 1.2 GB.
struct CifarImages {
  std::vector<std::uint8_t> pixels;  // size() * 3072
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  Matrix rows(std::span<const std::size_t> indices) const;
};

// Parses one CIFAR-10 binary batch file (3073-byte records: label byte then
// 1024 R, 1024 G, 1024 B bytes). Throws std::runtime_error if the file is
// missing, its length is not a multiple of 3073, or a label exceeds 9.
CifarImages cifar10_read_records(const std::filesystem::path& file);
CifarImages cifar10_load_records(const std::filesystem::path& dir, Split split);

// Full split as a Dataset with pixels scaled to [0,1]. `limit` caps the number
// of records (0 = all).
Dataset cifar10_load(const std::filesystem::path& dir, Split split,
                     std::size_t limit = 0);

// Writes a dataset back to the binary format; pixels are rounded from
// [0,1] to bytes.
void cifar10_write(const std::filesystem::path& file, const Dataset& dataset);

// True if `dir` contains all six CIFAR-10 binary batch files.
bool cifar10_available(const std::filesystem::path& dir);

// Per-channel mean and (population) standard deviation.
NormalizationStats compute_channel_stats(const Dataset& dataset);
NormalizationStats compute_channel_stats(const CifarImages& images);

Dataset normalize(const Dataset& dataset, const NormalizationStats& stats);
Dataset denormalize(const Dataset& dataset, const NormalizationStats& stats);
// In-place row-wise variants for a matrix of `channels`-major samples.
void normalize_rows(Matrix& samples, const NormalizationStats& stats);
void denormalize_rows(Matrix& samples, const NormalizationStats& stats);

// Random token ids embedded through a fixed N(0,1) table and flattened to
// width seq_len * embed_dim. Labels are binary.
Dataset synthetic_tokens(std::size_t n, std::size_t seq_len, std::size_t vocab,
                         std::size_t embed_dim, RngStream& rng);

Matrix random_embedding_table(std::size_t vocab, std::size_t embed_dim,
                              RngStream& rng);
std::vector<double> embed_tokens(std::span<const int> tokens,
                                 const Matrix& table);
// Nearest-neighbour (squared l2) lookup of every embed_dim chunk.
std::vector<int> detokenize(std::span<const double> embedded,
                            const Matrix& table);

// Writes a binary PGM (1 channel) or PPM (3 channels); values are clamped to
// [0,1] before scaling to bytes.
void write_pnm(const std::filesystem::path& file,
               std::span<const double> pixels, ImageShape shape);

Matrix gather_rows(const Matrix& m, std::span<const std::size_t> indices);

}  // namespace gradleak
