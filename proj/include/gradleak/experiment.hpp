// SPDX-License-Identifier: Apache-2.0
//
// Experiment harness: JSON configs, data providers, seeded grid execution on
// a worker pool, and CSV/JSON reports.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/data.hpp"
#include "gradleak/defense.hpp"
#include "gradleak/extraction.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/model.hpp"
#include "gradleak/numerics.hpp"

namespace gradleak {

enum class AttackKind { qbi, pairs, trap_weights, none };
enum class DefenseKind { none, aggp };
enum class NormMode { data_norm, batch_norm, layer_norm };
enum class EvalMode { mask, gradient };

std::string to_string(AttackKind v);
std::string to_string(DefenseKind v);
std::string to_string(NormMode v);
std::string to_string(EvalMode v);
// Each throws std::invalid_argument on an unknown name.
AttackKind parse_attack(std::string_view s);
DefenseKind parse_defense(std::string_view s);
NormMode parse_norm(std::string_view s);
EvalMode parse_eval(std::string_view s);

struct DatasetSpec {
  std::string name = "synthetic";  // synthetic | cifar10 | tokens
  std::string data_dir;
  ImageShape shape{};               // synthetic only
  std::size_t seq_len = 250;        // tokens only
  std::size_t vocab = 10000;
  std::size_t embed_dim = 250;
};

struct GridCell {
  std::size_t N = 0;
  std::size_t B = 0;
  bool operator==(const GridCell&) const = default;
};

// Layer sizes {200, 500, 1000} x batch sizes {20, 50, 100, 200}.
std::vector<GridCell> default_grid();

struct ExperimentConfig {
  DatasetSpec dataset;
  AttackKind attack = AttackKind::qbi;
  DefenseKind defense = DefenseKind::none;
  std::vector<GridCell> grid = default_grid();
  std::size_t runs = 10;
  std::size_t batches_per_run = 10;
  std::uint64_t base_seed = 0;
  NormMode normalization = NormMode::data_norm;
  EvalMode eval = EvalMode::mask;
  std::size_t pairs_retries = 1000;
  double trap_shift = 0.5;
  AggpConfig aggp;
  std::size_t threads = 0;  // 0: hardware concurrency
  std::string csv_out;
  std::string json_out;

  // Throws std::invalid_argument on an empty grid, runs == 0, a zero N or B,
  // or invalid AGGP parameters.
  void validate() const;
  // AGGP acts on gradients, so it always uses the gradient pipeline.
  EvalMode effective_eval() const {
    return defense == DefenseKind::aggp ? EvalMode::gradient : eval;
  }
};

// Unknown keys and wrongly typed values throw std::invalid_argument.
ExperimentConfig parse_config(std::string_view json_text);
ExperimentConfig load_config(const std::filesystem::path& file);
std::string config_to_json(const ExperimentConfig& config);

struct Batch {
  Matrix x;
  std::vector<int> labels;
};

// Supplies raw (unnormalized) samples. Implementations are immutable after
// construction and safe to share between workers.
class DataProvider {
 public:
  virtual ~DataProvider() = default;
  virtual std::size_t width() const = 0;
  virtual std::size_t num_classes() const = 0;
  virtual std::optional<ImageShape> image_shape() const = 0;
  // Public per-channel statistics used for data normalization.
  virtual const NormalizationStats& stats() const = 0;
  // `count` batches of B samples, without replacement within one call.
  virtual std::vector<Batch> target_batches(std::size_t count, std::size_t B,
                                            RngStream& rng) const = 0;
  // `n` samples disjoint from the target pool where the source allows it.
  virtual Matrix auxiliary(std::size_t n, RngStream& rng) const = 0;
};

// Throws std::runtime_error if a CIFAR-10 directory is missing or incomplete.
std::unique_ptr<DataProvider> make_provider(const DatasetSpec& spec,
                                            std::uint64_t base_seed);

// Sub-stream tags derived from a run seed.
inline constexpr std::uint64_t kInitStream = 1;
inline constexpr std::uint64_t kDataStream = 2;
inline constexpr std::uint64_t kHeadStream = 3;
inline constexpr std::uint64_t kDefenseStream = 4;
inline constexpr std::uint64_t kAuxStream = 5;

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t cell_index,
                       std::size_t run_index);

// Applies data normalization in data_norm mode; otherwise returns `x`.
Matrix preprocess(const ExperimentConfig& config, const DataProvider& data,
                  Matrix x);

// The malicious model for one run: normalization layer per `config`, the
// attack layer initialized by the configured attack, and a classifier head.
MaliciousModel build_model(const ExperimentConfig& config,
                           const DataProvider& data, GridCell cell,
                           RngStream& run_rng, PairsStats* pairs = nullptr);

struct BatchOutcome {
  ExtractionMetrics metrics;
  // Largest max-abs gap between a single-activation candidate and its sample
  // (before any defense); 0 in mask mode.
  double max_isolated_error = 0.0;
  std::size_t isolated_checked = 0;
  ForwardTrace trace;
  ReconstructionSet candidates;  // gradient mode only
  MatchCounts counts;            // gradient mode only
  std::optional<AggpStats> aggp;
};

// `batch.x` must already be preprocessed. In gradient mode candidates are
// compared with the attack-layer input, or with the raw batch after
// batch-norm inversion.
BatchOutcome evaluate_batch(const ExperimentConfig& config,
                            const MaliciousModel& model, const Batch& batch,
                            RngStream& defense_rng);

struct CellResult {
  GridCell cell;
  ConfidenceInterval A, P, R;
  double expA = 0.0, expP = 0.0, expR = 0.0;
  std::size_t runs = 0;
  // Per-run batch means, in run order.
  std::vector<double> run_A, run_P, run_R;
  double max_isolated_error = 0.0;
  std::size_t isolated_checked = 0;

  bool operator==(const CellResult&) const = default;
};

struct ExperimentReport {
  std::string dataset;
  std::string attack;
  std::string defense;
  std::string normalization;
  std::string eval;
  std::uint64_t base_seed = 0;
  std::vector<CellResult> cells;
  double wall_seconds = 0.0;  // not serialized; ignored by ==

  bool operator==(const ExperimentReport& o) const {
    return dataset == o.dataset && attack == o.attack && defense == o.defense &&
           normalization == o.normalization && eval == o.eval &&
           base_seed == o.base_seed && cells == o.cells;
  }
};

// Cells are evaluated on `config.threads` workers; results do not depend on
// the thread count. A provider may be passed to reuse loaded data.
ExperimentReport run_grid(const ExperimentConfig& config,
                          const DataProvider* provider = nullptr);

enum class ReportFormat { csv, json };

std::string report_to_csv(const ExperimentReport& report);
std::string report_to_json(const ExperimentReport& report);
ExperimentReport report_from_json(std::string_view json_text);
// Throws std::runtime_error if the file cannot be written.
void emit_report(const ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& file);

}  // namespace gradleak
