// SPDX-License-Identifier: Apache-2.0

#include "gradleak/experiment.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "json.hpp"

namespace gradleak {

using nlohmann::json;

namespace {

template <typename E, std::size_t K>
E parse_enum(std::string_view s, const std::pair<const char*, E> (&table)[K],
             const char* what) {
  for (const auto& [name, value] : table) {
    if (s == name) return value;
  }
  throw std::invalid_argument(std::string("unknown ") + what + " '" +
                              std::string(s) + "'");
}

constexpr std::pair<const char*, AttackKind> kAttacks[] = {
    {"qbi", AttackKind::qbi},
    {"pairs", AttackKind::pairs},
    {"trap_weights", AttackKind::trap_weights},
    {"none", AttackKind::none}};
constexpr std::pair<const char*, DefenseKind> kDefenses[] = {
    {"none", DefenseKind::none}, {"aggp", DefenseKind::aggp}};
constexpr std::pair<const char*, NormMode> kNorms[] = {
    {"data_norm", NormMode::data_norm},
    {"batch_norm", NormMode::batch_norm},
    {"layer_norm", NormMode::layer_norm}};
constexpr std::pair<const char*, EvalMode> kEvals[] = {
    {"mask", EvalMode::mask}, {"gradient", EvalMode::gradient}};

template <typename E, std::size_t K>
std::string enum_name(E v, const std::pair<const char*, E> (&table)[K]) {
  for (const auto& [name, value] : table) {
    if (v == value) return name;
  }
  return "?";
}

}  // namespace

std::string to_string(AttackKind v) { return enum_name(v, kAttacks); }
std::string to_string(DefenseKind v) { return enum_name(v, kDefenses); }
std::string to_string(NormMode v) { return enum_name(v, kNorms); }
std::string to_string(EvalMode v) { return enum_name(v, kEvals); }
AttackKind parse_attack(std::string_view s) { return parse_enum(s, kAttacks, "attack"); }
DefenseKind parse_defense(std::string_view s) { return parse_enum(s, kDefenses, "defense"); }
NormMode parse_norm(std::string_view s) { return parse_enum(s, kNorms, "normalization"); }
EvalMode parse_eval(std::string_view s) { return parse_enum(s, kEvals, "eval mode"); }

std::vector<GridCell> default_grid() {
  std::vector<GridCell> grid;
  for (std::size_t n : {200, 500, 1000}) {
    for (std::size_t b : {20, 50, 100, 200}) grid.push_back({n, b});
  }
  return grid;
}

void ExperimentConfig::validate() const {
  if (grid.empty()) throw std::invalid_argument("config: grid is empty");
  if (runs == 0) throw std::invalid_argument("config: runs must be >= 1");
  if (batches_per_run == 0) {
    throw std::invalid_argument("config: batches_per_run must be >= 1");
  }
  for (const auto& c : grid) {
    if (c.N == 0 || c.B == 0) {
      throw std::invalid_argument("config: grid cells need N >= 1 and B >= 1");
    }
  }
  if (dataset.name != "synthetic" && dataset.name != "cifar10" &&
      dataset.name != "tokens") {
    throw std::invalid_argument("config: unknown dataset '" + dataset.name + "'");
  }
  if (trap_shift < 0.0) throw std::invalid_argument("config: trap shift must be >= 0");
  aggp.validate();
}

// ---- config JSON ----------------------------------------------------------

namespace {

void reject_unknown(const json& obj, std::initializer_list<const char*> keys,
                    const char* where) {
  for (const auto& [key, _] : obj.items()) {
    if (std::none_of(keys.begin(), keys.end(),
                     [&](const char* k) { return key == k; })) {
      throw std::invalid_argument(std::string("config: unknown key '") + key +
                                  "' in " + where);
    }
  }
}

template <typename T>
void read_if(const json& obj, const char* key, T& out) {
  if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace

ExperimentConfig parse_config(std::string_view text) {
  ExperimentConfig cfg;
  try {
    const json j = json::parse(text);
    if (!j.is_object()) throw std::invalid_argument("config: top level must be an object");
    reject_unknown(j,
                   {"dataset", "attack", "defense", "grid", "runs",
                    "batches_per_run", "base_seed", "normalization", "eval",
                    "pairs", "trap_weights", "aggp", "threads", "output"},
                   "config");
    if (j.contains("dataset")) {
      const json& d = j.at("dataset");
      reject_unknown(d, {"name", "data_dir", "shape", "seq_len", "vocab", "embed_dim"},
                     "dataset");
      read_if(d, "name", cfg.dataset.name);
      read_if(d, "data_dir", cfg.dataset.data_dir);
      if (d.contains("shape")) {
        const auto s = d.at("shape").get<std::vector<std::size_t>>();
        if (s.size() != 3) throw std::invalid_argument("config: dataset.shape needs 3 entries");
        cfg.dataset.shape = {s[0], s[1], s[2]};
      }
      read_if(d, "seq_len", cfg.dataset.seq_len);
      read_if(d, "vocab", cfg.dataset.vocab);
      read_if(d, "embed_dim", cfg.dataset.embed_dim);
    }
    if (j.contains("attack")) cfg.attack = parse_attack(j.at("attack").get<std::string>());
    if (j.contains("defense")) cfg.defense = parse_defense(j.at("defense").get<std::string>());
    if (j.contains("normalization")) {
      cfg.normalization = parse_norm(j.at("normalization").get<std::string>());
    }
    if (j.contains("eval")) cfg.eval = parse_eval(j.at("eval").get<std::string>());
    if (j.contains("grid")) {
      cfg.grid.clear();
      for (const auto& cell : j.at("grid")) {
        const auto nb = cell.get<std::vector<std::size_t>>();
        if (nb.size() != 2) throw std::invalid_argument("config: grid entries are [N, B]");
        cfg.grid.push_back({nb[0], nb[1]});
      }
    }
    read_if(j, "runs", cfg.runs);
    read_if(j, "batches_per_run", cfg.batches_per_run);
    read_if(j, "base_seed", cfg.base_seed);
    read_if(j, "threads", cfg.threads);
    if (j.contains("pairs")) {
      reject_unknown(j.at("pairs"), {"retries"}, "pairs");
      read_if(j.at("pairs"), "retries", cfg.pairs_retries);
    }
    if (j.contains("trap_weights")) {
      reject_unknown(j.at("trap_weights"), {"shift"}, "trap_weights");
      read_if(j.at("trap_weights"), "shift", cfg.trap_shift);
    }
    if (j.contains("aggp")) {
      const json& a = j.at("aggp");
      reject_unknown(a, {"cutoff", "p_l", "p_u", "retain_fraction"}, "aggp");
      read_if(a, "cutoff", cfg.aggp.cutoff);
      read_if(a, "p_l", cfg.aggp.p_lower);
      read_if(a, "p_u", cfg.aggp.p_upper);
      read_if(a, "retain_fraction", cfg.aggp.retain_fraction);
    }
    if (j.contains("output")) {
      const json& o = j.at("output");
      reject_unknown(o, {"csv", "json"}, "output");
      read_if(o, "csv", cfg.csv_out);
      read_if(o, "json", cfg.json_out);
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("config: ") + e.what());
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& file) {
  std::ifstream in(file);
  if (!in) throw std::runtime_error("cannot open config " + file.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

std::string config_to_json(const ExperimentConfig& c) {
  json grid = json::array();
  for (const auto& cell : c.grid) grid.push_back({cell.N, cell.B});
  const json j = {
      {"dataset",
       {{"name", c.dataset.name},
        {"data_dir", c.dataset.data_dir},
        {"shape", {c.dataset.shape.channels, c.dataset.shape.height, c.dataset.shape.width}},
        {"seq_len", c.dataset.seq_len},
        {"vocab", c.dataset.vocab},
        {"embed_dim", c.dataset.embed_dim}}},
      {"attack", to_string(c.attack)},
      {"defense", to_string(c.defense)},
      {"grid", grid},
      {"runs", c.runs},
      {"batches_per_run", c.batches_per_run},
      {"base_seed", c.base_seed},
      {"normalization", to_string(c.normalization)},
      {"eval", to_string(c.eval)},
      {"pairs", {{"retries", c.pairs_retries}}},
      {"trap_weights", {{"shift", c.trap_shift}}},
      {"aggp",
       {{"cutoff", c.aggp.cutoff},
        {"p_l", c.aggp.p_lower},
        {"p_u", c.aggp.p_upper},
        {"retain_fraction", c.aggp.retain_fraction}}},
      {"threads", c.threads},
      {"output", {{"csv", c.csv_out}, {"json", c.json_out}}}};
  return j.dump(2) + "\n";
}

// ---- data providers -------------------------------------------------------

namespace {

// First `k` entries of a uniform random permutation of [0, n).
std::vector<std::size_t> sample_indices(std::size_t n, std::size_t k,
                                        RngStream& rng) {
  if (k > n) {
    throw std::invalid_argument("requested " + std::to_string(k) +
                                " samples from a pool of " + std::to_string(n));
  }
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  for (std::size_t i = 0; i < k; ++i) {
    std::swap(idx[i], idx[i + rng.uniform_index(n - i)]);
  }
  idx.resize(k);
  return idx;
}

std::vector<int> random_labels(std::size_t n, std::size_t classes, RngStream& rng) {
  std::vector<int> labels(n);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(classes));
  return labels;
}

class SyntheticProvider final : public DataProvider {
 public:
  explicit SyntheticProvider(ImageShape shape)
      : shape_(shape), stats_(NormalizationStats::identity(shape.channels)) {}

  std::size_t width() const override { return shape_.size(); }
  std::size_t num_classes() const override { return 10; }
  std::optional<ImageShape> image_shape() const override { return shape_; }
  const NormalizationStats& stats() const override { return stats_; }

  std::vector<Batch> target_batches(std::size_t count, std::size_t B,
                                    RngStream& rng) const override {
    std::vector<Batch> out;
    for (std::size_t k = 0; k < count; ++k) {
      Dataset d = synthetic_gaussian(B, shape_, rng, num_classes());
      out.push_back({std::move(d.samples), std::move(d.labels)});
    }
    return out;
  }
  Matrix auxiliary(std::size_t n, RngStream& rng) const override {
    return synthetic_gaussian(n, shape_, rng, num_classes()).samples;
  }

 private:
  ImageShape shape_;
  NormalizationStats stats_;
};

class TokenProvider final : public DataProvider {
 public:
  TokenProvider(const DatasetSpec& spec, std::uint64_t base_seed)
      : seq_len_(spec.seq_len), stats_(NormalizationStats::identity(1)) {
    if (spec.vocab < 2) throw std::invalid_argument("tokens: vocab must be >= 2");
    if (spec.seq_len == 0 || spec.embed_dim == 0) {
      throw std::invalid_argument("tokens: seq_len and embed_dim must be >= 1");
    }
    RngStream table_rng(hash64(base_seed, 0x656d626564ULL));
    table_ = random_embedding_table(spec.vocab, spec.embed_dim, table_rng);
  }

  std::size_t width() const override { return seq_len_ * table_.cols(); }
  std::size_t num_classes() const override { return 2; }
  std::optional<ImageShape> image_shape() const override { return std::nullopt; }
  const NormalizationStats& stats() const override { return stats_; }

  std::vector<Batch> target_batches(std::size_t count, std::size_t B,
                                    RngStream& rng) const override {
    std::vector<Batch> out;
    for (std::size_t k = 0; k < count; ++k) {
      Batch b{draw(B, rng), {}};
      b.labels = random_labels(B, 2, rng);
      out.push_back(std::move(b));
    }
    return out;
  }
  Matrix auxiliary(std::size_t n, RngStream& rng) const override { return draw(n, rng); }

 private:
  Matrix draw(std::size_t n, RngStream& rng) const {
    Matrix x(n, width());
    std::vector<int> ids(seq_len_);
    for (std::size_t r = 0; r < n; ++r) {
      for (auto& t : ids) t = static_cast<int>(rng.uniform_index(table_.rows()));
      const auto e = embed_tokens(ids, table_);
      std::copy(e.begin(), e.end(), x.row(r).begin());
    }
    return x;
  }

  std::size_t seq_len_;
  Matrix table_;
  NormalizationStats stats_;
};

// Targets come from the test split, auxiliary data from the train split.
class CifarProvider final : public DataProvider {
 public:
  explicit CifarProvider(const std::filesystem::path& dir)
      : train_(cifar10_load_records(dir, Split::train)),
        test_(cifar10_load_records(dir, Split::test)),
        stats_(compute_channel_stats(train_)) {}

  std::size_t width() const override { return kCifarShape.size(); }
  std::size_t num_classes() const override { return 10; }
  std::optional<ImageShape> image_shape() const override { return kCifarShape; }
  const NormalizationStats& stats() const override { return stats_; }

  std::vector<Batch> target_batches(std::size_t count, std::size_t B,
                                    RngStream& rng) const override {
    const auto idx = sample_indices(test_.size(), count * B, rng);
    std::vector<Batch> out;
    for (std::size_t k = 0; k < count; ++k) {
      std::span<const std::size_t> part(idx.data() + k * B, B);
      Batch b{test_.rows(part), {}};
      for (std::size_t i : part) b.labels.push_back(test_.labels[i]);
      out.push_back(std::move(b));
    }
    return out;
  }
  Matrix auxiliary(std::size_t n, RngStream& rng) const override {
    const auto idx = sample_indices(train_.size(), n, rng);
    return train_.rows(idx);
  }

 private:
  CifarImages train_;
  CifarImages test_;
  NormalizationStats stats_;
};

}  // namespace

std::unique_ptr<DataProvider> make_provider(const DatasetSpec& spec,
                                            std::uint64_t base_seed) {
  if (spec.name == "synthetic") return std::make_unique<SyntheticProvider>(spec.shape);
  if (spec.name == "tokens") return std::make_unique<TokenProvider>(spec, base_seed);
  if (spec.name == "cifar10") {
    std::string dir = spec.data_dir;
    if (dir.empty()) {
      if (const char* env = std::getenv("GRADLEAK_DATA_DIR")) dir = env;
    }
    if (dir.empty() || !cifar10_available(dir)) {
      throw std::runtime_error(
          "CIFAR-10 binary batches not found in '" + dir +
          "' (set --data-dir or GRADLEAK_DATA_DIR)");
    }
    return std::make_unique<CifarProvider>(dir);
  }
  throw std::invalid_argument("unknown dataset '" + spec.name + "'");
}

// ---- runs -----------------------------------------------------------------

std::uint64_t run_seed(std::uint64_t base_seed, std::size_t cell_index,
                       std::size_t run_index) {
  return hash64({base_seed, cell_index, run_index});
}

Matrix preprocess(const ExperimentConfig& config, const DataProvider& data,
                  Matrix x) {
  if (config.normalization == NormMode::data_norm) normalize_rows(x, data.stats());
  return x;
}

MaliciousModel build_model(const ExperimentConfig& config,
                           const DataProvider& data, GridCell cell,
                           RngStream& run_rng, PairsStats* pairs) {
  const std::size_t m = data.width();
  MaliciousModel model;
  if (auto shape = data.image_shape()) model.image_shape = *shape;
  switch (config.normalization) {
    case NormMode::data_norm:
      break;
    case NormMode::batch_norm:
      model.norm = BatchNormState::fresh(m);
      break;
    case NormMode::layer_norm:
      model.norm = LayerNormConfig{m, 1e-5};
      break;
  }

  RngStream init = run_rng.split(kInitStream);
  const LinearLayer blank = LinearLayer::zeros(cell.N, m);
  switch (config.attack) {
    case AttackKind::qbi:
      model.attack = qbi_init(blank, {cell.B, m}, init);
      break;
    case AttackKind::pairs: {
      model.attack = qbi_init(blank, {cell.B, m}, init);
      RngStream aux_rng = run_rng.split(kAuxStream);
      // Auxiliary rows pass through the same preprocessing as targets; a
      // batch-norm layer sees the whole pool as one batch.
      const Matrix aux = attack_layer_input(
          model, preprocess(config, data, data.auxiliary(cell.N, aux_rng)));
      PairsResult r = pairs_init(model.attack, {config.pairs_retries, cell.B}, aux, init);
      model.attack = std::move(r.layer);
      if (pairs) *pairs = std::move(r.stats);
      break;
    }
    case AttackKind::trap_weights:
      model.attack = trap_weights_init(blank, config.trap_shift, init);
      break;
    case AttackKind::none:
      model.attack = benign_init(blank, init);
      break;
  }
  RngStream head_rng = run_rng.split(kHeadStream);
  model.head = make_classifier_head(cell.N, data.num_classes(), head_rng);
  return model;
}

BatchOutcome evaluate_batch(const ExperimentConfig& config,
                            const MaliciousModel& model, const Batch& batch,
                            RngStream& defense_rng) {
  BatchOutcome out;
  out.trace = forward(model, batch.x);
  out.metrics = observed_metrics(out.trace);
  if (config.effective_eval() == EvalMode::mask) return out;

  GradientReport report = compute_gradients(model, out.trace, batch.labels);
  const Matrix& seen = out.trace.attack_input;
  const auto& mask = out.trace.activation_mask;
  for (std::size_t n = 0; n < report.grad_b.size(); ++n) {
    if (report.activation_counts[n] != 1) continue;
    if (!(std::abs(report.grad_b[n]) > kBiasGradientThreshold)) continue;
    std::size_t b = 0;
    while (!mask(b, n)) ++b;
    const auto gw = report.grad_w.row(n);
    const auto x = seen.row(b);
    for (std::size_t j = 0; j < gw.size(); ++j) {
      out.max_isolated_error =
          std::max(out.max_isolated_error, std::abs(gw[j] / report.grad_b[n] - x[j]));
    }
    ++out.isolated_checked;
  }

  if (config.defense == DefenseKind::aggp) {
    AggpStats stats;
    report = aggp_prune(report, config.aggp, defense_rng, &stats);
    out.aggp = stats;
  }
  out.candidates = disaggregate(report);
  const double tol = default_match_tolerance(seen.cols());
  if (out.trace.batchnorm_after) {
    invert_batchnorm(out.candidates, *out.trace.batchnorm_after);
    out.counts = match_reconstructions(out.candidates, batch.x, tol);
  } else {
    out.counts = match_reconstructions(out.candidates, seen, tol);
  }
  out.metrics.R = out.counts.recall();
  return out;
}

namespace {

struct RunOutcome {
  double A = 0.0, P = 0.0, R = 0.0;
  double max_isolated_error = 0.0;
  std::size_t isolated_checked = 0;
};

RunOutcome execute_run(const ExperimentConfig& config, const DataProvider& data,
                       GridCell cell, std::uint64_t seed) {
  RngStream run(seed);
  const MaliciousModel model = build_model(config, data, cell, run);
  RngStream data_rng = run.split(kDataStream);
  RngStream defense_rng = run.split(kDefenseStream);
  auto batches = data.target_batches(config.batches_per_run, cell.B, data_rng);

  RunOutcome out;
  for (auto& batch : batches) {
    batch.x = preprocess(config, data, std::move(batch.x));
    const BatchOutcome o = evaluate_batch(config, model, batch, defense_rng);
    out.A += o.metrics.A;
    out.P += o.metrics.P;
    out.R += o.metrics.R;
    out.max_isolated_error = std::max(out.max_isolated_error, o.max_isolated_error);
    out.isolated_checked += o.isolated_checked;
  }
  const auto k = static_cast<double>(batches.size());
  out.A /= k;
  out.P /= k;
  out.R /= k;
  return out;
}

ConfidenceInterval summarize(const std::vector<double>& values) {
  if (values.size() >= 2) return aggregate_ci(values);
  return {values.empty() ? 0.0 : values.front(), 0.0};
}

}  // namespace

ExperimentReport run_grid(const ExperimentConfig& config,
                          const DataProvider* provider) {
  config.validate();
  const auto start = std::chrono::steady_clock::now();
  std::unique_ptr<DataProvider> owned;
  if (!provider) {
    owned = make_provider(config.dataset, config.base_seed);
    provider = owned.get();
  }

  const std::size_t runs = config.runs;
  const std::size_t tasks = config.grid.size() * runs;
  std::vector<RunOutcome> results(tasks);
  std::atomic<std::size_t> next{0};
  std::vector<std::exception_ptr> errors(tasks);

  auto worker = [&] {
    for (std::size_t t = next++; t < tasks; t = next++) {
      const std::size_t c = t / runs;
      const std::size_t r = t % runs;
      try {
        results[t] = execute_run(config, *provider, config.grid[c],
                                 run_seed(config.base_seed, c, r));
      } catch (...) {
        errors[t] = std::current_exception();
      }
    }
  };
  std::size_t threads = config.threads;
  if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
  threads = std::min(threads, tasks);
  if (threads <= 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t i = 0; i < threads; ++i) pool.emplace_back(worker);
    for (auto& th : pool) th.join();
  }
  for (const auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }

  ExperimentReport report;
  report.dataset = config.dataset.name;
  report.attack = to_string(config.attack);
  report.defense = to_string(config.defense);
  report.normalization = to_string(config.normalization);
  report.eval = to_string(config.effective_eval());
  report.base_seed = config.base_seed;
  for (std::size_t c = 0; c < config.grid.size(); ++c) {
    CellResult cell;
    cell.cell = config.grid[c];
    cell.runs = runs;
    for (std::size_t r = 0; r < runs; ++r) {
      const RunOutcome& o = results[c * runs + r];
      cell.run_A.push_back(o.A);
      cell.run_P.push_back(o.P);
      cell.run_R.push_back(o.R);
      cell.max_isolated_error = std::max(cell.max_isolated_error, o.max_isolated_error);
      cell.isolated_checked += o.isolated_checked;
    }
    cell.A = summarize(cell.run_A);
    cell.P = summarize(cell.run_P);
    cell.R = summarize(cell.run_R);
    cell.expA = expected_A(cell.cell.B);
    cell.expP = expected_P(cell.cell.B);
    cell.expR = expected_R(cell.cell.N, cell.cell.B);
    report.cells.push_back(std::move(cell));
  }
  report.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

// ---- reports --------------------------------------------------------------

std::string report_to_csv(const ExperimentReport& report) {
  std::string out =
      "N,B,attack,defense,A_mean,A_ci,P_mean,P_ci,R_mean,R_ci,expA,expP,expR,"
      "runs,seed\n";
  char line[512];
  for (const auto& c : report.cells) {
    std::snprintf(line, sizeof line,
                  "%zu,%zu,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f,%zu,%llu\n",
                  c.cell.N, c.cell.B, report.attack.c_str(), report.defense.c_str(),
                  c.A.mean, c.A.half_width, c.P.mean, c.P.half_width, c.R.mean,
                  c.R.half_width, c.expA, c.expP, c.expR, c.runs,
                  static_cast<unsigned long long>(report.base_seed));
    out += line;
  }
  return out;
}

namespace {

json ci_json(const ConfidenceInterval& ci) {
  return {{"mean", ci.mean}, {"ci", ci.half_width}};
}

ConfidenceInterval ci_from(const json& j) {
  return {j.at("mean").get<double>(), j.at("ci").get<double>()};
}

}  // namespace

std::string report_to_json(const ExperimentReport& report) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    cells.push_back({{"N", c.cell.N},
                     {"B", c.cell.B},
                     {"A", ci_json(c.A)},
                     {"P", ci_json(c.P)},
                     {"R", ci_json(c.R)},
                     {"expA", c.expA},
                     {"expP", c.expP},
                     {"expR", c.expR},
                     {"runs", c.runs},
                     {"run_A", c.run_A},
                     {"run_P", c.run_P},
                     {"run_R", c.run_R},
                     {"max_isolated_error", c.max_isolated_error},
                     {"isolated_checked", c.isolated_checked}});
  }
  const json j = {{"dataset", report.dataset},
                  {"attack", report.attack},
                  {"defense", report.defense},
                  {"normalization", report.normalization},
                  {"eval", report.eval},
                  {"seed", report.base_seed},
                  {"cells", cells}};
  return j.dump(2) + "\n";
}

ExperimentReport report_from_json(std::string_view text) {
  try {
    const json j = json::parse(text);
    ExperimentReport r;
    r.dataset = j.at("dataset").get<std::string>();
    r.attack = j.at("attack").get<std::string>();
    r.defense = j.at("defense").get<std::string>();
    r.normalization = j.at("normalization").get<std::string>();
    r.eval = j.at("eval").get<std::string>();
    r.base_seed = j.at("seed").get<std::uint64_t>();
    for (const auto& c : j.at("cells")) {
      CellResult cell;
      cell.cell = {c.at("N").get<std::size_t>(), c.at("B").get<std::size_t>()};
      cell.A = ci_from(c.at("A"));
      cell.P = ci_from(c.at("P"));
      cell.R = ci_from(c.at("R"));
      cell.expA = c.at("expA").get<double>();
      cell.expP = c.at("expP").get<double>();
      cell.expR = c.at("expR").get<double>();
      cell.runs = c.at("runs").get<std::size_t>();
      cell.run_A = c.at("run_A").get<std::vector<double>>();
      cell.run_P = c.at("run_P").get<std::vector<double>>();
      cell.run_R = c.at("run_R").get<std::vector<double>>();
      cell.max_isolated_error = c.at("max_isolated_error").get<double>();
      cell.isolated_checked = c.at("isolated_checked").get<std::size_t>();
      r.cells.push_back(std::move(cell));
    }
    return r;
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("report: ") + e.what());
  }
}

void emit_report(const ExperimentReport& report, ReportFormat format,
                 const std::filesystem::path& file) {
  if (file.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(file.parent_path(), ec);
  }
  std::ofstream out(file, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write report to " + file.string());
  out << (format == ReportFormat::csv ? report_to_csv(report)
                                      : report_to_json(report));
  if (!out) throw std::runtime_error("failed writing report to " + file.string());
}

}  // namespace gradleak
