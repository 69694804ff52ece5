// SPDX-License-Identifier: Apache-2.0
//
// Acceptance gate. One PASS / FAIL / SKIP line per criterion on stdout,
// per-cell detail on stderr.
//
//   acceptance [--only 1,2,8s,...] [--data-dir DIR] [--runs N]
//
// Exit status: 0 when everything selected passed, 1 on any failure,
// 77 when every selected criterion was skipped.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "gradleak/attack.hpp"
#include "gradleak/defense.hpp"
#include "gradleak/experiment.hpp"
#include "gradleak/extraction.hpp"
#include "gradleak/metrics.hpp"
#include "gradleak/model.hpp"

using namespace gradleak;

namespace {

enum class Verdict { pass, fail, skip };

struct Outcome {
  Verdict verdict;
  std::string detail;
};

Outcome pass(std::string d) { return {Verdict::pass, std::move(d)}; }
Outcome fail(std::string d) { return {Verdict::fail, std::move(d)}; }
Outcome skip(std::string d) { return {Verdict::skip, std::move(d)}; }
Outcome judge(bool ok, std::string d) { return {ok ? Verdict::pass : Verdict::fail, std::move(d)}; }

std::string fmt(const char* f, auto... args) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Options {
  std::string data_dir;
  std::size_t synthetic_runs = 100;
};

// Reference values in percent: A, P, R at each (N, B).
struct Row {
  std::size_t N, B;
  double A, P, R;
};
const std::vector<Row> kSyntheticExperimental{
    {200, 20, 64.1, 37.5, 97.7},   {200, 50, 64.2, 37.3, 77.1},
    {200, 100, 63.0, 36.7, 52.1},  {200, 200, 63.1, 36.5, 30.7},
    {500, 20, 64.2, 38.0, 100.0},  {500, 50, 63.4, 37.0, 97.5},
    {500, 100, 63.3, 36.8, 83.9},  {500, 200, 63.1, 36.5, 59.8},
    {1000, 20, 64.2, 37.6, 100.0}, {1000, 50, 63.6, 37.0, 100.0},
    {1000, 100, 63.2, 36.8, 97.1}, {1000, 200, 63.4, 36.8, 83.6},
};

std::vector<GridCell> full_grid() { return default_grid(); }

// ---- 1 ---------------------------------------------------------------------

Outcome closed_forms(const Options&) {
  const double a = expected_A(20), p = expected_P(20);
  const double r1 = expected_R(200, 20), r2 = expected_R(1000, 200);
  // Predicted columns: 64.2 / 37.7 / 97.8 at (200,20), 84.2 at (1000,200).
  const bool ok = std::abs(a - 0.6415) <= 0.001 && std::abs(p - 0.3774) <= 0.001 &&
                  std::abs(r1 - 0.978) <= 0.001 && std::abs(r2 - 0.842) <= 0.001 &&
                  std::abs(100 * a - 64.2) <= 0.1 && std::abs(100 * p - 37.7) <= 0.1 &&
                  std::abs(100 * r1 - 97.8) <= 0.1 && std::abs(100 * r2 - 84.2) <= 0.1;
  return judge(ok, fmt("A(20)=%.4f P(20)=%.4f R(200,20)=%.4f R(1000,200)=%.4f", a, p, r1, r2));
}

// ---- 2 ---------------------------------------------------------------------

Outcome synthetic_table(const Options& opt) {
  ExperimentConfig cfg;
  cfg.attack = AttackKind::qbi;
  cfg.grid = full_grid();
  cfg.runs = opt.synthetic_runs;
  cfg.batches_per_run = 10;
  cfg.base_seed = 0;
  const auto t0 = std::chrono::steady_clock::now();
  const ExperimentReport r = run_grid(cfg);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  double wA = 0, wP = 0, wR = 0;
  bool ok = true;
  for (std::size_t i = 0; i < r.cells.size(); ++i) {
    const Row& ref = kSyntheticExperimental[i];
    const CellResult& c = r.cells[i];
    const double dA = 100 * c.A.mean - ref.A, dP = 100 * c.P.mean - ref.P,
                 dR = 100 * c.R.mean - ref.R;
    std::fprintf(stderr, "  C2 (%4zu,%3zu) A %.2f (%.1f) P %.2f (%.1f) R %.2f (%.1f)\n",
                 c.cell.N, c.cell.B, 100 * c.A.mean, ref.A, 100 * c.P.mean, ref.P,
                 100 * c.R.mean, ref.R);
    ok &= std::abs(dA) <= 1.0 && std::abs(dP) <= 1.0 && std::abs(dR) <= 1.5;
    wA = std::max(wA, std::abs(dA));
    wP = std::max(wP, std::abs(dP));
    wR = std::max(wR, std::abs(dR));
  }
  return judge(ok, fmt("%zu runs/cell, worst |dA| %.2f |dP| %.2f |dR| %.2f points, %.0f s",
                       cfg.runs, wA, wP, wR, secs));
}

// ---- 3 ---------------------------------------------------------------------

Outcome bernoulli_agreement(const Options&) {
  RngStream rng(hash64({0x6265726e, 0}));
  const int trials = 10000;
  double worst = 0;
  for (const GridCell& cell : full_grid()) {
    double A = 0, P = 0, R = 0;
    for (int t = 0; t < trials; ++t) {
      const ExtractionMetrics m = observed_metrics(simulate_bernoulli_mask(cell.N, cell.B, rng));
      A += m.A;
      P += m.P;
      R += m.R;
    }
    const double dA = 100 * (A / trials - expected_A(cell.B));
    const double dP = 100 * (P / trials - expected_P(cell.B));
    const double dR = 100 * (R / trials - expected_R(cell.N, cell.B));
    std::fprintf(stderr, "  C3 (%4zu,%3zu) dA %+.3f dP %+.3f dR %+.3f\n", cell.N, cell.B, dA,
                 dP, dR);
    worst = std::max({worst, std::abs(dA), std::abs(dP), std::abs(dR)});
  }
  return judge(worst <= 0.5, fmt("%d trials/cell, worst deviation %.3f points", trials, worst));
}

// ---- 4 ---------------------------------------------------------------------

// Worst relative finite-difference error over every parameter of a tiny model.
double finite_difference_error(std::uint64_t seed) {
  RngStream rng(seed);
  const std::size_t B = 2 + rng.uniform_index(4), M = 2 + rng.uniform_index(5),
                    N = 2 + rng.uniform_index(5), C = 2 + rng.uniform_index(3);
  MaliciousModel model;
  model.attack = LinearLayer::zeros(N, M);
  rng.fill_normal(model.attack.weights.data());
  rng.fill_normal(model.attack.bias);
  model.head = LinearLayer::zeros(C, N);
  rng.fill_normal(model.head.weights.data());
  rng.fill_normal(model.head.bias);
  Matrix x(B, M);
  rng.fill_normal(x.data());
  std::vector<int> labels(B);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_index(C));
  // Keep pre-activations away from the ReLU kink.
  const Matrix z = forward(model, x).pre_activations;
  for (double v : z.data()) {
    if (std::abs(v) < 1e-3) return -1;
  }

  const ModelGradients g = compute_model_gradients(model, forward(model, x), labels);
  const double h = 1e-6;
  double worst = 0;
  auto check = [&](double& param, double analytic) {
    const double keep = param;
    param = keep + h;
    const double up = cross_entropy_loss(model, x, labels);
    param = keep - h;
    const double down = cross_entropy_loss(model, x, labels);
    param = keep;
    const double numeric = (up - down) / (2 * h);
    const double scale = std::max(1.0, std::abs(analytic));
    worst = std::max(worst, std::abs(numeric - analytic) / scale);
  };
  for (std::size_t n = 0; n < N; ++n) {
    for (std::size_t m = 0; m < M; ++m) check(model.attack.weights(n, m), g.attack.grad_w(n, m));
    check(model.attack.bias[n], g.attack.grad_b[n]);
  }
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t n = 0; n < N; ++n) check(model.head.weights(c, n), g.head_grad_w(c, n));
    check(model.head.bias[c], g.head_grad_b[c]);
  }
  return worst;
}

Outcome disaggregation_exactness(const Options&) {
  ExperimentConfig cfg;
  cfg.grid = full_grid();
  cfg.eval = EvalMode::gradient;
  cfg.runs = 10;
  cfg.batches_per_run = 10;
  const ExperimentReport r = run_grid(cfg);
  double worst = 0;
  std::size_t checked = 0;
  for (const auto& c : r.cells) {
    worst = std::max(worst, c.max_isolated_error);
    checked += c.isolated_checked;
  }

  double fd_worst = 0;
  int models = 0;
  for (std::uint64_t seed = 1; models < 20; ++seed) {
    const double e = finite_difference_error(hash64({0x6664, seed}));
    if (e < 0) continue;
    fd_worst = std::max(fd_worst, e);
    ++models;
  }
  const bool ok = checked > 0 && worst <= 1e-6 && fd_worst <= 1e-5;
  return judge(ok, fmt("%zu isolated neurons, max abs error %.2e; FD on %d models, worst rel %.2e",
                       checked, worst, models, fd_worst));
}

// ---- 5 ---------------------------------------------------------------------

Outcome batchnorm_round_trip(const Options&) {
  ExperimentConfig cfg;
  cfg.normalization = NormMode::batch_norm;
  cfg.eval = EvalMode::gradient;
  const auto data = make_provider(cfg.dataset, cfg.base_seed);
  double worst = 0;
  std::size_t checked = 0;
  const auto grid = full_grid();
  for (std::size_t ci = 0; ci < grid.size(); ++ci) {
    const GridCell cell = grid[ci];
    RngStream run(run_seed(cfg.base_seed, ci, 0));
    const MaliciousModel model = build_model(cfg, *data, cell, run);
    RngStream data_rng = run.split(kDataStream);
    for (const Batch& batch : data->target_batches(2, cell.B, data_rng)) {
      const ForwardTrace trace = forward(model, batch.x);
      ReconstructionSet set = disaggregate(compute_gradients(model, trace, batch.labels));
      invert_batchnorm(set, *trace.batchnorm_after);
      for (const Candidate& c : set.candidates) {
        if (c.activation_count != 1) continue;
        std::size_t sample = 0;
        while (!trace.activation_mask(sample, c.neuron)) ++sample;
        const auto raw = batch.x.row(sample);
        for (std::size_t j = 0; j < raw.size(); ++j) {
          worst = std::max(worst, std::abs(c.values[j] - raw[j]));
        }
        ++checked;
      }
    }
  }
  return judge(checked > 0 && worst <= 1e-4,
               fmt("%zu isolated candidates inverted, max abs error %.2e", checked, worst));
}

// ---- CIFAR-10 --------------------------------------------------------------

DatasetSpec cifar_spec(const Options& opt) {
  DatasetSpec d;
  d.name = "cifar10";
  d.data_dir = opt.data_dir;
  return d;
}

bool cifar_present(const Options& opt) {
  std::string dir = opt.data_dir;
  if (dir.empty()) {
    if (const char* env = std::getenv("GRADLEAK_DATA_DIR")) dir = env;
  }
  if (dir.empty()) return false;
  return cifar10_available(dir) || cifar10_available(std::filesystem::path(dir) / "cifar-10-batches-bin");
}

ExperimentReport cifar_grid(const Options& opt, AttackKind attack, NormMode norm,
                            std::vector<GridCell> grid) {
  ExperimentConfig cfg;
  cfg.dataset = cifar_spec(opt);
  cfg.attack = attack;
  cfg.normalization = norm;
  cfg.grid = std::move(grid);
  cfg.runs = 10;
  cfg.batches_per_run = 10;
  return run_grid(cfg);
}

Outcome layernorm_uplift(const Options& opt) {
  if (!cifar_present(opt)) return skip("CIFAR-10 not found (set GRADLEAK_DATA_DIR)");
  const auto dn = cifar_grid(opt, AttackKind::qbi, NormMode::data_norm, full_grid());
  const auto ln = cifar_grid(opt, AttackKind::qbi, NormMode::layer_norm, full_grid());
  bool ok = true;
  double at = 0;
  for (std::size_t i = 0; i < dn.cells.size(); ++i) {
    const auto& c = ln.cells[i];
    std::fprintf(stderr, "  C6 (%4zu,%3zu) DN %.1f LN %.1f\n", c.cell.N, c.cell.B,
                 100 * dn.cells[i].R.mean, 100 * c.R.mean);
    ok &= c.R.mean > dn.cells[i].R.mean;
    if (c.cell == GridCell{1000, 50}) at = c.R.mean;
  }
  ok &= at >= 0.95;
  return judge(ok, fmt("LN R(1000,50) = %.1f%%, LN > DN in every cell: %s", 100 * at,
                       ok ? "yes" : "see detail"));
}

Outcome cifar_desk_scale(const Options& opt) {
  if (!cifar_present(opt)) return skip("CIFAR-10 not found (set GRADLEAK_DATA_DIR)");
  const auto r = cifar_grid(opt, AttackKind::qbi, NormMode::data_norm, {{1000, 20}, {200, 200}});
  const double r1 = 100 * r.cells[0].R.mean, r2 = 100 * r.cells[1].R.mean;
  return judge(std::abs(r1 - 91.3) <= 5.0 && std::abs(r2 - 15.8) <= 3.0,
               fmt("R(1000,20) = %.1f (91.3 +- 5), R(200,200) = %.1f (15.8 +- 3)", r1, r2));
}

Outcome pairs_cifar(const Options& opt) {
  if (!cifar_present(opt)) return skip("CIFAR-10 not found (set GRADLEAK_DATA_DIR)");
  const std::vector<GridCell> cells{{200, 100}, {500, 200}};
  const auto q = cifar_grid(opt, AttackKind::qbi, NormMode::data_norm, cells);
  const auto p = cifar_grid(opt, AttackKind::pairs, NormMode::data_norm, cells);
  bool ok = true;
  std::string d;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    ok &= p.cells[i].R.mean >= q.cells[i].R.mean;
    d += fmt("(%zu,%zu) PAIRS %.1f vs QBI %.1f  ", cells[i].N, cells[i].B,
             100 * p.cells[i].R.mean, 100 * q.cells[i].R.mean);
  }
  return judge(ok, d);
}

// ---- 8s --------------------------------------------------------------------

Outcome pairs_synthetic(const Options&) {
  ExperimentConfig cfg;
  cfg.grid = full_grid();
  cfg.runs = 10;
  cfg.batches_per_run = 10;
  const ExperimentReport q = run_grid(cfg);
  cfg.attack = AttackKind::pairs;
  const ExperimentReport p = run_grid(cfg);
  double worst = 0;
  for (std::size_t i = 0; i < q.cells.size(); ++i) {
    const double d = 100 * (p.cells[i].R.mean - q.cells[i].R.mean);
    std::fprintf(stderr, "  C8s (%4zu,%3zu) PAIRS %.2f QBI %.2f\n", q.cells[i].cell.N,
                 q.cells[i].cell.B, 100 * p.cells[i].R.mean, 100 * q.cells[i].R.mean);
    worst = std::max(worst, std::abs(d));
  }
  return judge(worst <= 2.0, fmt("worst |PAIRS - QBI| = %.2f points over 12 cells", worst));
}

// ---- 9 ---------------------------------------------------------------------

// Checks the invariants on one pruned report; returns a description of the
// first violation or an empty string.
std::string aggp_invariants(const GradientReport& before, const GradientReport& after,
                            const AggpConfig& cfg) {
  const std::size_t M = before.grad_w.cols();
  for (std::size_t n = 0; n < before.grad_w.rows(); ++n) {
    const std::size_t a = before.activation_counts[n];
    const auto b = before.grad_w.row(n), p = after.grad_w.row(n);
    if (a == 0 || a >= cfg.cutoff) {
      if (!std::equal(b.begin(), b.end(), p.begin()) || before.grad_b[n] != after.grad_b[n]) {
        return fmt("row %zu with a=%zu was modified", n, a);
      }
      continue;
    }
    const std::size_t nz = static_cast<std::size_t>(
        std::count_if(p.begin(), p.end(), [](double v) { return v != 0.0; }));
    const std::size_t source_nz = static_cast<std::size_t>(
        std::count_if(b.begin(), b.end(), [](double v) { return v != 0.0; }));
    const std::size_t want = std::min(aggp_retained_count(a, M, cfg), source_nz);
    if (nz != want) return fmt("row %zu with a=%zu keeps %zu, expected %zu", n, a, nz, want);
    if (a == 1 && after.grad_b[n] != 0.0) return fmt("row %zu bias not zeroed", n);
  }
  return {};
}

Outcome aggp_zero_recall(const Options&) {
  const std::vector<AttackKind> attacks{AttackKind::qbi, AttackKind::pairs,
                                        AttackKind::trap_weights, AttackKind::none};
  double worst_R = 0;
  std::size_t rows_checked = 0;
  for (AttackKind attack : attacks) {
    ExperimentConfig cfg;
    cfg.attack = attack;
    cfg.defense = DefenseKind::aggp;
    cfg.grid = full_grid();
    cfg.runs = 2;
    cfg.batches_per_run = 5;
    const ExperimentReport r = run_grid(cfg);
    for (const auto& c : r.cells) {
      for (double v : c.run_R) worst_R = std::max(worst_R, v);
    }

    // Invariants on one batch per cell.
    const auto data = make_provider(cfg.dataset, cfg.base_seed);
    for (std::size_t ci = 0; ci < cfg.grid.size(); ++ci) {
      RngStream run(run_seed(cfg.base_seed, ci, 0));
      const MaliciousModel model = build_model(cfg, *data, cfg.grid[ci], run);
      RngStream data_rng = run.split(kDataStream);
      RngStream def_rng = run.split(kDefenseStream);
      const Batch batch = data->target_batches(1, cfg.grid[ci].B, data_rng).front();
      const GradientReport g =
          compute_gradients(model, preprocess(cfg, *data, batch.x), batch.labels);
      const GradientReport p = aggp_prune(g, cfg.aggp, def_rng);
      const std::string err = aggp_invariants(g, p, cfg.aggp);
      if (!err.empty()) return fail(to_string(attack) + ": " + err);
      rows_checked += g.grad_w.rows();
    }
  }
  return judge(worst_R == 0.0, fmt("4 attacks x 12 cells, max run R %.4f, %zu rows invariant-checked",
                                   worst_R, rows_checked));
}

// ---- 10 --------------------------------------------------------------------

Outcome determinism(const Options&) {
  const auto dir = std::filesystem::temp_directory_path() / "gradleak_acceptance_c10";
  std::filesystem::create_directories(dir);
  ExperimentConfig cfg;
  cfg.runs = 3;
  cfg.batches_per_run = 3;
  cfg.base_seed = 2024;
  cfg.eval = EvalMode::gradient;
  {
    std::ofstream(dir / "config.json") << config_to_json(cfg);
  }
  std::string bytes[2];
  for (int k = 0; k < 2; ++k) {
    const auto out = dir / ("run" + std::to_string(k) + ".csv");
    std::filesystem::remove(out);
    const std::string cmd = std::string(GRADLEAK_CLI_PATH) + " run --config " +
                            (dir / "config.json").string() + " --out " + out.string() +
                            " --format csv 2>/dev/null";
    if (std::system(cmd.c_str()) != 0) return fail("CLI run failed: " + cmd);
    std::ifstream in(out, std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    bytes[k] = ss.str();
  }
  return judge(!bytes[0].empty() && bytes[0] == bytes[1],
               fmt("two executions, %zu bytes each, identical: %s", bytes[0].size(),
                   bytes[0] == bytes[1] ? "yes" : "no"));
}

struct Criterion {
  std::string id;
  std::string title;
  std::function<Outcome(const Options&)> run;
};

}  // namespace

int main(int argc, char** argv) {
  Options opt;
  std::set<std::string> only;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      std::stringstream ss(argv[++i]);
      for (std::string tok; std::getline(ss, tok, ',');) only.insert(tok);
    } else if (a == "--data-dir" && i + 1 < argc) {
      opt.data_dir = argv[++i];
    } else if (a == "--runs" && i + 1 < argc) {
      opt.synthetic_runs = std::stoul(argv[++i]);
    } else {
      std::fprintf(stderr, "usage: acceptance [--only LIST] [--data-dir DIR] [--runs N]\n");
      return 2;
    }
  }

  const std::vector<Criterion> all{
      {"1", "closed-form bounds", closed_forms},
      {"2", "synthetic reproduction", synthetic_table},
      {"3", "Bernoulli simulation vs closed forms", bernoulli_agreement},
      {"4", "disaggregation exactness", disaggregation_exactness},
      {"5", "batch-norm round trip", batchnorm_round_trip},
      {"6", "layer-norm uplift (CIFAR-10)", layernorm_uplift},
      {"7", "CIFAR-10 desk scale", cifar_desk_scale},
      {"8c", "PAIRS >= QBI (CIFAR-10)", pairs_cifar},
      {"8s", "PAIRS ~ QBI (synthetic)", pairs_synthetic},
      {"9", "AGGP zero recall", aggp_zero_recall},
      {"10", "determinism", determinism},
  };

  int passed = 0, failed = 0, skipped = 0;
  for (const Criterion& c : all) {
    const bool selected = only.empty() || only.count(c.id) ||
                          (c.id[0] == '8' && only.count("8"));
    if (!selected) continue;
    Outcome o;
    try {
      o = c.run(opt);
    } catch (const std::exception& e) {
      o = fail(std::string("exception: ") + e.what());
    }
    const char* tag = o.verdict == Verdict::pass ? "PASS" : o.verdict == Verdict::fail ? "FAIL" : "SKIP";
    std::printf("[%s] %-3s %s: %s\n", tag, c.id.c_str(), c.title.c_str(), o.detail.c_str());
    std::fflush(stdout);
    (o.verdict == Verdict::pass ? passed : o.verdict == Verdict::fail ? failed : skipped)++;
  }
  std::printf("%d passed, %d failed, %d skipped\n", passed, failed, skipped);
  if (failed) return 1;
  if (passed == 0 && skipped > 0) return 77;
  return 0;
}
