// SPDX-License-Identifier: Apache-2.0

#include <gtest/gtest.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include "gradleak/experiment.hpp"

using namespace gradleak;

namespace {

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("gradleak_exp_" + name);
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct CliResult {
  int code = -1;
  std::string out;
};

CliResult run_cli(const std::string& args) {
  const auto out = temp_path("cli_stdout.txt");
  const std::string cmd = std::string(GRADLEAK_CLI_PATH) + " " + args + " > " +
                          out.string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  CliResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  return r;
}

ExperimentConfig small_config() {
  ExperimentConfig cfg;
  cfg.grid = {{200, 20}, {200, 50}};
  cfg.runs = 3;
  cfg.batches_per_run = 2;
  cfg.base_seed = 17;
  return cfg;
}

}  // namespace

TEST(Config, DefaultProtocol) {
  const ExperimentConfig cfg;
  EXPECT_EQ(cfg.runs, 10u);
  EXPECT_EQ(cfg.batches_per_run, 10u);
  EXPECT_EQ(cfg.grid.size(), 12u);
  EXPECT_EQ(cfg.pairs_retries, 1000u);
}

TEST(Config, JsonRoundTrip) {
  ExperimentConfig cfg = small_config();
  cfg.attack = AttackKind::pairs;
  cfg.defense = DefenseKind::aggp;
  cfg.normalization = NormMode::layer_norm;
  cfg.eval = EvalMode::gradient;
  cfg.aggp.cutoff = 12;
  cfg.trap_shift = 1.25;
  cfg.dataset.shape = {1, 8, 8};
  cfg.csv_out = "a.csv";
  const ExperimentConfig back = parse_config(config_to_json(cfg));
  EXPECT_EQ(config_to_json(back), config_to_json(cfg));
  EXPECT_EQ(back.grid, cfg.grid);
  EXPECT_EQ(back.attack, AttackKind::pairs);
  EXPECT_EQ(back.aggp.cutoff, 12u);
}

TEST(Config, PartialFileKeepsDefaults) {
  const ExperimentConfig cfg =
      parse_config(R"({"attack": "qbi", "grid": [[500, 100]], "runs": 4})");
  EXPECT_EQ(cfg.grid, (std::vector<GridCell>{{500, 100}}));
  EXPECT_EQ(cfg.runs, 4u);
  EXPECT_EQ(cfg.batches_per_run, 10u);
  EXPECT_EQ(cfg.dataset.name, "synthetic");
}

TEST(Config, InvalidInputsRejected) {
  EXPECT_THROW(parse_config(R"({"grid": []})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"runs": 0})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"atack": "qbi"})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"attack": "magic"})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"grid": [[200]]})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"runs": "ten"})"), std::invalid_argument);
  EXPECT_THROW(parse_config(R"({"aggp": {"cutoff": 2}})"), std::invalid_argument);
  EXPECT_THROW(parse_config("not json"), std::invalid_argument);
  EXPECT_THROW(load_config(temp_path("missing.json")), std::runtime_error);
}

TEST(RunGrid, EveryCellOnceWithTheory) {
  const ExperimentReport r = run_grid(small_config());
  ASSERT_EQ(r.cells.size(), 2u);
  EXPECT_EQ(r.cells[0].cell, (GridCell{200, 20}));
  EXPECT_EQ(r.cells[1].cell, (GridCell{200, 50}));
  for (const auto& c : r.cells) {
    EXPECT_EQ(c.runs, 3u);
    EXPECT_EQ(c.run_R.size(), 3u);
    EXPECT_EQ(c.expA, expected_A(c.cell.B));
    EXPECT_EQ(c.expR, expected_R(c.cell.N, c.cell.B));
  }
}

TEST(RunGrid, SerialAndParallelAgree) {
  ExperimentConfig cfg = small_config();
  cfg.threads = 1;
  const ExperimentReport serial = run_grid(cfg);
  cfg.threads = 3;
  EXPECT_EQ(run_grid(cfg), serial);
}

TEST(RunGrid, TheoryColumnsIndependentOfAttack) {
  ExperimentConfig cfg = small_config();
  cfg.runs = 1;
  const ExperimentReport q = run_grid(cfg);
  cfg.attack = AttackKind::none;
  const ExperimentReport n = run_grid(cfg);
  for (std::size_t i = 0; i < q.cells.size(); ++i) {
    EXPECT_EQ(q.cells[i].expA, n.cells[i].expA);
    EXPECT_EQ(q.cells[i].expP, n.cells[i].expP);
    EXPECT_EQ(q.cells[i].expR, n.cells[i].expR);
  }
}

TEST(RunGrid, MaskAndGradientEvaluationAgree) {
  ExperimentConfig cfg = small_config();
  const ExperimentReport mask = run_grid(cfg);
  cfg.eval = EvalMode::gradient;
  const ExperimentReport grad = run_grid(cfg);
  for (std::size_t i = 0; i < mask.cells.size(); ++i) {
    EXPECT_EQ(grad.cells[i].run_R, mask.cells[i].run_R);
    EXPECT_EQ(grad.cells[i].run_A, mask.cells[i].run_A);
    EXPECT_GT(grad.cells[i].isolated_checked, 0u);
    EXPECT_LE(grad.cells[i].max_isolated_error, 1e-6);
  }
}

TEST(RunGrid, SyntheticQbiRecallHigh) {
  ExperimentConfig cfg;
  cfg.grid = {{200, 20}};
  const ExperimentReport r = run_grid(cfg);
  EXPECT_NEAR(r.cells[0].R.mean, 0.977, 0.02);
}

TEST(RunGrid, BenignModelLeaksOnlyForTinyBatches) {
  // Zero bias: each neuron fires for about half the batch, so it isolates a
  // sample with probability B / 2^B. At B = 2 that is 1/2 per neuron.
  ExperimentConfig cfg;
  cfg.attack = AttackKind::none;
  cfg.grid = {{200, 2}, {200, 20}};
  cfg.runs = 2;
  const ExperimentReport r = run_grid(cfg);
  EXPECT_GT(r.cells[0].R.mean, 0.99);
  EXPECT_LT(r.cells[1].R.mean, 0.05);
}

TEST(RunGrid, AggpZeroesRecall) {
  ExperimentConfig cfg = small_config();
  cfg.defense = DefenseKind::aggp;
  for (const auto& c : run_grid(cfg).cells) EXPECT_EQ(c.R.mean, 0.0);
}

TEST(RunGrid, NormalizationModesRun) {
  ExperimentConfig cfg = small_config();
  cfg.eval = EvalMode::gradient;
  for (NormMode mode : {NormMode::batch_norm, NormMode::layer_norm}) {
    cfg.normalization = mode;
    const ExperimentReport r = run_grid(cfg);
    for (const auto& c : r.cells) {
      EXPECT_GT(c.R.mean, 0.0) << to_string(mode);
      EXPECT_LE(c.max_isolated_error, 1e-6);
    }
  }
}

TEST(RunGrid, TokenDataset) {
  ExperimentConfig cfg;
  cfg.dataset.name = "tokens";
  cfg.dataset.seq_len = 20;
  cfg.dataset.embed_dim = 10;
  cfg.dataset.vocab = 300;
  cfg.grid = {{100, 20}};
  cfg.runs = 2;
  cfg.batches_per_run = 2;
  cfg.eval = EvalMode::gradient;
  const ExperimentReport r = run_grid(cfg);
  EXPECT_GT(r.cells[0].R.mean, 0.5);
}

TEST(Report, CsvLayout) {
  ExperimentConfig cfg;
  cfg.runs = 2;
  cfg.batches_per_run = 1;
  const std::string csv = report_to_csv(run_grid(cfg));
  std::istringstream in(csv);
  std::string line;
  std::getline(in, line);
  EXPECT_EQ(line,
            "N,B,attack,defense,A_mean,A_ci,P_mean,P_ci,R_mean,R_ci,expA,expP,expR,"
            "runs,seed");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  EXPECT_EQ(rows, 12);
  EXPECT_EQ(csv.find('\r'), std::string::npos);
}

TEST(Report, SameSeedSameBytes) {
  const auto a = report_to_csv(run_grid(small_config()));
  const auto b = report_to_csv(run_grid(small_config()));
  EXPECT_EQ(a, b);
  ExperimentConfig other = small_config();
  other.base_seed = 18;
  EXPECT_NE(report_to_csv(run_grid(other)), a);
}

TEST(Report, JsonRoundTrip) {
  const ExperimentReport r = run_grid(small_config());
  const ExperimentReport back = report_from_json(report_to_json(r));
  EXPECT_EQ(back, r);
  EXPECT_THROW(report_from_json("{}"), std::invalid_argument);
}

TEST(Report, UnwritablePathThrows) {
  const ExperimentReport r = run_grid(small_config());
  EXPECT_THROW(emit_report(r, ReportFormat::csv, "/proc/gradleak/x.csv"), std::runtime_error);
}

TEST(RunSeeds, DistinctPerCellAndRun) {
  EXPECT_NE(run_seed(0, 0, 1), run_seed(0, 1, 0));
  EXPECT_NE(run_seed(0, 0, 0), run_seed(1, 0, 0));
  EXPECT_EQ(run_seed(5, 2, 3), run_seed(5, 2, 3));
}

TEST(Cli, BoundsPrintsClosedForms) {
  const CliResult r = run_cli("bounds --N 1000 --B 200");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("expR 0.842"), std::string::npos) << r.out;
}

TEST(Cli, BadFlagsExitTwo) {
  EXPECT_EQ(run_cli("bounds --N 5").code, 2);
  EXPECT_EQ(run_cli("run --attack magic").code, 2);
  EXPECT_EQ(run_cli("run --N 200").code, 2);
  EXPECT_EQ(run_cli("frobnicate").code, 2);
  EXPECT_EQ(run_cli("").code, 2);
}

TEST(Cli, RuntimeFailureExitsOne) {
  EXPECT_EQ(run_cli("run --dataset cifar10 --data-dir /nonexistent --N 200 --B 20").code, 1);
}

TEST(Cli, RunWithConfigWritesReports) {
  const auto csv = temp_path("cfg_out.csv");
  const auto js = temp_path("cfg_out.json");
  std::filesystem::remove(csv);
  std::filesystem::remove(js);
  ExperimentConfig cfg = small_config();
  cfg.csv_out = csv.string();
  cfg.json_out = js.string();
  const auto cfg_path = temp_path("cfg.json");
  std::ofstream(cfg_path) << config_to_json(cfg);
  EXPECT_EQ(run_cli("run --config " + cfg_path.string()).code, 0);
  EXPECT_TRUE(std::filesystem::exists(csv));
  EXPECT_TRUE(std::filesystem::exists(js));
  EXPECT_EQ(slurp(csv), report_to_csv(run_grid(cfg)));
}

TEST(Cli, ExtractDemoRecoversMostSamples) {
  const auto dir = temp_path("extract");
  std::filesystem::remove_all(dir);
  const CliResult r =
      run_cli("extract-demo --dataset synthetic --N 200 --B 20 --out " + dir.string());
  EXPECT_EQ(r.code, 0);
  unsigned recovered = 0, batch = 0;
  const auto pos = r.out.find("recovered ");
  ASSERT_NE(pos, std::string::npos) << r.out;
  ASSERT_EQ(std::sscanf(r.out.c_str() + pos, "recovered %u/%u", &recovered, &batch), 2);
  EXPECT_EQ(batch, 20u);
  EXPECT_GE(recovered, 17u);
  EXPECT_TRUE(std::filesystem::exists(dir / "candidates.bin"));
  std::size_t images = 0;
  for (const auto& e : std::filesystem::directory_iterator(dir)) {
    images += e.path().extension() == ".ppm";
  }
  EXPECT_EQ(images, recovered);
}

TEST(Cli, PruneDemoReportsZeroRecall) {
  const CliResult r = run_cli("prune-demo --N 500 --B 100");
  EXPECT_EQ(r.code, 0);
  EXPECT_NE(r.out.find("with aggp:    R = 0.0000"), std::string::npos) << r.out;
}
