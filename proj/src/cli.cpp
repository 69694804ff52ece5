// SPDX-License-Identifier: Apache-2.0

#include "gradleak/cli.hpp"

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>

#include "CLI11.hpp"
#include "gradleak/experiment.hpp"

namespace gradleak {
namespace {

// Thrown for flag combinations CLI11 cannot express; maps to exit code 2.
struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct CommonFlags {
  std::string config;
  std::string dataset;
  std::string data_dir;
  std::optional<std::size_t> N, B;
  std::string attack, defense, normalization, eval;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> runs, batches, threads;
  std::string out;
  std::string format = "csv";
};

const std::vector<std::string> kAttackNames{"qbi", "pairs", "trap_weights", "none"};
const std::vector<std::string> kDefenseNames{"none", "aggp"};
const std::vector<std::string> kNormNames{"data_norm", "batch_norm", "layer_norm"};

void add_model_flags(CLI::App* cmd, CommonFlags& f) {
  cmd->add_option("--dataset", f.dataset, "synthetic, cifar10 or tokens")
      ->check(CLI::IsMember({"synthetic", "cifar10", "tokens"}));
  cmd->add_option("--data-dir", f.data_dir, "CIFAR-10 binary directory");
  cmd->add_option("--N", f.N, "attack layer width")->check(CLI::PositiveNumber);
  cmd->add_option("--B", f.B, "batch size")->check(CLI::PositiveNumber);
  cmd->add_option("--attack", f.attack)->check(CLI::IsMember(kAttackNames));
  cmd->add_option("--normalization", f.normalization)->check(CLI::IsMember(kNormNames));
  cmd->add_option("--seed", f.seed, "base seed");
}

ExperimentConfig resolve(const CommonFlags& f) {
  ExperimentConfig cfg = f.config.empty() ? ExperimentConfig{} : load_config(f.config);
  if (!f.dataset.empty()) cfg.dataset.name = f.dataset;
  if (!f.data_dir.empty()) cfg.dataset.data_dir = f.data_dir;
  if (!f.attack.empty()) cfg.attack = parse_attack(f.attack);
  if (!f.defense.empty()) cfg.defense = parse_defense(f.defense);
  if (!f.normalization.empty()) cfg.normalization = parse_norm(f.normalization);
  if (!f.eval.empty()) cfg.eval = parse_eval(f.eval);
  if (f.seed) cfg.base_seed = *f.seed;
  if (f.runs) cfg.runs = *f.runs;
  if (f.batches) cfg.batches_per_run = *f.batches;
  if (f.threads) cfg.threads = *f.threads;
  if (f.N.has_value() != f.B.has_value()) throw UsageError("--N and --B go together");
  if (f.N) cfg.grid = {{*f.N, *f.B}};
  cfg.validate();
  return cfg;
}

int cmd_run(const CommonFlags& f) {
  const ExperimentConfig cfg = resolve(f);
  const ExperimentReport report = run_grid(cfg);
  std::fprintf(stderr, "%zu cells in %.1f s\n", report.cells.size(), report.wall_seconds);
  const ReportFormat fmt = f.format == "json" ? ReportFormat::json : ReportFormat::csv;
  bool wrote = false;
  if (!f.out.empty()) {
    emit_report(report, fmt, f.out);
    wrote = true;
  } else {
    if (!cfg.csv_out.empty()) {
      emit_report(report, ReportFormat::csv, cfg.csv_out);
      wrote = true;
    }
    if (!cfg.json_out.empty()) {
      emit_report(report, ReportFormat::json, cfg.json_out);
      wrote = true;
    }
  }
  if (!wrote) {
    std::cout << (fmt == ReportFormat::json ? report_to_json(report)
                                            : report_to_csv(report));
  }
  return 0;
}

int cmd_bounds(std::size_t N, std::size_t B) {
  const BoundSet s = bounds(N, B);
  std::printf("N %zu B %zu\n", N, B);
  std::printf("expA %.4f\nexpP %.4f\nexpR %.4f\n", s.p_A, s.p_u, s.p_R);
  std::printf("limA %.4f\nlimP %.4f\n", s.limit_A, s.limit_u);
  return 0;
}

struct Demo {
  ExperimentConfig cfg;
  std::unique_ptr<DataProvider> data;
  MaliciousModel model;
  Batch batch;
  RngStream defense_rng{0};
};

Demo prepare_demo(const CommonFlags& f) {
  CommonFlags g = f;
  if (!g.N) g.N = 200;
  if (!g.B) g.B = 20;
  Demo d;
  d.cfg = resolve(g);
  d.cfg.eval = EvalMode::gradient;
  d.data = make_provider(d.cfg.dataset, d.cfg.base_seed);
  RngStream run(run_seed(d.cfg.base_seed, 0, 0));
  d.model = build_model(d.cfg, *d.data, d.cfg.grid.front(), run);
  RngStream data_rng = run.split(kDataStream);
  d.batch = std::move(d.data->target_batches(1, d.cfg.grid.front().B, data_rng).front());
  d.batch.x = preprocess(d.cfg, *d.data, std::move(d.batch.x));
  d.defense_rng = run.split(kDefenseStream);
  return d;
}

int cmd_extract(const CommonFlags& f) {
  Demo d = prepare_demo(f);
  BatchOutcome o = evaluate_batch(d.cfg, d.model, d.batch, d.defense_rng);
  const std::size_t B = d.batch.x.rows();
  std::printf("candidates %zu, recovered %zu/%zu samples (R = %.4f)\n",
              o.candidates.size(), o.counts.recovered, B, o.counts.recall());

  const std::filesystem::path dir = f.out.empty() ? "extract_demo" : f.out;
  std::filesystem::create_directories(dir);
  write_candidates(dir / "candidates.bin", o.candidates);

  const auto shape = d.data->image_shape();
  std::size_t exported = 0;
  if (shape) {
    std::vector<bool> done(B, false);
    for (std::size_t k = 0; k < o.candidates.size(); ++k) {
      if (!o.candidates.matched[k]) continue;
      const auto sample = static_cast<std::size_t>(o.candidates.matched_sample[k]);
      if (done[sample]) continue;
      done[sample] = true;
      std::vector<double> px = o.candidates.candidates[k].values;
      if (d.cfg.normalization == NormMode::data_norm) {
        Matrix row(1, px.size(), px);
        denormalize_rows(row, d.data->stats());
        px.assign(row.data().begin(), row.data().end());
      } else if (d.cfg.normalization == NormMode::layer_norm) {
        px = invert_layernorm(px, d.data->stats());
      }
      char name[64];
      std::snprintf(name, sizeof name, "sample_%03ld_neuron_%04zu.%s",
                    o.candidates.matched_sample[k], o.candidates.candidates[k].neuron,
                    shape->channels == 1 ? "pgm" : "ppm");
      write_pnm(dir / name, px, *shape);
      ++exported;
    }
  }
  std::printf("wrote %s and %zu images\n", (dir / "candidates.bin").c_str(), exported);
  return 0;
}

int cmd_prune(const CommonFlags& f) {
  Demo d = prepare_demo(f);
  d.cfg.defense = DefenseKind::none;
  RngStream rng_a = d.defense_rng;
  const BatchOutcome before = evaluate_batch(d.cfg, d.model, d.batch, rng_a);
  d.cfg.defense = DefenseKind::aggp;
  RngStream rng_b = d.defense_rng;
  const BatchOutcome after = evaluate_batch(d.cfg, d.model, d.batch, rng_b);
  std::printf("without aggp: R = %.4f (%zu candidates)\n", before.counts.recall(),
              before.candidates.size());
  std::printf("with aggp:    R = %.4f (%zu candidates)\n", after.counts.recall(),
              after.candidates.size());
  if (after.aggp) {
    std::printf("rows pruned %zu, untouched %zu, bias zeroed %zu, entries kept %zu\n",
                after.aggp->rows_pruned, after.aggp->rows_untouched,
                after.aggp->bias_zeroed, after.aggp->entries_kept);
  }
  return 0;
}

}  // namespace

int cli_main(int argc, char** argv) {
  CLI::App app{"Gradient sparsity attack simulator"};
  app.require_subcommand(1);

  CommonFlags run_f, extract_f, prune_f;
  std::size_t bN = 0, bB = 0;

  auto* run = app.add_subcommand("run", "run an experiment grid");
  run->add_option("--config", run_f.config, "JSON experiment config")
      ->check(CLI::ExistingFile);
  add_model_flags(run, run_f);
  run->add_option("--defense", run_f.defense)->check(CLI::IsMember(kDefenseNames));
  run->add_option("--eval", run_f.eval)->check(CLI::IsMember({"mask", "gradient"}));
  run->add_option("--runs", run_f.runs)->check(CLI::PositiveNumber);
  run->add_option("--batches", run_f.batches)->check(CLI::PositiveNumber);
  run->add_option("--threads", run_f.threads);
  run->add_option("--out", run_f.out, "report file (default: stdout)");
  run->add_option("--format", run_f.format)->check(CLI::IsMember({"csv", "json"}));

  auto* bnd = app.add_subcommand("bounds", "closed-form A, P, R");
  bnd->add_option("--N", bN)->required()->check(CLI::NonNegativeNumber);
  bnd->add_option("--B", bB)->required()->check(CLI::PositiveNumber);

  auto* ext = app.add_subcommand("extract-demo", "one attack and extraction");
  add_model_flags(ext, extract_f);
  ext->add_option("--out", extract_f.out, "output directory");

  auto* prn = app.add_subcommand("prune-demo", "leakage with and without AGGP");
  add_model_flags(prn, prune_f);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*run) return cmd_run(run_f);
    if (*bnd) return cmd_bounds(bN, bB);
    if (*ext) return cmd_extract(extract_f);
    if (*prn) return cmd_prune(prune_f);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}

}  // namespace gradleak
