#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "miranda/experiment/runner.hpp"

namespace fs = std::filesystem;
using namespace miranda;

namespace {

ExperimentConfig config_or_default(const std::string& path) {
  if (path.empty()) {
    ExperimentConfig c;
    c.validate();
    return c;
  }
  return load_experiment(path);
}

void ensure_parent(const std::string& file) {
  const fs::path parent = fs::path(file).parent_path();
  if (!parent.empty()) fs::create_directories(parent);
}

int cmd_generate(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed,
                 unsigned jobs) {
  ExperimentConfig cfg = config_or_default(config);
  if (cfg.csv) throw Error("generate: config reads data from " + *cfg.csv + "; nothing to generate");
  if (seed) cfg.data_seed = *seed;
  const Dataset d = load_dataset(cfg, jobs);
  ensure_parent(out);
  csv_write(d.records, out);

  const auto& c = cfg.climate;
  std::printf("wrote %s\n", out.c_str());
  std::printf("sites %zu, years %d-%d, rows %zu, seed %llu\n", c.sites, c.first_year, c.last_year, d.records.size(),
              static_cast<unsigned long long>(cfg.data_seed));
  std::printf("labels per species:\n");
  for (std::size_t s = 0; s < d.species.size(); ++s) {
    std::size_t n = 0;
    for (const auto& r : d.records) n += r.labels[s].has_value();
    std::printf("  %-16s %zu / %zu\n", d.species[s].c_str(), n, d.records.size());
  }

  std::vector<std::pair<std::string, SplitSpec>> splits;
  for (const char* k : {"elevation", "annual-temp", "random"}) {
    SplitSpec s;
    s.kind = k;
    splits.emplace_back(k, s);
  }
  const int span = c.last_year - c.first_year + 1;
  if (span >= 3) {
    SplitSpec s;
    s.kind = "chronological";
    s.train_end = c.first_year + (span * 7) / 10 - 1;
    s.val_end = std::max(s.train_end + 1, c.first_year + (span * 85) / 100 - 1);
    splits.emplace_back("chronological", s);
  }
  std::printf("shift of test relative to train (mean annual temperature, mean date):\n");
  for (const auto& [name, spec] : splits) {
    try {
      const ShiftStats st = shift_stats(d.records, make_split(d.records, spec), name);
      std::printf("  %-14s dT %+7.3f C   dDate %+7.2f days\n", name.c_str(), st.delta_t, st.delta_date);
    } catch (const Error& e) {
      std::printf("  %-14s unavailable (%s)\n", name.c_str(), e.what());
    }
  }
  return 0;
}

int cmd_run(const std::string& config, const std::string& out, std::optional<std::uint64_t> seed, unsigned jobs) {
  ExperimentConfig cfg = load_experiment(config);
  if (!out.empty()) cfg.out = out;
  if (seed) cfg.seeds = {*seed};
  const ExperimentData data = prepare_experiment(cfg, jobs);
  std::cerr << "train " << data.train.size() << ", val " << data.val.size() << ", test " << data.test.size()
            << " samples\n";
  const ExperimentResult res = run_experiment(cfg, data, jobs, true, &std::cerr);
  std::cout << res.report;
  std::cout << "wrote " << (fs::path(cfg.out) / "report.txt").string() << '\n';
  const auto failed = res.failed_methods();
  for (Method m : failed) std::cerr << "error: every run of method " << to_string(m) << " failed\n";
  return failed.empty() ? 0 : 2;
}

int cmd_eval(const std::string& checkpoint, const std::string& config, const std::string& split,
             const std::string& scatter) {
  const ExperimentConfig cfg = load_experiment(config);
  PhenoFormer model = load_checkpoint(checkpoint);
  const ExperimentData data = prepare_experiment(cfg);
  const SplitEvaluation ev = evaluate_split(model, data, split);
  const auto& rows = ev.rows;
  std::printf("%-16s %6s %10s %10s %10s\n", "species", "n", "R2", "RMSE", "MAE");
  for (const auto& r : rows) {
    std::printf("%-16s %6zu %10.6f %10.6f %10.6f\n", r.species.c_str(), r.m.n, r.m.r2, r.m.rmse, r.m.mae);
  }
  if (!rows.empty()) {
    const Summary s = aggregate(rows);
    std::printf("%-16s %6s %10.6f %10.6f %10.6f\n", "mean", "", s.r2, s.rmse, s.mae);
  }
  const PreparedSet& set = split == "test" ? data.test : split == "val" ? data.val : data.train;
  ensure_parent(scatter);
  emit_scatter(scatter_points(set.y, ev.pred, data.data.species), scatter);
  std::printf("wrote %s\n", scatter.c_str());
  return 0;
}

int cmd_report(const std::string& out) {
  const fs::path dir = out.empty() ? fs::path("runs") : fs::path(out);
  const auto rows = read_cells_csv((dir / "cells.csv").string());
  if (rows.empty()) throw Error("report: " + (dir / "cells.csv").string() + " has no rows");
  write_report(rows, (dir / "report.txt").string());
  std::cout << format_report(rows);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"MIRANDA: rank-adversarial domain adaptation for phenology regression"};
  app.require_subcommand(1);

  std::string config, out, checkpoint, split = "test", scatter;
  std::uint64_t seed = 0;
  unsigned jobs = 1;

  auto* gen = app.add_subcommand("generate", "write a synthetic dataset as CSV and print shift statistics");
  gen->add_option("--config", config, "experiment config (JSON); defaults when omitted")->check(CLI::ExistingFile);
  gen->add_option("--out", out, "output CSV")->required();
  auto* gen_seed = gen->add_option("--seed", seed, "override the data seed");
  gen->add_option("--jobs", jobs, "generator threads")->check(CLI::PositiveNumber);

  auto* run = app.add_subcommand("run", "train and evaluate every (method, seed) cell");
  run->add_option("--config", config, "experiment config (JSON)")->required()->check(CLI::ExistingFile);
  run->add_option("--out", out, "output directory (overrides the config)");
  auto* run_seed = run->add_option("--seed", seed, "run this single seed instead of the configured list");
  run->add_option("--jobs", jobs, "concurrent runs")->check(CLI::PositiveNumber);

  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint on a split and write scatter data");
  ev->add_option("--checkpoint", checkpoint, "checkpoint.json from a run directory")->required()->check(CLI::ExistingFile);
  ev->add_option("--config", config, "experiment config defining data and split")->required()->check(CLI::ExistingFile);
  ev->add_option("--split", split, "train, val or test")->check(CLI::IsMember({"train", "val", "test"}));
  ev->add_option("--out", scatter, "scatter CSV (true, pred, species)")->required();

  auto* rep = app.add_subcommand("report", "rebuild report.txt from cells.csv");
  rep->add_option("--out", out, "experiment output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*gen) {
      return cmd_generate(config, out, *gen_seed ? std::optional(seed) : std::nullopt, jobs);
    }
    if (*run) return cmd_run(config, out, *run_seed ? std::optional(seed) : std::nullopt, jobs);
    if (*ev) return cmd_eval(checkpoint, config, split, scatter);
    if (*rep) return cmd_report(out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
