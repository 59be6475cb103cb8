#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "miranda/data/csv.hpp"
#include "miranda/data/splits.hpp"
#include "miranda/eval/report.hpp"
#include "miranda/experiment/config.hpp"
#include "miranda/model/checkpoint.hpp"
#include "miranda/train/thermal.hpp"
#include "miranda/train/trainer.hpp"

namespace miranda {

struct Dataset {
  std::vector<SampleRecord> records;
  std::vector<std::string> species;  // display names
};

inline Dataset load_dataset(const ExperimentConfig& cfg, unsigned jobs = 1) {
  Dataset d;
  if (cfg.csv) {
    d.records = csv_read(*cfg.csv);
    if (d.records.empty()) throw Error("dataset " + *cfg.csv + " has no rows");
    for (std::size_t s = 0; s < d.records[0].labels.size(); ++s) d.species.push_back("species_" + std::to_string(s + 1));
  } else {
    d.records = generate_dataset(cfg.climate, cfg.species, cfg.data_seed, jobs);
    for (const auto& s : cfg.species) d.species.push_back(s.name);
  }
  return d;
}

inline Split make_split(const std::vector<SampleRecord>& records, const SplitSpec& s) {
  if (s.kind == "elevation") return split_by_elevation(records, s.test(), s.val());
  if (s.kind == "annual-temp") return split_by_annual_temp(records, s.test(), s.val());
  if (s.kind == "random") return split_random(records, s.test(), s.val(), s.seed);
  if (s.kind == "chronological") return split_chronological(records, s.train_end, s.val_end);
  throw Error("unknown split kind '" + s.kind + "'");
}

/// Everything a run needs, built once per experiment. The adaptation pool is
/// the unlabeled inputs of validation and test.
struct ExperimentData {
  Dataset data;
  Split split;
  PreparedSet train, val, test, pool;
};

inline ExperimentData prepare_experiment(const ExperimentConfig& cfg, unsigned jobs = 1) {
  ExperimentData e;
  e.data = load_dataset(cfg, jobs);
  e.split = make_split(e.data.records, cfg.split);
  const Guidance g = cfg.train.guidance;
  e.train = prepare(e.data.records, e.split.train, g);
  e.val = prepare(e.data.records, e.split.val, g);
  e.test = prepare(e.data.records, e.split.test, g);
  std::vector<std::size_t> pool = e.split.val;
  pool.insert(pool.end(), e.split.test.begin(), e.split.test.end());
  e.pool = prepare(e.data.records, pool, g);
  return e;
}

inline std::string split_label(const SplitSpec& s) { return s.kind; }

inline std::string run_name(Method m, std::uint64_t seed) {
  return std::string(to_string(m)) + "-seed" + std::to_string(seed);
}

struct RunOutcome {
  Method method = Method::kVanilla;
  std::uint64_t seed = 0;
  std::vector<MetricRow> rows;  // test metrics per species
  std::vector<EpochRecord> curve;
  std::size_t selected_epoch = 0;
  std::optional<std::string> error;
  std::optional<PhenoFormer> model;  // neural methods only
  Tensor test_pred;
};

inline std::vector<MetricRow> metric_rows(const Tensor& truth, const Tensor& pred, const std::vector<std::string>& species,
                                          const std::string& method, const std::string& split, std::uint64_t seed) {
  std::vector<MetricRow> rows;
  for (const auto& [s, m] : per_species_metrics(truth, pred)) rows.push_back({method, split, species.at(s), seed, m});
  return rows;
}

inline json metrics_json(const std::vector<MetricRow>& rows) {
  json j = json::object();
  for (const auto& r : rows) j[r.species] = {{"r2", r.m.r2}, {"rmse", r.m.rmse}, {"mae", r.m.mae}, {"n", r.m.n}};
  return j;
}

inline void write_json(const json& j, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string());
  os << j.dump(2) << '\n';
  if (!os) throw Error("write failed for " + path.string());
}

inline void write_epoch_csv(const std::vector<EpochRecord>& curve, const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw Error("cannot open " + path.string());
  os << "epoch,train_mse,train_rank,val_rmse\n";
  for (const auto& e : curve) {
    os << e.epoch << ',' << detail::format_double(e.train_mse) << ',' << detail::format_double(e.train_adv) << ','
       << detail::format_double(e.val_rmse) << '\n';
  }
}

/// One (method, seed) cell. With a non-empty `dir` the run directory gets
/// config.json, metrics.csv, checkpoint.json and result.json.
inline RunOutcome run_one(const ExperimentConfig& cfg, const ExperimentData& e, Method method, std::uint64_t seed,
                          const std::filesystem::path& dir = {}) {
  RunOutcome out;
  out.method = method;
  out.seed = seed;
  TrainConfig tc = cfg.train;
  tc.method = method;
  tc.seed = seed;
  const std::string split = split_label(cfg.split);
  json result = {{"method", to_string(method)}, {"seed", seed}, {"split", split}};
  if (!dir.empty()) {
    std::filesystem::create_directories(dir);
    json c = to_json(cfg);
    c.erase("methods");
    c.erase("seeds");
    c["train"] = to_json(tc);
    write_json(c, dir / "config.json");
  }
  try {
    if (method == Method::kThermalTime) {
      ThermalGrid grid{tc.tbase_min, tc.tbase_max, tc.tbase_step, tc.forcing_min, tc.forcing_max, tc.forcing_step};
      const auto train = select(e.data.records, e.split.train);
      const ThermalFit fit = fit_thermal_time(train, e.test.species(), grid);
      for (const auto& w : fit.warnings) std::cerr << "warning: " << w << '\n';
      out.test_pred = predict_thermal_time(select(e.data.records, e.split.test), fit.params);
      json params = json::object();
      for (std::size_t s = 0; s < fit.params.size(); ++s) {
        if (fit.params[s]) params[e.data.species[s]] = {{"t_base", fit.params[s]->t_base}, {"forcing", fit.params[s]->forcing}};
      }
      result["params"] = params;
    } else {
      RunResult r = fit(tc, e.train, e.val, e.pool);
      out.curve = r.curve;
      out.selected_epoch = r.selected_epoch;
      out.test_pred = predict_target(r.model, e.test.x, &e.pool.x);
      result["selected_epoch"] = r.selected_epoch;
      result["epochs_trained"] = r.epochs_trained;
      result["source_samples"] = r.source_samples;
      result["dropped_unlabeled"] = r.dropped_unlabeled;
      if (!dir.empty()) {
        write_epoch_csv(r.curve, dir / "metrics.csv");
        save_checkpoint(r.model, (dir / "checkpoint.json").string());
      }
      out.model = std::move(r.model);
    }
    out.rows = metric_rows(e.test.y, out.test_pred, e.data.species, to_string(method), split, seed);
    result["test"] = metrics_json(out.rows);
  } catch (const std::exception& ex) {
    out.error = ex.what();
    result["error"] = ex.what();
  }
  if (!dir.empty()) write_json(result, dir / "result.json");
  return out;
}

struct ExperimentResult {
  std::vector<RunOutcome> runs;  // (method, seed) in config order
  std::vector<MetricRow> rows;
  std::string report;

  /// Methods whose every run failed.
  std::vector<Method> failed_methods() const {
    std::vector<Method> out;
    for (std::size_t i = 0; i < runs.size();) {
      std::size_t j = i;
      bool any_ok = false;
      while (j < runs.size() && runs[j].method == runs[i].method) any_ok |= !runs[j++].error;
      if (!any_ok) out.push_back(runs[i].method);
      i = j;
    }
    return out;
  }
};

/// Runs every (method, seed) cell on up to `jobs` threads. Results do not
/// depend on `jobs`. With write_files, the output directory receives one run
/// directory per cell plus cells.csv, report.txt and config.json.
inline ExperimentResult run_experiment(const ExperimentConfig& cfg, const ExperimentData& data, unsigned jobs = 1,
                                       bool write_files = true, std::ostream* log = nullptr) {
  cfg.validate();
  const std::filesystem::path out_dir = cfg.out;
  if (write_files) {
    std::filesystem::create_directories(out_dir / "runs");
    write_json(to_json(cfg), out_dir / "config.json");
  }
  std::vector<std::pair<Method, std::uint64_t>> cells;
  for (Method m : cfg.methods)
    for (std::uint64_t s : cfg.seeds) cells.emplace_back(m, s);

  ExperimentResult res;
  res.runs.resize(cells.size());
  std::atomic<std::size_t> next{0};
  std::mutex log_mutex;
  auto worker = [&] {
    for (std::size_t i = next++; i < cells.size(); i = next++) {
      const auto [m, s] = cells[i];
      const auto dir = write_files ? out_dir / "runs" / run_name(m, s) : std::filesystem::path{};
      res.runs[i] = run_one(cfg, data, m, s, dir);
      if (log) {
        std::lock_guard lock(log_mutex);
        *log << run_name(m, s) << ": ";
        if (res.runs[i].error) {
          *log << "FAILED: " << *res.runs[i].error << '\n';
        } else {
          double r2 = 0.0;
          for (const auto& r : res.runs[i].rows) r2 += r.m.r2 / static_cast<double>(res.runs[i].rows.size());
          *log << "test R2 " << r2 << '\n';
        }
      }
    }
  };
  {
    std::vector<std::jthread> pool;
    const unsigned n = std::max(1u, std::min<unsigned>(jobs, static_cast<unsigned>(cells.size())));
    for (unsigned t = 1; t < n; ++t) pool.emplace_back(worker);
    worker();
  }
  for (const auto& r : res.runs) res.rows.insert(res.rows.end(), r.rows.begin(), r.rows.end());
  res.report = res.rows.empty() ? std::string("# no successful runs\n") : format_report(res.rows);
  if (write_files) {
    write_cells_csv(res.rows, (out_dir / "cells.csv").string());
    std::ofstream os(out_dir / "report.txt");
    os << res.report;
  }
  return res;
}

struct SplitEvaluation {
  Tensor pred;
  std::vector<MetricRow> rows;
};

/// Scores a trained model on one split of the experiment data. The model must
/// match the data's (C, T, S).
inline SplitEvaluation evaluate_split(const PhenoFormer& model, const ExperimentData& data, const std::string& split) {
  const PreparedSet* set = split == "test"  ? &data.test
                           : split == "val" ? &data.val
                           : split == "train" ? &data.train
                                              : nullptr;
  if (set == nullptr) throw Error("evaluate: split must be train, val or test, got '" + split + "'");
  const ModelConfig& mc = model.config();
  if (mc.channels != set->channels() || mc.seq_len != set->seq_len() || mc.species != set->species()) {
    throw Error("evaluate: checkpoint expects (C, T, S) = (" + std::to_string(mc.channels) + ", " +
                std::to_string(mc.seq_len) + ", " + std::to_string(mc.species) + ") but the data has (" +
                std::to_string(set->channels()) + ", " + std::to_string(set->seq_len()) + ", " +
                std::to_string(set->species()) + ")");
  }
  SplitEvaluation ev;
  ev.pred = predict_target(model, set->x, &data.pool.x);
  ev.rows = metric_rows(set->y, ev.pred, data.data.species, "eval", split, 0);
  return ev;
}

/// Mean test temperature and date minus the training means, per split.
struct ShiftStats {
  std::string split;
  double delta_t = 0.0;     // deg C
  double delta_date = 0.0;  // days, over all labeled species entries
};

inline ShiftStats shift_stats(const std::vector<SampleRecord>& records, const Split& s, std::string name) {
  auto means = [&](const std::vector<std::size_t>& idx) {
    double t = 0.0, d = 0.0;
    std::size_t nd = 0;
    for (std::size_t i : idx) {
      t += records[i].mean_temperature();
      for (const auto& y : records[i].labels)
        if (y) {
          d += *y;
          ++nd;
        }
    }
    return std::make_pair(t / static_cast<double>(idx.size()), nd ? d / static_cast<double>(nd) : NAN);
  };
  const auto [t_train, d_train] = means(s.train);
  const auto [t_test, d_test] = means(s.test);
  return {std::move(name), t_test - t_train, d_test - d_train};
}

}  // namespace miranda
