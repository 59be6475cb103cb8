#pragma once

#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "miranda/data/csv.hpp"
#include "miranda/eval/metrics.hpp"

namespace miranda {

inline constexpr const char* kCellsHeader = "method,split,species,seed,n,r2,rmse,mae";

inline void write_cells_csv(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_cells_csv: cannot open " + path);
  os << kCellsHeader << '\n';
  for (const auto& r : rows) {
    os << r.method << ',' << r.split << ',' << r.species << ',' << r.seed << ',' << r.m.n << ','
       << detail::format_double(r.m.r2) << ',' << detail::format_double(r.m.rmse) << ','
       << detail::format_double(r.m.mae) << '\n';
  }
  if (!os) throw Error("write_cells_csv: write failed for " + path);
}

inline std::vector<MetricRow> read_cells_csv(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_cells_csv: cannot open " + path);
  std::string line;
  if (!std::getline(is, line) || line != kCellsHeader) {
    throw Error("read_cells_csv: " + path + ": unexpected header");
  }
  std::vector<MetricRow> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != 8) detail::csv_fail(path, lineno, "expected 8 fields");
    MetricRow r;
    r.method = std::string(f[0]);
    r.split = std::string(f[1]);
    r.species = std::string(f[2]);
    r.seed = detail::parse_field<std::uint64_t>(f[3], path, lineno, "seed");
    r.m.n = detail::parse_field<std::size_t>(f[4], path, lineno, "n");
    r.m.r2 = detail::parse_field<double>(f[5], path, lineno, "r2");
    r.m.rmse = detail::parse_field<double>(f[6], path, lineno, "rmse");
    r.m.mae = detail::parse_field<double>(f[7], path, lineno, "mae");
    out.push_back(std::move(r));
  }
  return out;
}

/// Text table: one line per (method, split) with R^2 (std), RMSE, MAE.
inline std::string format_report(const std::vector<MetricRow>& rows) {
  std::ostringstream os;
  os << "# Test metrics averaged over seeds and species.\n"
     << "# std: sample standard deviation (n-1) of R^2 over (seed, species) cells;\n"
     << "# seed-std: sample standard deviation over seeds of the species-mean R^2.\n";
  char buf[256];
  std::snprintf(buf, sizeof buf, "%-14s %-16s %8s %8s %9s %8s %8s %6s %5s\n", "method", "split", "R2", "(std)",
                "seed-std", "RMSE", "MAE", "cells", "seeds");
  os << buf;
  for (const auto& [method, split, s] : aggregate_by_cell(rows)) {
    std::snprintf(buf, sizeof buf, "%-14s %-16s %8.4f %8.4f %9.4f %8.3f %8.3f %6zu %5zu\n", method.c_str(),
                  split.c_str(), s.r2, s.r2_std, s.r2_seed_std, s.rmse, s.mae, s.cells, s.seeds);
    os << buf;
  }
  return os.str();
}

inline void write_report(const std::vector<MetricRow>& rows, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("write_report: cannot open " + path);
  os << format_report(rows);
}

struct ScatterPoint {
  double truth = 0.0;
  double pred = 0.0;
  std::string species;
};

/// (true, pred, species) rows for plotting; only labeled entries of (N, S)
/// truths are emitted.
inline std::vector<ScatterPoint> scatter_points(const Tensor& truth, const Tensor& pred,
                                                const std::vector<std::string>& species) {
  if (truth.shape() != pred.shape() || truth.dim(1) != species.size()) {
    throw_shape("scatter_points", truth.shape(), pred.shape());
  }
  std::vector<ScatterPoint> out;
  const std::size_t N = truth.dim(0), S = truth.dim(1);
  for (std::size_t i = 0; i < N; ++i)
    for (std::size_t s = 0; s < S; ++s)
      if (!std::isnan(truth[i * S + s])) out.push_back({truth[i * S + s], pred[i * S + s], species[s]});
  return out;
}

inline void emit_scatter(const std::vector<ScatterPoint>& points, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("emit_scatter: cannot open " + path);
  os << "# identity reference: pred = true (slope 1, intercept 0)\n";
  os << "true,pred,species\n";
  for (const auto& p : points) {
    os << detail::format_double(p.truth) << ',' << detail::format_double(p.pred) << ',' << p.species << '\n';
  }
  if (!os) throw Error("emit_scatter: write failed for " + path);
}

inline std::vector<ScatterPoint> read_scatter(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("read_scatter: cannot open " + path);
  std::string line;
  std::vector<ScatterPoint> out;
  std::size_t lineno = 0;
  bool header = false;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header) {
      if (line != "true,pred,species") detail::csv_fail(path, lineno, "unexpected header");
      header = true;
      continue;
    }
    const auto f = detail::split_fields(line);
    if (f.size() != 3) detail::csv_fail(path, lineno, "expected 3 fields");
    out.push_back({detail::parse_field<double>(f[0], path, lineno, "true"),
                   detail::parse_field<double>(f[1], path, lineno, "pred"), std::string(f[2])});
  }
  return out;
}

}  // namespace miranda
