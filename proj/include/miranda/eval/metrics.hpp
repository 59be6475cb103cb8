#pragma once

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "miranda/core/tensor.hpp"

namespace miranda {

struct Metrics {
  double r2 = 0.0;
  double rmse = 0.0;
  double mae = 0.0;
  std::size_t n = 0;
};

/// R^2, RMSE and MAE over pairs whose truth is not NaN. R^2 is not clamped.
inline Metrics metrics(std::span<const double> truth, std::span<const double> pred) {
  if (truth.size() != pred.size()) throw Error("metrics: truth and prediction lengths differ");
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (std::isnan(truth[i])) continue;
    sum += truth[i];
    ++n;
  }
  if (n < 2) throw Error("metrics: need at least 2 labeled pairs, got " + std::to_string(n));
  const double mean = sum / static_cast<double>(n);
  double ss_res = 0.0, ss_tot = 0.0, abs_err = 0.0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (std::isnan(truth[i])) continue;
    const double e = truth[i] - pred[i];
    ss_res += e * e;
    abs_err += std::abs(e);
    ss_tot += (truth[i] - mean) * (truth[i] - mean);
  }
  if (ss_tot == 0.0) throw Error("metrics: R^2 undefined for constant truths");
  const double dn = static_cast<double>(n);
  return {1.0 - ss_res / ss_tot, std::sqrt(ss_res / dn), abs_err / dn, n};
}

/// Column s of an (N, S) tensor.
inline std::vector<double> column(const Tensor& t, std::size_t s) {
  const std::size_t N = t.dim(0), S = t.dim(1);
  std::vector<double> out(N);
  for (std::size_t i = 0; i < N; ++i) out[i] = t[i * S + s];
  return out;
}

/// Per-species metrics for (N, S) truths (NaN = missing) and predictions.
/// Species with fewer than 2 labels or constant truths are skipped.
inline std::vector<std::pair<std::size_t, Metrics>> per_species_metrics(const Tensor& truth, const Tensor& pred) {
  if (truth.shape() != pred.shape() || truth.rank() != 2) throw_shape("per_species_metrics", truth.shape(), pred.shape());
  std::vector<std::pair<std::size_t, Metrics>> out;
  for (std::size_t s = 0; s < truth.dim(1); ++s) {
    const auto t = column(truth, s), p = column(pred, s);
    try {
      out.emplace_back(s, metrics(t, p));
    } catch (const Error&) {
    }
  }
  return out;
}

/// Mean over species of per-species RMSE; species with no labels are skipped.
inline double mean_species_rmse(const Tensor& truth, const Tensor& pred) {
  if (truth.shape() != pred.shape()) throw_shape("mean_species_rmse", truth.shape(), pred.shape());
  const std::size_t N = truth.dim(0), S = truth.dim(1);
  double total = 0.0;
  std::size_t species = 0;
  for (std::size_t s = 0; s < S; ++s) {
    double ss = 0.0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < N; ++i) {
      const double y = truth[i * S + s];
      if (std::isnan(y)) continue;
      ss += (y - pred[i * S + s]) * (y - pred[i * S + s]);
      ++n;
    }
    if (n == 0) continue;
    total += std::sqrt(ss / static_cast<double>(n));
    ++species;
  }
  if (species == 0) throw Error("mean_species_rmse: no labels");
  return total / static_cast<double>(species);
}

// ---------------------------------------------------------------------------
// Tables

struct MetricRow {
  std::string method;
  std::string split;
  std::string species;
  std::uint64_t seed = 0;
  Metrics m;

  friend bool operator==(const MetricRow& a, const MetricRow& b) {
    return std::tie(a.method, a.split, a.species, a.seed, a.m.r2, a.m.rmse, a.m.mae, a.m.n) ==
           std::tie(b.method, b.split, b.species, b.seed, b.m.r2, b.m.rmse, b.m.mae, b.m.n);
  }
};

struct Summary {
  double r2 = 0.0, rmse = 0.0, mae = 0.0;
  double r2_std = 0.0;       // sample std over (seed, species) cells
  double r2_seed_std = 0.0;  // sample std over seeds of the per-seed species-mean R^2
  std::size_t cells = 0;
  std::size_t seeds = 0;
};

inline double sample_std(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double m = 0.0;
  for (double x : v) m += x;
  m /= static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

/// Unweighted mean over rows, with sample (n-1) standard deviations.
inline Summary aggregate(const std::vector<MetricRow>& rows) {
  if (rows.empty()) throw Error("aggregate: no rows");
  // Sums run over sorted values so any row order gives bit-identical results.
  auto sorted_mean = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  std::vector<double> r2, rmse, mae;
  std::map<std::uint64_t, std::vector<double>> per_seed;
  for (const auto& r : rows) {
    r2.push_back(r.m.r2);
    rmse.push_back(r.m.rmse);
    mae.push_back(r.m.mae);
    per_seed[r.seed].push_back(r.m.r2);
  }
  Summary s;
  s.r2 = sorted_mean(r2);
  s.rmse = sorted_mean(rmse);
  s.mae = sorted_mean(mae);
  std::sort(r2.begin(), r2.end());
  s.r2_std = sample_std(r2);
  std::vector<double> seed_means;
  for (const auto& [seed, v] : per_seed) seed_means.push_back(sorted_mean(v));
  s.r2_seed_std = sample_std(seed_means);
  s.cells = rows.size();
  s.seeds = per_seed.size();
  return s;
}

/// Summaries keyed by (method, split), in first-appearance order.
inline std::vector<std::tuple<std::string, std::string, Summary>> aggregate_by_cell(
    const std::vector<MetricRow>& rows) {
  std::vector<std::pair<std::string, std::string>> keys;
  std::map<std::pair<std::string, std::string>, std::vector<MetricRow>> groups;
  for (const auto& r : rows) {
    auto key = std::make_pair(r.method, r.split);
    if (!groups.count(key)) keys.push_back(key);
    groups[key].push_back(r);
  }
  std::vector<std::tuple<std::string, std::string, Summary>> out;
  for (const auto& k : keys) out.emplace_back(k.first, k.second, aggregate(groups[k]));
  return out;
}

}  // namespace miranda
