#pragma once

#include <algorithm>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "miranda/data/synthdata.hpp"

namespace miranda {

struct ThermalGrid {
  double tbase_min = 0.0, tbase_max = 5.0, tbase_step = 0.5;
  double forcing_min = 100.0, forcing_max = 400.0, forcing_step = 10.0;
  std::size_t start = 100;

  static std::vector<double> axis(double lo, double hi, double step) {
    if (!(step > 0.0) || hi < lo) throw Error("ThermalGrid: bad axis");
    std::vector<double> v;
    for (std::size_t k = 0;; ++k) {
      const double x = lo + static_cast<double>(k) * step;
      if (x > hi + 1e-9 * step) break;
      v.push_back(x);
    }
    return v;
  }
  std::vector<double> tbases() const { return axis(tbase_min, tbase_max, tbase_step); }
  std::vector<double> forcings() const { return axis(forcing_min, forcing_max, forcing_step); }
};

/// Day-of-year predicted by a thermal-time model; the last covered day when
/// the requirement is never met.
inline double thermal_prediction(const Tensor& x, const SpeciesParams& p) {
  const auto idx = gdd_date(temperature_series(x), p);
  return day_of_year(idx ? *idx : x.dim(1) - 1);
}

struct ThermalFit {
  std::vector<std::optional<SpeciesParams>> params;  // empty for skipped species
  std::vector<double> train_rmse;                    // NaN for skipped species
  std::vector<std::string> warnings;
};

/// Per species, the grid point (T_base, F*) with the lowest training RMSE;
/// ties go to the first point in (T_base, F*) order.
inline ThermalFit fit_thermal_time(const std::vector<SampleRecord>& train, std::size_t species,
                                   const ThermalGrid& grid = {}) {
  const auto tbases = grid.tbases();
  const auto forcings = grid.forcings();
  ThermalFit fit;
  fit.params.resize(species);
  fit.train_rmse.assign(species, NAN);
  std::vector<double> best_sse(species, INFINITY);
  std::vector<std::size_t> labeled(species, 0);
  for (const auto& r : train)
    for (std::size_t s = 0; s < species && s < r.labels.size(); ++s) labeled[s] += r.labels[s].has_value();

  // cum[i][d]: degree-days from start through day start + d for sample i.
  std::vector<std::vector<double>> cum(train.size());
  for (double tb : tbases) {
    for (std::size_t i = 0; i < train.size(); ++i) {
      const auto t = temperature_series(train[i].x);
      auto& c = cum[i];
      c.assign(t.size() > grid.start ? t.size() - grid.start : 0, 0.0);
      double acc = 0.0;
      for (std::size_t d = grid.start; d < t.size(); ++d) {
        acc += std::max(t[d] - tb, 0.0);
        c[d - grid.start] = acc;
      }
    }
    for (double fstar : forcings) {
      std::vector<double> sse(species, 0.0);
      for (std::size_t i = 0; i < train.size(); ++i) {
        const auto& c = cum[i];
        const auto it = std::lower_bound(c.begin(), c.end(), fstar);
        const std::size_t idx = it == c.end() ? train[i].x.dim(1) - 1 : grid.start + static_cast<std::size_t>(it - c.begin());
        const double pred = day_of_year(idx);
        for (std::size_t s = 0; s < species; ++s) {
          if (!train[i].labels[s]) continue;
          const double e = pred - *train[i].labels[s];
          sse[s] += e * e;
        }
      }
      for (std::size_t s = 0; s < species; ++s) {
        if (labeled[s] == 0 || !(sse[s] < best_sse[s])) continue;
        best_sse[s] = sse[s];
        fit.params[s] = SpeciesParams{"species_" + std::to_string(s + 1), tb, fstar, grid.start, 0.0};
      }
    }
  }
  for (std::size_t s = 0; s < species; ++s) {
    if (labeled[s] == 0) {
      fit.warnings.push_back("fit_thermal_time: species " + std::to_string(s + 1) + " has no labels; skipped");
      continue;
    }
    fit.train_rmse[s] = std::sqrt(best_sse[s] / static_cast<double>(labeled[s]));
  }
  return fit;
}

/// (N, S) predicted dates; NaN for skipped species.
inline Tensor predict_thermal_time(const std::vector<SampleRecord>& records,
                                   const std::vector<std::optional<SpeciesParams>>& params) {
  if (records.empty()) throw Error("predict_thermal_time: no records");
  Tensor out({records.size(), params.size()});
  for (std::size_t i = 0; i < records.size(); ++i)
    for (std::size_t s = 0; s < params.size(); ++s)
      out[i * params.size() + s] = params[s] ? thermal_prediction(records[i].x, *params[s]) : NAN;
  return out;
}

}  // namespace miranda
