#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "miranda/data/synthdata.hpp"

namespace miranda {

/// Indices into a record list; the three parts partition it.
struct Split {
  std::vector<std::size_t> train, val, test;

  std::size_t size() const { return train.size() + val.size() + test.size(); }
};

namespace detail {

inline void require_nonempty(const Split& s, const char* op) {
  if (s.train.empty() || s.val.empty() || s.test.empty()) {
    throw Error(std::string(op) + ": empty partition (train " + std::to_string(s.train.size()) + ", val " +
                std::to_string(s.val.size()) + ", test " + std::to_string(s.test.size()) + ")");
  }
}

inline void check_fractions(double test_frac, double val_frac, const char* op) {
  if (!(test_frac > 0.0 && val_frac > 0.0 && test_frac + val_frac < 1.0)) {
    throw Error(std::string(op) + ": fractions must be positive and sum below 1");
  }
}

inline std::size_t count_for(double frac, std::size_t n) {
  return static_cast<std::size_t>(std::llround(frac * static_cast<double>(n)));
}

}  // namespace detail

/// year <= train_end -> train, year <= val_end -> val, later -> test.
inline Split split_chronological(const std::vector<SampleRecord>& records, int train_end, int val_end) {
  if (val_end < train_end) throw Error("split_chronological: val_end before train_end");
  Split s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int y = records[i].year;
    (y <= train_end ? s.train : y <= val_end ? s.val : s.test).push_back(i);
  }
  detail::require_nonempty(s, "split_chronological");
  return s;
}

/// Mean temperature per year over all its site-years.
inline std::map<int, double> yearly_mean_temperature(const std::vector<SampleRecord>& records) {
  std::map<int, std::pair<double, std::size_t>> acc;
  for (const auto& r : records) {
    auto& a = acc[r.year];
    a.first += r.mean_temperature();
    ++a.second;
  }
  std::map<int, double> out;
  for (const auto& [y, a] : acc) out[y] = a.first / static_cast<double>(a.second);
  return out;
}

/// Whole years ranked by mean temperature: warmest block -> test, next -> val.
inline Split split_by_annual_temp(const std::vector<SampleRecord>& records, double test_frac = 0.15,
                                  double val_frac = 0.15) {
  detail::check_fractions(test_frac, val_frac, "split_by_annual_temp");
  const auto means = yearly_mean_temperature(records);
  if (means.size() < 3) throw Error("split_by_annual_temp: need at least 3 distinct years");
  std::vector<std::pair<double, int>> ranked;
  for (const auto& [y, t] : means) ranked.emplace_back(t, y);
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second > b.second;
  });
  const std::size_t n_test = detail::count_for(test_frac, ranked.size());
  const std::size_t n_val = detail::count_for(val_frac, ranked.size());
  std::map<int, int> part;  // 0 train, 1 val, 2 test
  for (std::size_t k = 0; k < ranked.size(); ++k) {
    part[ranked[k].second] = k < n_test ? 2 : k < n_test + n_val ? 1 : 0;
  }
  Split s;
  for (std::size_t i = 0; i < records.size(); ++i) {
    const int p = part[records[i].year];
    (p == 2 ? s.test : p == 1 ? s.val : s.train).push_back(i);
  }
  detail::require_nonempty(s, "split_by_annual_temp");
  return s;
}

/// Site-years ranked by elevation (ties: site id, then year): highest block
/// -> test, next -> val.
inline Split split_by_elevation(const std::vector<SampleRecord>& records, double test_frac = 0.25,
                                double val_frac = 0.15) {
  detail::check_fractions(test_frac, val_frac, "split_by_elevation");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    const auto &ra = records[a], &rb = records[b];
    if (ra.elevation != rb.elevation) return ra.elevation > rb.elevation;
    if (ra.site_id != rb.site_id) return ra.site_id < rb.site_id;
    return ra.year < rb.year;
  });
  const std::size_t n_test = detail::count_for(test_frac, order.size());
  const std::size_t n_val = detail::count_for(val_frac, order.size());
  Split s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_test ? s.test : k < n_test + n_val ? s.val : s.train).push_back(order[k]);
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  detail::require_nonempty(s, "split_by_elevation");
  return s;
}

/// Uniformly random site-years, for stationary (no-shift) experiments.
inline Split split_random(const std::vector<SampleRecord>& records, double test_frac, double val_frac,
                          std::uint64_t seed) {
  detail::check_fractions(test_frac, val_frac, "split_random");
  std::vector<std::size_t> order(records.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const std::size_t n_test = detail::count_for(test_frac, order.size());
  const std::size_t n_val = detail::count_for(val_frac, order.size());
  Split s;
  for (std::size_t k = 0; k < order.size(); ++k) {
    (k < n_test ? s.test : k < n_test + n_val ? s.val : s.train).push_back(order[k]);
  }
  for (auto* v : {&s.train, &s.val, &s.test}) std::sort(v->begin(), v->end());
  detail::require_nonempty(s, "split_random");
  return s;
}

inline std::vector<SampleRecord> select(const std::vector<SampleRecord>& records,
                                        const std::vector<std::size_t>& idx) {
  std::vector<SampleRecord> out;
  out.reserve(idx.size());
  for (std::size_t i : idx) out.push_back(records.at(i));
  return out;
}

}  // namespace miranda
