#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "miranda/core/tensor.hpp"

namespace miranda {

inline constexpr std::size_t kChannels = 7;
inline constexpr std::size_t kDays = 365;
inline constexpr int kFirstDay = -100;  // series index 0 is day-of-year -100

enum Channel : std::size_t { kTMean, kTMin, kTMax, kPrecip, kPressure, kDayLength, kNoise };

inline const std::vector<std::string>& channel_names() {
  static const std::vector<std::string> names{"tmean", "tmin", "tmax", "precip",
                                              "pressure", "daylength", "noise"};
  return names;
}

struct Site {
  int id = 0;
  double elevation = 0.0;  // m
  double latitude = 46.8;  // degrees

  void validate() const {
    if (!(elevation >= 0.0 && elevation <= 4000.0)) throw Error("Site: elevation outside [0, 4000] m");
    if (!(latitude > -90.0 && latitude < 90.0)) throw Error("Site: latitude outside (-90, 90)");
  }
  friend bool operator==(const Site&, const Site&) = default;
};

/// One site-year. x is (channels, days); labels are day-of-year per species,
/// empty when unobserved.
struct SampleRecord {
  int site_id = 0;
  int year = 0;
  double elevation = 0.0;
  double latitude = 0.0;
  Tensor x{Shape{kChannels, kDays}};
  std::vector<std::optional<double>> labels;

  /// Mean of the mean-temperature channel.
  double mean_temperature() const {
    double s = 0.0;
    const std::size_t T = x.dim(1);
    for (std::size_t d = 0; d < T; ++d) s += x.at(kTMean, d);
    return s / static_cast<double>(T);
  }

  friend bool operator==(const SampleRecord& a, const SampleRecord& b) {
    auto same = [](double u, double v) { return u == v || (std::isnan(u) && std::isnan(v)); };
    if (a.site_id != b.site_id || a.year != b.year || !same(a.elevation, b.elevation) ||
        !same(a.latitude, b.latitude) || a.labels != b.labels || a.x.shape() != b.x.shape()) {
      return false;
    }
    for (std::size_t i = 0; i < a.x.size(); ++i)
      if (!same(a.x[i], b.x[i])) return false;
    return true;
  }
};

struct SpeciesParams {
  std::string name;
  double t_base = 0.0;        // deg C
  double forcing = 100.0;     // F*, degree-days
  std::size_t start = 100;    // series index where accumulation starts (Jan 1)
  double sigma_obs = 0.0;     // days

  void validate() const {
    if (!(forcing > 0.0)) throw Error("SpeciesParams(" + name + "): forcing must be > 0");
    if (!(sigma_obs >= 0.0)) throw Error("SpeciesParams(" + name + "): sigma_obs must be >= 0");
  }
};

/// Early (hazel-like) to late (spruce-like) species.
inline std::vector<SpeciesParams> default_species() {
  return {{"hazel", 0.0, 110.0, 100, 3.0},
          {"horse_chestnut", 2.5, 200.0, 100, 3.0},
          {"beech", 3.5, 260.0, 100, 3.0},
          {"larch", 4.0, 320.0, 100, 3.0},
          {"spruce", 5.0, 400.0, 100, 3.0}};
}

struct ClimateConfig {
  double baseline = 10.5;        // deg C, annual mean at 0 m in first_year
  double amplitude = 10.0;       // deg C, seasonal half-range
  double warming = 0.0;          // deg C per decade
  double lapse = -5.5;           // deg C per km
  double daily_noise = 2.5;      // sd of AR(1) daily anomalies
  double daily_ar = 0.7;
  double year_noise = 0.8;       // sd of year anomaly shared by all sites
  std::size_t sites = 40;
  int first_year = 1970;
  int last_year = 2019;
  double min_elevation = 200.0;
  double max_elevation = 1500.0;
  double min_latitude = 45.8;
  double max_latitude = 47.8;
  double missing_rate = 0.1;     // per species label

  void validate() const {
    if (!(lapse < 0.0)) throw Error("ClimateConfig: lapse rate must be negative");
    if (last_year < first_year) throw Error("ClimateConfig: empty year range");
    if (sites == 0) throw Error("ClimateConfig: need at least one site");
    if (!(daily_noise >= 0.0 && year_noise >= 0.0)) throw Error("ClimateConfig: noise must be >= 0");
    if (!(std::abs(daily_ar) < 1.0)) throw Error("ClimateConfig: |daily_ar| must be < 1");
    if (!(missing_rate >= 0.0 && missing_rate <= 1.0)) throw Error("ClimateConfig: missing_rate outside [0, 1]");
    if (!(min_elevation <= max_elevation)) throw Error("ClimateConfig: elevation range reversed");
  }
};

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0,
                                 std::uint64_t c = 0) {
  return splitmix64(splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b) ^ c);
}

enum Stream : std::uint64_t { kClimateStream = 1, kYearStream = 2, kLabelStream = 3, kSiteStream = 4 };

}  // namespace detail

/// Day-of-year (may be negative or past 365) of series index d.
inline int day_of_year(std::size_t index) { return static_cast<int>(index) + kFirstDay; }

/// Astronomical day length in hours; Cooper's declination formula.
inline double day_length(double latitude_deg, int doy) {
  const double n = static_cast<double>(((doy - 1) % 365 + 365) % 365 + 1);
  const double decl = 23.44 * std::numbers::pi / 180.0 * std::sin(2.0 * std::numbers::pi * (284.0 + n) / 365.0);
  const double phi = latitude_deg * std::numbers::pi / 180.0;
  const double c = std::clamp(-std::tan(phi) * std::tan(decl), -1.0, 1.0);
  return 24.0 / std::numbers::pi * std::acos(c);
}

/// Anomaly shared by every site in `year`.
inline double year_anomaly(int year, const ClimateConfig& cfg, std::uint64_t seed) {
  if (cfg.year_noise == 0.0) return 0.0;
  std::mt19937_64 rng(detail::derive_seed(seed, detail::kYearStream, static_cast<std::uint64_t>(year)));
  return std::normal_distribution<double>(0.0, cfg.year_noise)(rng);
}

/// (7, 365) meteorological series for one site-year. Noise depends on
/// (seed, site id, year) only, so sites sharing an id share their noise.
inline Tensor generate_climate(const Site& site, int year, const ClimateConfig& cfg, std::uint64_t seed) {
  if (year < cfg.first_year || year > cfg.last_year) {
    throw Error("generate_climate: year " + std::to_string(year) + " outside configured range");
  }
  site.validate();
  std::mt19937_64 rng(detail::derive_seed(seed, detail::kClimateStream,
                                          static_cast<std::uint64_t>(site.id), static_cast<std::uint64_t>(year)));
  std::normal_distribution<double> n01(0.0, 1.0);
  std::bernoulli_distribution wet(0.35);
  std::gamma_distribution<double> rain(0.8, 7.5);

  const double offset = cfg.warming * (year - cfg.first_year) / 10.0 + cfg.lapse * site.elevation / 1000.0 +
                        year_anomaly(year, cfg, seed);
  const double surface_pressure = 1013.25 * std::exp(-site.elevation / 8434.0);
  const double innov = cfg.daily_noise * std::sqrt(1.0 - cfg.daily_ar * cfg.daily_ar);
  Tensor x({kChannels, kDays});
  double ar = cfg.daily_noise * n01(rng);
  double p_ar = 0.0;
  for (std::size_t d = 0; d < kDays; ++d) {
    const int doy = day_of_year(d);
    if (d > 0) ar = cfg.daily_ar * ar + innov * n01(rng);
    const double season = -std::cos(2.0 * std::numbers::pi * (doy - 15) / 365.0);
    const double t = cfg.baseline + cfg.amplitude * season + offset + ar;
    const double half_range = 0.5 * std::max(1.0, 8.0 + 1.5 * n01(rng));
    const bool is_wet = wet(rng);
    const double amount = rain(rng);
    p_ar = 0.8 * p_ar + 3.0 * n01(rng);
    x.at(kTMean, d) = t;
    x.at(kTMin, d) = t - half_range;
    x.at(kTMax, d) = t + half_range;
    x.at(kPrecip, d) = is_wet ? amount : 0.0;
    x.at(kPressure, d) = surface_pressure + p_ar;
    x.at(kDayLength, d) = day_length(site.latitude, doy);
    x.at(kNoise, d) = n01(rng);
  }
  return x;
}

/// First series index d >= start at which sum_{u=start..d} max(T_u - T_base, 0)
/// reaches F*; empty if it never does.
inline std::optional<std::size_t> gdd_date(std::span<const double> temperature, const SpeciesParams& p) {
  double acc = 0.0;
  for (std::size_t d = p.start; d < temperature.size(); ++d) {
    acc += std::max(temperature[d] - p.t_base, 0.0);
    if (acc >= p.forcing) return d;
  }
  return std::nullopt;
}

inline std::span<const double> temperature_series(const Tensor& x) {
  return {x.ptr() + kTMean * x.dim(1), x.dim(1)};
}

inline std::vector<Site> generate_sites(const ClimateConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(detail::derive_seed(seed, detail::kSiteStream));
  std::uniform_real_distribution<double> elev(cfg.min_elevation, cfg.max_elevation);
  std::uniform_real_distribution<double> lat(cfg.min_latitude, cfg.max_latitude);
  std::vector<Site> sites(cfg.sites);
  for (std::size_t i = 0; i < cfg.sites; ++i) {
    sites[i].id = static_cast<int>(i);
    sites[i].elevation = elev(rng);
    sites[i].latitude = lat(rng);
  }
  return sites;
}

/// Day-of-year label for one species of one site-year (before missingness).
inline std::optional<double> observe_label(const Tensor& x, const SpeciesParams& p, std::mt19937_64& rng) {
  const auto idx = gdd_date(temperature_series(x), p);
  if (!idx) return std::nullopt;
  double doy = day_of_year(*idx);
  if (p.sigma_obs > 0.0) doy += std::round(std::normal_distribution<double>(0.0, p.sigma_obs)(rng));
  return std::clamp(doy, static_cast<double>(kFirstDay), static_cast<double>(day_of_year(kDays - 1)));
}

/// Site-years in canonical (site, year) order; `jobs` threads share the work.
inline std::vector<SampleRecord> generate_dataset(const ClimateConfig& cfg, const std::vector<SpeciesParams>& species,
                                                  std::uint64_t seed, unsigned jobs = 1) {
  cfg.validate();
  for (const auto& s : species) s.validate();
  const auto sites = generate_sites(cfg, seed);
  const std::size_t years = static_cast<std::size_t>(cfg.last_year - cfg.first_year + 1);
  std::vector<SampleRecord> out(sites.size() * years);
  auto work = [&](std::size_t begin, std::size_t step) {
    for (std::size_t i = begin; i < out.size(); i += step) {
      const Site& site = sites[i / years];
      const int year = cfg.first_year + static_cast<int>(i % years);
      SampleRecord& r = out[i];
      r.site_id = site.id;
      r.year = year;
      r.elevation = site.elevation;
      r.latitude = site.latitude;
      r.x = generate_climate(site, year, cfg, seed);
      std::mt19937_64 rng(detail::derive_seed(seed, detail::kLabelStream, static_cast<std::uint64_t>(site.id),
                                              static_cast<std::uint64_t>(year)));
      std::bernoulli_distribution drop(cfg.missing_rate);
      for (const auto& sp : species) {
        auto label = observe_label(r.x, sp, rng);
        if (drop(rng)) label.reset();
        r.labels.push_back(label);
      }
    }
  };
  jobs = std::max(1u, jobs);
  if (jobs == 1) {
    work(0, 1);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned j = 0; j < jobs; ++j) pool.emplace_back(work, j, jobs);
  }
  return out;
}

}  // namespace miranda
