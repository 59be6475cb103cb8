#pragma once

#include <charconv>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "miranda/data/synthdata.hpp"

namespace miranda {

// One row per site-year:
//   site_id,year,elevation_m,latitude_deg,y_species_1..y_species_S,x_<channel>_<day>...
// x columns are channel-major; <day> is the series index (0 = day-of-year -100).
// An empty y field is a missing label.

namespace detail {

inline std::string format_double(double v) {
  char buf[32];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

inline std::vector<std::string_view> split_fields(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    out.push_back(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start));
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return out;
}

[[noreturn]] inline void csv_fail(const std::string& path, std::size_t line, const std::string& msg) {
  throw Error("csv_read: " + path + ":" + std::to_string(line) + ": " + msg);
}

template <class T>
T parse_field(std::string_view f, const std::string& path, std::size_t line, const char* what) {
  T v{};
  auto r = std::from_chars(f.data(), f.data() + f.size(), v);
  if (r.ec != std::errc() || r.ptr != f.data() + f.size()) {
    csv_fail(path, line, std::string("bad ") + what + " '" + std::string(f) + "'");
  }
  return v;
}

}  // namespace detail

inline void csv_write(const std::vector<SampleRecord>& records, const std::string& path,
                      const std::vector<std::string>& channels = channel_names()) {
  std::ofstream os(path);
  if (!os) throw Error("csv_write: cannot open " + path);
  const std::size_t S = records.empty() ? 0 : records.front().labels.size();
  const std::size_t C = records.empty() ? channels.size() : records.front().x.dim(0);
  const std::size_t T = records.empty() ? kDays : records.front().x.dim(1);
  if (channels.size() != C) throw Error("csv_write: channel name count does not match data");
  os << "site_id,year,elevation_m,latitude_deg";
  for (std::size_t s = 0; s < S; ++s) os << ",y_species_" << s + 1;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t d = 0; d < T; ++d) os << ",x_" << channels[c] << '_' << d;
  os << '\n';
  std::string row;
  for (const auto& r : records) {
    if (r.labels.size() != S || r.x.shape() != Shape{C, T}) throw Error("csv_write: records have mixed shapes");
    row.clear();
    row += std::to_string(r.site_id) + ',' + std::to_string(r.year) + ',' + detail::format_double(r.elevation) +
           ',' + detail::format_double(r.latitude);
    for (const auto& y : r.labels) {
      row += ',';
      if (y) row += detail::format_double(*y);
    }
    for (double v : r.x.data()) {
      row += ',';
      row += detail::format_double(v);
    }
    os << row << '\n';
  }
  if (!os) throw Error("csv_write: write failed for " + path);
}

/// Reads any channel decomposition; channel count and length come from the
/// header.
inline std::vector<SampleRecord> csv_read(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("csv_read: cannot open " + path);
  std::string line;
  if (!std::getline(is, line)) detail::csv_fail(path, 1, "missing header");
  if (!line.empty() && line.back() == '\r') line.pop_back();
  const auto header = detail::split_fields(line);
  const std::vector<std::string_view> fixed{"site_id", "year", "elevation_m", "latitude_deg"};
  if (header.size() < fixed.size() || !std::equal(fixed.begin(), fixed.end(), header.begin())) {
    detail::csv_fail(path, 1, "header must start with site_id,year,elevation_m,latitude_deg");
  }
  std::size_t S = 0;
  while (4 + S < header.size() && header[4 + S] == "y_species_" + std::to_string(S + 1)) ++S;
  std::vector<std::string> channels;
  std::vector<std::size_t> per_channel;
  for (std::size_t k = 4 + S; k < header.size(); ++k) {
    const auto h = header[k];
    const std::size_t us = h.rfind('_');
    if (h.substr(0, 2) != "x_" || us == std::string_view::npos || us < 2) {
      detail::csv_fail(path, 1, "unexpected column '" + std::string(h) + "'");
    }
    const std::string name(h.substr(2, us - 2));
    const auto day = detail::parse_field<std::size_t>(h.substr(us + 1), path, 1, "day index");
    if (channels.empty() || channels.back() != name) {
      channels.push_back(name);
      per_channel.push_back(0);
    }
    if (day != per_channel.back()) detail::csv_fail(path, 1, "x columns must be channel-major and ordered by day");
    ++per_channel.back();
  }
  if (channels.empty()) detail::csv_fail(path, 1, "no x columns");
  for (std::size_t n : per_channel)
    if (n != per_channel.front()) detail::csv_fail(path, 1, "channels have different lengths");
  const std::size_t C = channels.size(), T = per_channel.front();

  std::vector<SampleRecord> out;
  std::size_t lineno = 1;
  while (std::getline(is, line)) {
    ++lineno;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const auto f = detail::split_fields(line);
    if (f.size() != header.size()) {
      detail::csv_fail(path, lineno, "expected " + std::to_string(header.size()) + " fields, got " +
                                         std::to_string(f.size()));
    }
    SampleRecord r;
    r.site_id = detail::parse_field<int>(f[0], path, lineno, "site_id");
    r.year = detail::parse_field<int>(f[1], path, lineno, "year");
    r.elevation = detail::parse_field<double>(f[2], path, lineno, "elevation_m");
    r.latitude = detail::parse_field<double>(f[3], path, lineno, "latitude_deg");
    for (std::size_t s = 0; s < S; ++s) {
      const auto v = f[4 + s];
      r.labels.push_back(v.empty() ? std::nullopt
                                   : std::optional<double>(detail::parse_field<double>(v, path, lineno, "label")));
    }
    r.x = Tensor({C, T});
    for (std::size_t k = 0; k < C * T; ++k) r.x[k] = detail::parse_field<double>(f[4 + S + k], path, lineno, "value");
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace miranda
