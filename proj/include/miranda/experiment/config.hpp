#pragma once

#include <cstdint>
#include <fstream>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "json.hpp"

#include "miranda/data/synthdata.hpp"
#include "miranda/train/config.hpp"

namespace miranda {

inline constexpr int kExperimentSchemaVersion = 1;

using nlohmann::json;

struct SplitSpec {
  std::string kind = "elevation";  // elevation | annual-temp | chronological | random
  std::optional<double> test_frac;
  std::optional<double> val_frac;
  int train_end = 0;  // chronological only: last training year
  int val_end = 0;    // chronological only: last validation year
  std::uint64_t seed = 0;  // random only

  double test() const {
    if (test_frac) return *test_frac;
    return kind == "elevation" ? 0.25 : kind == "annual-temp" ? 0.15 : 0.2;
  }
  double val() const {
    if (val_frac) return *val_frac;
    return kind == "random" ? 0.1 : 0.15;
  }
};

struct ExperimentConfig {
  int schema_version = kExperimentSchemaVersion;
  std::optional<std::string> csv;  // dataset file; synthetic generation otherwise
  ClimateConfig climate;
  std::vector<SpeciesParams> species = default_species();
  std::uint64_t data_seed = 0;
  SplitSpec split;
  std::vector<Method> methods{Method::kVanilla, Method::kMiranda};
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4, 5, 6, 7, 8, 9};
  TrainConfig train;
  std::string out = "runs";

  void validate() const {
    if (schema_version != kExperimentSchemaVersion) {
      throw Error("config: schema_version " + std::to_string(schema_version) + " is not supported (expected " +
                  std::to_string(kExperimentSchemaVersion) + ")");
    }
    if (methods.empty()) throw Error("config: methods must list at least one method");
    if (seeds.empty()) throw Error("config: seeds must list at least one seed");
    if (!csv) {
      climate.validate();
      if (species.empty()) throw Error("config: data.species must not be empty");
      for (const auto& s : species) s.validate();
    }
    const std::set<std::string> kinds{"elevation", "annual-temp", "chronological", "random"};
    if (!kinds.count(split.kind)) throw Error("config: split.kind '" + split.kind + "' is not recognised");
    if (split.kind == "chronological" && !(split.train_end < split.val_end)) {
      throw Error("config: split.train_end must be before split.val_end");
    }
    for (Method m : methods) {
      TrainConfig t = train;
      t.method = m;
      try {
        t.validate();
      } catch (const Error& e) {
        throw Error(std::string("config: train (method ") + to_string(m) + "): " + e.what());
      }
    }
  }
};

namespace detail {

/// Reads optional object fields, rejecting unknown keys and wrong types with
/// the dotted field path in the message.
class Fields {
 public:
  Fields(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j.is_object()) throw Error("config: " + where() + " must be an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return;
    try {
      out = j_.at(key).get<T>();
    } catch (const json::exception&) {
      throw Error("config: field '" + field(key) + "' has the wrong type");
    }
  }

  template <class T>
  void get(const char* key, std::optional<T>& out) {
    seen_.insert(key);
    if (!j_.contains(key) || j_.at(key).is_null()) return;
    T v{};
    get(key, v);
    out = v;
  }

  template <class Parse, class T>
  void get_enum(const char* key, T& out, Parse parse) {
    std::string s;
    seen_.insert(key);
    if (!j_.contains(key)) return;
    get(key, s);
    try {
      out = parse(s);
    } catch (const Error& e) {
      throw Error("config: field '" + field(key) + "': " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    return j_.contains(key) ? &j_.at(key) : nullptr;
  }

  std::string field(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!seen_.count(k)) throw Error("config: unknown field '" + field(k.c_str()) + "'");
    }
  }

 private:
  std::string where() const { return path_.empty() ? "top level" : "'" + path_ + "'"; }

  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

}  // namespace detail

inline json to_json(const ClimateConfig& c) {
  return {{"baseline", c.baseline},       {"amplitude", c.amplitude},       {"warming", c.warming},
          {"lapse", c.lapse},             {"daily_noise", c.daily_noise},   {"daily_ar", c.daily_ar},
          {"year_noise", c.year_noise},   {"sites", c.sites},               {"first_year", c.first_year},
          {"last_year", c.last_year},     {"min_elevation", c.min_elevation}, {"max_elevation", c.max_elevation},
          {"min_latitude", c.min_latitude}, {"max_latitude", c.max_latitude}, {"missing_rate", c.missing_rate}};
}

inline ClimateConfig climate_from_json(const json& j, const std::string& path) {
  ClimateConfig c;
  detail::Fields f(j, path);
  f.get("baseline", c.baseline);
  f.get("amplitude", c.amplitude);
  f.get("warming", c.warming);
  f.get("lapse", c.lapse);
  f.get("daily_noise", c.daily_noise);
  f.get("daily_ar", c.daily_ar);
  f.get("year_noise", c.year_noise);
  f.get("sites", c.sites);
  f.get("first_year", c.first_year);
  f.get("last_year", c.last_year);
  f.get("min_elevation", c.min_elevation);
  f.get("max_elevation", c.max_elevation);
  f.get("min_latitude", c.min_latitude);
  f.get("max_latitude", c.max_latitude);
  f.get("missing_rate", c.missing_rate);
  f.finish();
  return c;
}

inline json to_json(const SpeciesParams& s) {
  return {{"name", s.name}, {"t_base", s.t_base}, {"forcing", s.forcing}, {"start", s.start},
          {"sigma_obs", s.sigma_obs}};
}

inline SpeciesParams species_from_json(const json& j, const std::string& path) {
  SpeciesParams s;
  detail::Fields f(j, path);
  f.get("name", s.name);
  f.get("t_base", s.t_base);
  f.get("forcing", s.forcing);
  f.get("start", s.start);
  f.get("sigma_obs", s.sigma_obs);
  f.finish();
  return s;
}

inline json to_json(const TrainConfig& t) {
  json j = {{"method", to_string(t.method)},
            {"lr", t.lr},
            {"batch_size", t.batch_size},
            {"max_epochs", t.max_epochs},
            {"tau", t.tau},
            {"guidance", to_string(t.guidance)},
            {"steepness", t.steepness},
            {"seed", t.seed},
            {"patience", t.patience},
            {"selection", to_string(t.selection)},
            {"holdout_frac", t.holdout_frac},
            {"dim", t.dim},
            {"heads", t.heads},
            {"ffn_dim", t.ffn_dim},
            {"disc_dim", t.disc_dim},
            {"rank_dim", t.rank_dim},
            {"tbase_min", t.tbase_min},
            {"tbase_max", t.tbase_max},
            {"tbase_step", t.tbase_step},
            {"forcing_min", t.forcing_min},
            {"forcing_max", t.forcing_max},
            {"forcing_step", t.forcing_step}};
  j["feature_site"] = t.feature_site ? json(to_string(*t.feature_site)) : json(nullptr);
  j["adversary"] = t.adversary ? json(to_string(*t.adversary)) : json(nullptr);
  j["hybrid_ln"] = t.hybrid_ln ? json(*t.hybrid_ln) : json(nullptr);
  j["fixed_lambda"] = t.fixed_lambda ? json(*t.fixed_lambda) : json(nullptr);
  return j;
}

inline TrainConfig train_from_json(const json& j, const std::string& path) {
  TrainConfig t;
  detail::Fields f(j, path);
  f.get_enum("method", t.method, method_from_string);
  f.get("lr", t.lr);
  f.get("batch_size", t.batch_size);
  f.get("max_epochs", t.max_epochs);
  f.get("tau", t.tau);
  f.get_enum("guidance", t.guidance, guidance_from_string);
  f.get("steepness", t.steepness);
  f.get("seed", t.seed);
  f.get("patience", t.patience);
  f.get_enum("selection", t.selection, selection_from_string);
  f.get("holdout_frac", t.holdout_frac);
  f.get("dim", t.dim);
  f.get("heads", t.heads);
  f.get("ffn_dim", t.ffn_dim);
  f.get("disc_dim", t.disc_dim);
  f.get("rank_dim", t.rank_dim);
  f.get("tbase_min", t.tbase_min);
  f.get("tbase_max", t.tbase_max);
  f.get("tbase_step", t.tbase_step);
  f.get("forcing_min", t.forcing_min);
  f.get("forcing_max", t.forcing_max);
  f.get("forcing_step", t.forcing_step);
  std::optional<std::string> site, adversary;
  f.get("feature_site", site);
  f.get("adversary", adversary);
  f.get("hybrid_ln", t.hybrid_ln);
  f.get("fixed_lambda", t.fixed_lambda);
  try {
    if (site) t.feature_site = feature_site_from_string(*site);
  } catch (const Error& e) {
    throw Error("config: field '" + f.field("feature_site") + "': " + e.what());
  }
  try {
    if (adversary) t.adversary = adversary_from_string(*adversary);
  } catch (const Error& e) {
    throw Error("config: field '" + f.field("adversary") + "': " + e.what());
  }
  f.finish();
  return t;
}

inline json to_json(const SplitSpec& s) {
  json j = {{"kind", s.kind}, {"test_frac", s.test()}, {"val_frac", s.val()}};
  if (s.kind == "chronological") {
    j = {{"kind", s.kind}, {"train_end", s.train_end}, {"val_end", s.val_end}};
  }
  if (s.kind == "random") j["seed"] = s.seed;
  return j;
}

inline SplitSpec split_from_json(const json& j, const std::string& path) {
  SplitSpec s;
  detail::Fields f(j, path);
  f.get("kind", s.kind);
  f.get("test_frac", s.test_frac);
  f.get("val_frac", s.val_frac);
  f.get("train_end", s.train_end);
  f.get("val_end", s.val_end);
  f.get("seed", s.seed);
  f.finish();
  return s;
}

inline json to_json(const ExperimentConfig& c) {
  json data;
  if (c.csv) {
    data["csv"] = *c.csv;
  } else {
    data["seed"] = c.data_seed;
    data["climate"] = to_json(c.climate);
    data["species"] = json::array();
    for (const auto& s : c.species) data["species"].push_back(to_json(s));
  }
  json methods = json::array();
  for (Method m : c.methods) methods.push_back(to_string(m));
  json train = to_json(c.train);
  train.erase("method");
  train.erase("seed");
  return {{"schema_version", c.schema_version},
          {"data", data},
          {"split", to_json(c.split)},
          {"methods", methods},
          {"seeds", c.seeds},
          {"train", train},
          {"out", c.out}};
}

inline ExperimentConfig experiment_from_json(const json& j) {
  ExperimentConfig c;
  detail::Fields f(j, "");
  if (!j.contains("schema_version")) throw Error("config: missing field 'schema_version'");
  f.get("schema_version", c.schema_version);
  if (c.schema_version != kExperimentSchemaVersion) c.validate();
  if (const json* d = f.child("data")) {
    detail::Fields fd(*d, "data");
    std::optional<std::string> csv;
    fd.get("csv", csv);
    c.csv = csv;
    fd.get("seed", c.data_seed);
    if (const json* cl = fd.child("climate")) c.climate = climate_from_json(*cl, "data.climate");
    if (const json* sp = fd.child("species")) {
      if (!sp->is_array()) throw Error("config: field 'data.species' must be an array");
      c.species.clear();
      for (std::size_t i = 0; i < sp->size(); ++i) {
        c.species.push_back(species_from_json(sp->at(i), "data.species[" + std::to_string(i) + "]"));
      }
    }
    fd.finish();
  }
  if (const json* s = f.child("split")) c.split = split_from_json(*s, "split");
  std::vector<std::string> methods;
  f.get("methods", methods);
  if (j.contains("methods")) {
    c.methods.clear();
    for (const auto& m : methods) {
      try {
        c.methods.push_back(method_from_string(m));
      } catch (const Error& e) {
        throw Error(std::string("config: field 'methods': ") + e.what());
      }
    }
  }
  f.get("seeds", c.seeds);
  if (const json* t = f.child("train")) {
    if (t->contains("method") || t->contains("seed")) {
      throw Error("config: field 'train' must not set method or seed; use 'methods' and 'seeds'");
    }
    c.train = train_from_json(*t, "train");
  }
  f.get("out", c.out);
  f.finish();
  c.validate();
  return c;
}

inline ExperimentConfig load_experiment(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("config: cannot open " + path);
  json j;
  try {
    is >> j;
  } catch (const json::exception& e) {
    throw Error("config: " + path + " is not valid JSON: " + e.what());
  }
  return experiment_from_json(j);
}

}  // namespace miranda
