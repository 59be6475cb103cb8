#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "miranda/losses/losses.hpp"
#include "miranda/model/config.hpp"

namespace miranda {

enum class Method { kMiranda, kVanilla, kDann, kCoral, kAdaBn, kDanl, kThermalTime };
enum class FeatureSite { kMid, kLate };  // Z after t1, or G after t2
enum class Adversary { kNone, kRank, kBinary, kCoral };
enum class Selection { kTargetVal, kSourceHoldout };

inline const char* to_string(Method m) {
  switch (m) {
    case Method::kMiranda: return "miranda";
    case Method::kVanilla: return "vanilla";
    case Method::kDann: return "dann";
    case Method::kCoral: return "coral";
    case Method::kAdaBn: return "adabn";
    case Method::kDanl: return "danl";
    case Method::kThermalTime: return "thermal-time";
  }
  return "?";
}

inline Method method_from_string(const std::string& s) {
  for (Method m : {Method::kMiranda, Method::kVanilla, Method::kDann, Method::kCoral, Method::kAdaBn,
                   Method::kDanl, Method::kThermalTime}) {
    if (s == to_string(m)) return m;
  }
  throw Error("unknown method '" + s + "'");
}

inline const char* to_string(FeatureSite f) { return f == FeatureSite::kMid ? "mid" : "late"; }
inline FeatureSite feature_site_from_string(const std::string& s) {
  if (s == "mid") return FeatureSite::kMid;
  if (s == "late") return FeatureSite::kLate;
  throw Error("unknown feature site '" + s + "'");
}

inline const char* to_string(Adversary a) {
  switch (a) {
    case Adversary::kNone: return "none";
    case Adversary::kRank: return "rank";
    case Adversary::kBinary: return "binary";
    case Adversary::kCoral: return "coral";
  }
  return "?";
}
inline Adversary adversary_from_string(const std::string& s) {
  for (Adversary a : {Adversary::kNone, Adversary::kRank, Adversary::kBinary, Adversary::kCoral})
    if (s == to_string(a)) return a;
  throw Error("unknown adversary '" + s + "'");
}

inline const char* to_string(Selection s) {
  return s == Selection::kTargetVal ? "target-val" : "source-holdout";
}
inline Selection selection_from_string(const std::string& s) {
  if (s == "target-val") return Selection::kTargetVal;
  if (s == "source-holdout") return Selection::kSourceHoldout;
  throw Error("unknown selection '" + s + "'");
}

struct TrainConfig {
  Method method = Method::kMiranda;
  double lr = 1e-4;
  std::size_t batch_size = 16;
  std::size_t max_epochs = 300;
  double tau = 0.1;
  Guidance guidance = Guidance::kYear;
  double steepness = 10.0;
  std::uint64_t seed = 0;
  std::size_t patience = 0;  // epochs without improvement; 0 = off
  Selection selection = Selection::kTargetVal;
  double holdout_frac = 0.1;

  // Backbone and discriminator sizes.
  std::size_t dim = 64;
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  std::size_t disc_dim = 128;
  std::size_t rank_dim = 128;  // discriminator output for the rank loss

  // Ablation overrides of the method's defaults.
  std::optional<FeatureSite> feature_site;
  std::optional<Adversary> adversary;
  std::optional<bool> hybrid_ln;
  std::optional<double> fixed_lambda;  // replaces the schedule

  // Thermal-time grid.
  double tbase_min = 0.0, tbase_max = 5.0, tbase_step = 0.5;
  double forcing_min = 100.0, forcing_max = 400.0, forcing_step = 10.0;

  bool adapts() const { return adversary_kind() != Adversary::kNone; }

  FeatureSite site() const {
    if (feature_site) return *feature_site;
    return method == Method::kMiranda ? FeatureSite::kMid : FeatureSite::kLate;
  }

  Adversary adversary_kind() const {
    if (adversary) return *adversary;
    switch (method) {
      case Method::kMiranda: return Adversary::kRank;
      case Method::kDann:
      case Method::kDanl: return Adversary::kBinary;
      case Method::kCoral: return Adversary::kCoral;
      default: return Adversary::kNone;
    }
  }

  bool hybrid_t2() const {
    if (hybrid_ln) return *hybrid_ln;
    return method == Method::kMiranda || method == Method::kDanl;
  }
  bool hybrid_t1() const { return method == Method::kDanl && hybrid_t2(); }

  void validate() const {
    if (!(lr > 0.0)) throw Error("TrainConfig: lr must be > 0");
    if (batch_size < 2) throw Error("TrainConfig: batch size must be >= 2");
    if (adapts() && batch_size % 2 != 0) throw Error("TrainConfig: batch size must be even for adaptation methods");
    if (adapts() && batch_size < 4 && adversary_kind() != Adversary::kBinary) {
      throw Error("TrainConfig: rank and CORAL losses need at least 2 samples per domain half");
    }
    if (max_epochs == 0) throw Error("TrainConfig: max_epochs must be >= 1");
    if (!(tau > 0.0)) throw Error("TrainConfig: tau must be > 0");
    if (!(steepness >= 0.0)) throw Error("TrainConfig: steepness must be >= 0");
    if (fixed_lambda && !(*fixed_lambda >= 0.0)) throw Error("TrainConfig: fixed lambda must be >= 0");
    if (!(holdout_frac > 0.0 && holdout_frac < 1.0)) throw Error("TrainConfig: holdout_frac outside (0, 1)");
    if (adversary && method != Method::kMiranda && method != Method::kDann && method != Method::kDanl) {
      throw Error("TrainConfig: adversary override only applies to miranda/dann/danl");
    }
  }

  /// Model shape for this method on data with C channels, T days, S species.
  ModelConfig model_config(std::size_t channels, std::size_t seq_len, std::size_t species) const {
    ModelConfig m;
    m.channels = channels;
    m.seq_len = seq_len;
    m.species = species;
    m.dim = dim;
    m.heads = heads;
    m.ffn_dim = ffn_dim;
    m.disc_dim = disc_dim;
    const Adversary a = adversary_kind();
    m.disc_out = a == Adversary::kRank ? rank_dim : a == Adversary::kBinary ? 1 : 0;
    m.hybrid_t1 = hybrid_t1();
    m.hybrid_t2 = hybrid_t2();
    m.batchnorm_before_decoder = method == Method::kAdaBn;
    return m;
  }
};

}  // namespace miranda
