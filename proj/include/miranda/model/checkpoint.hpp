#pragma once

#include <fstream>
#include <map>
#include <string>

#include "json.hpp"
#include "miranda/model/phenoformer.hpp"

namespace miranda {

inline constexpr const char* kCheckpointSchema = "miranda-checkpoint";
inline constexpr int kCheckpointVersion = 1;

inline nlohmann::json to_json(const ModelConfig& c) {
  return {{"channels", c.channels},     {"seq_len", c.seq_len},
          {"species", c.species},       {"dim", c.dim},
          {"disc_dim", c.disc_dim},     {"disc_out", c.disc_out},
          {"heads", c.heads},           {"ffn_dim", c.ffn_dim},
          {"ln_momentum", c.ln_momentum}, {"ln_eps", c.ln_eps},
          {"hybrid_t1", c.hybrid_t1},   {"hybrid_t2", c.hybrid_t2},
          {"per_species_decoder", c.per_species_decoder},
          {"batchnorm_before_decoder", c.batchnorm_before_decoder}};
}

/// Reads a ModelConfig; absent keys keep their defaults.
inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) field = j.at(key).get<std::remove_reference_t<decltype(field)>>();
  };
  get("channels", c.channels);
  get("seq_len", c.seq_len);
  get("species", c.species);
  get("dim", c.dim);
  get("disc_dim", c.disc_dim);
  get("disc_out", c.disc_out);
  get("heads", c.heads);
  get("ffn_dim", c.ffn_dim);
  get("ln_momentum", c.ln_momentum);
  get("ln_eps", c.ln_eps);
  get("hybrid_t1", c.hybrid_t1);
  get("hybrid_t2", c.hybrid_t2);
  get("per_species_decoder", c.per_species_decoder);
  get("batchnorm_before_decoder", c.batchnorm_before_decoder);
  c.validate();
  return c;
}

namespace detail {

inline nlohmann::json stats_json(const RunningStats& s) {
  return {{"mean", s.mean}, {"sigma", s.sigma}, {"initialized", s.initialized},
          {"updates", s.updates}};
}

inline RunningStats stats_from_json(const nlohmann::json& j) {
  RunningStats s;
  s.mean = j.at("mean").get<double>();
  s.sigma = j.at("sigma").get<double>();
  s.initialized = j.at("initialized").get<bool>();
  s.updates = j.at("updates").get<std::size_t>();
  return s;
}

}  // namespace detail

/// Every learnable tensor, running statistic, standardization constant and
/// the model config. Doubles are written in shortest round-trip form, so
/// save/load is bit-exact.
inline nlohmann::json checkpoint_json(PhenoFormer& model) {
  nlohmann::json j;
  j["schema"] = kCheckpointSchema;
  j["version"] = kCheckpointVersion;
  j["config"] = to_json(model.config());
  nlohmann::json params = nlohmann::json::object();
  for (Parameter* p : model.parameters()) {
    params[p->name] = {{"shape", p->value.shape()}, {"data", std::vector<double>(p->value.vec().begin(), p->value.vec().end())}};
  }
  j["parameters"] = std::move(params);
  nlohmann::json norms = nlohmann::json::object();
  for (HybridLayerNorm* n : model.norms()) norms[n->gamma.name] = detail::stats_json(n->stats);
  j["norm_stats"] = std::move(norms);
  if (model.config().batchnorm_before_decoder) {
    j["batch_norm"] = {{"running_mean", model.batch_norm.running_mean},
                       {"running_var", model.batch_norm.running_var}};
  }
  j["input_standardization"] = {{"mean", model.input_norm.mean}, {"scale", model.input_norm.scale}};
  j["label_standardization"] = {{"mean", model.label_norm.mean}, {"scale", model.label_norm.scale}};
  return j;
}

inline PhenoFormer model_from_checkpoint_json(const nlohmann::json& j) {
  if (j.value("schema", "") != kCheckpointSchema) throw Error("checkpoint: unknown schema");
  if (j.value("version", 0) != kCheckpointVersion) {
    throw Error("checkpoint: unsupported version " + j.value("version", nlohmann::json()).dump());
  }
  PhenoFormer model(model_config_from_json(j.at("config")), 0);
  const auto& params = j.at("parameters");
  for (Parameter* p : model.parameters()) {
    if (!params.contains(p->name)) throw Error("checkpoint: missing parameter '" + p->name + "'");
    const auto& e = params.at(p->name);
    Tensor t(e.at("shape").get<Shape>(), e.at("data").get<std::vector<double>>());
    if (t.shape() != p->value.shape()) throw_shape("checkpoint(" + p->name + ")", t.shape(), p->value.shape());
    p->value = std::move(t);
    p->zero_grad();
  }
  const auto& norms = j.at("norm_stats");
  for (HybridLayerNorm* n : model.norms()) n->stats = detail::stats_from_json(norms.at(n->gamma.name));
  if (model.config().batchnorm_before_decoder) {
    model.batch_norm.running_mean = j.at("batch_norm").at("running_mean").get<std::vector<double>>();
    model.batch_norm.running_var = j.at("batch_norm").at("running_var").get<std::vector<double>>();
  }
  model.input_norm.mean = j.at("input_standardization").at("mean").get<std::vector<double>>();
  model.input_norm.scale = j.at("input_standardization").at("scale").get<std::vector<double>>();
  model.label_norm.mean = j.at("label_standardization").at("mean").get<std::vector<double>>();
  model.label_norm.scale = j.at("label_standardization").at("scale").get<std::vector<double>>();
  if (model.input_norm.mean.size() != model.config().channels ||
      model.label_norm.mean.size() != model.config().species) {
    throw Error("checkpoint: standardization sizes do not match config");
  }
  return model;
}

inline void save_checkpoint(PhenoFormer& model, const std::string& path) {
  std::ofstream os(path);
  if (!os) throw Error("save_checkpoint: cannot open " + path);
  os << checkpoint_json(model).dump() << '\n';
  if (!os) throw Error("save_checkpoint: write failed for " + path);
}

inline PhenoFormer load_checkpoint(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw Error("load_checkpoint: cannot open " + path);
  nlohmann::json j;
  try {
    is >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("load_checkpoint: " + path + ": " + e.what());
  }
  return model_from_checkpoint_json(j);
}

}  // namespace miranda
