#pragma once

#include <cstdint>
#include <random>
#include <vector>

#include "miranda/core/graph.hpp"
#include "miranda/core/ops.hpp"
#include "miranda/model/config.hpp"
#include "miranda/model/layers.hpp"

namespace miranda {

/// Affine per-channel standardization, z = (x - mean) / scale.
struct Standardization {
  std::vector<double> mean;
  std::vector<double> scale;

  static Standardization identity(std::size_t n) {
    return {std::vector<double>(n, 0.0), std::vector<double>(n, 1.0)};
  }

  double forward(std::size_t i, double x) const { return (x - mean[i]) / scale[i]; }
  double inverse(std::size_t i, double z) const { return z * scale[i] + mean[i]; }

  friend bool operator==(const Standardization&, const Standardization&) = default;
};

struct MidFeatures {
  Var h;  // series positions, (B, T, D)
  Var z;  // token positions, (B, S, D)
};

/// Linear encoder, positional encodings and learnt tokens, two transformer
/// layers t1/t2, linear decoder, optional pre-decoder batch norm and the
/// discriminator MLP used by the adversarial objectives.
///
/// Activations are laid out (batch, position, feature): inputs are (B, T, C).
class PhenoFormer {
 public:
  PhenoFormer(const ModelConfig& cfg, std::uint64_t seed)
      : input_norm(Standardization::identity(cfg.channels)),
        label_norm(Standardization::identity(cfg.species)),
        cfg_(cfg) {
    cfg.validate();
    std::mt19937_64 rng(seed);
    encoder = Linear("encoder", cfg.channels, cfg.dim, rng);
    tokens = Parameter("tokens", Tensor({cfg.species, cfg.dim}));
    std::normal_distribution<double> n01(0.0, 1.0);
    for (double& v : tokens.value.data()) v = n01(rng);
    positions = sinusoidal_positions(cfg.seq_len, cfg.dim);
    t1 = TransformerLayer("t1", cfg, cfg.hybrid_t1, rng);
    t2 = TransformerLayer("t2", cfg, cfg.hybrid_t2, rng);
    if (cfg.per_species_decoder) {
      decoder_weight = Parameter("decoder.weight", Tensor({cfg.species, cfg.dim}));
      decoder_bias = Parameter("decoder.bias", Tensor({cfg.species}, 0.0));
      const double a = std::sqrt(6.0 / static_cast<double>(cfg.dim + 1));
      std::uniform_real_distribution<double> u(-a, a);
      for (double& v : decoder_weight.value.data()) v = u(rng);
    } else {
      Linear d("decoder", cfg.dim, 1, rng);
      decoder_weight = std::move(d.weight);
      decoder_bias = std::move(d.bias);
    }
    if (cfg.batchnorm_before_decoder) {
      batch_norm = BatchNorm("bn", cfg.dim, cfg.ln_momentum, cfg.ln_eps);
    }
    // Separate stream: backbone initialization does not depend on whether a
    // discriminator exists.
    if (cfg.disc_out > 0) {
      std::mt19937_64 drng(seed ^ 0x9E3779B97F4A7C15ULL);
      const std::size_t in = cfg.species * cfg.dim;
      discriminator.emplace_back("disc.0", in, cfg.disc_dim, drng);
      discriminator.emplace_back("disc.1", cfg.disc_dim, cfg.disc_dim, drng);
      discriminator.emplace_back("disc.2", cfg.disc_dim, cfg.disc_out, drng);
    }
  }

  const ModelConfig& config() const { return cfg_; }

  Linear encoder;
  Parameter tokens;
  Tensor positions;
  TransformerLayer t1, t2;
  Parameter decoder_weight, decoder_bias;
  BatchNorm batch_norm;
  std::vector<Linear> discriminator;
  Standardization input_norm;
  Standardization label_norm;

  /// (B, T, C) -> (B, T, D); the same affine map at every time step.
  Var encode(Graph& g, Var x) {
    const Shape& s = x.shape();
    if (s.size() != 3 || s[1] != cfg_.seq_len || s[2] != cfg_.channels) {
      throw_shape("encode", s, Shape{0, cfg_.seq_len, cfg_.channels});
    }
    return encoder.forward(g, x);
  }

  /// [E + P, L] through t1, split into series part H and token part Z.
  MidFeatures forward_t1(Graph& g, Var e, NormMode mode) {
    const std::size_t B = e.dim(0), T = cfg_.seq_len, S = cfg_.species, D = cfg_.dim;
    if (e.shape() != Shape{B, T, D}) throw_shape("forward_t1", e.shape(), Shape{B, T, D});
    Var pe = add(e, g.constant(positions));
    Var tok = expand(g.param(tokens), {B, S, D});
    Var out = t1.forward(g, concat({pe, tok}, 1), mode);
    return {slice(out, 1, 0, T), slice(out, 1, T, T + S)};
  }

  /// Token-position outputs G of t2, (B, S, D).
  Var forward_t2(Graph& g, Var h, Var z, NormMode mode) {
    if (z.dim(1) != cfg_.species || h.dim(0) != z.dim(0)) throw_shape("forward_t2", h.shape(), z.shape());
    return t2.forward_queries(g, concat({h, z}, 1), h.dim(1), mode);
  }

  /// (B, S, D) -> (B, S) standardized date predictions.
  Var decode(Graph& g, Var feats, NormMode mode) {
    const std::size_t B = feats.dim(0), S = cfg_.species, D = cfg_.dim;
    if (feats.shape() != Shape{B, S, D}) throw_shape("decode", feats.shape(), Shape{B, S, D});
    if (cfg_.batchnorm_before_decoder) feats = batch_norm.forward(g, feats, mode);
    if (cfg_.per_species_decoder) {
      return add(sum(mul(feats, g.param(decoder_weight)), -1), g.param(decoder_bias));
    }
    return reshape(add(matmul(feats, g.param(decoder_weight)), g.param(decoder_bias)), {B, S});
  }

  /// Flattens (B, S, D) features and maps them through the 3-layer MLP.
  Var discriminate(Graph& g, Var feats) {
    if (discriminator.empty()) throw Error("discriminate: model has no discriminator");
    const std::size_t B = feats.dim(0);
    Var x = reshape(feats, {B, cfg_.species * cfg_.dim});
    x = relu(discriminator[0].forward(g, x));
    x = relu(discriminator[1].forward(g, x));
    return discriminator[2].forward(g, x);
  }

  /// Full pass on standardized inputs; returns standardized predictions.
  Var forward(Graph& g, Var x, NormMode mode) {
    MidFeatures mid = forward_t1(g, encode(g, x), mode);
    return decode(g, forward_t2(g, mid.h, mid.z, mode), mode);
  }

  /// Predictions in date units for raw (unstandardized) inputs (B, T, C).
  Tensor predict(const Tensor& raw, NormMode mode, std::size_t chunk = 32) {
    const std::size_t B = raw.dim(0), S = cfg_.species;
    const std::size_t row = cfg_.seq_len * cfg_.channels;
    Tensor out({B, S});
    for (std::size_t b0 = 0; b0 < B; b0 += chunk) {
      const std::size_t nb = std::min(chunk, B - b0);
      Tensor x({nb, cfg_.seq_len, cfg_.channels});
      for (std::size_t i = 0; i < nb * row; ++i) {
        x[i] = input_norm.forward(i % cfg_.channels, raw[b0 * row + i]);
      }
      Graph g(false);
      const Tensor& y = forward(g, g.constant(std::move(x)), mode).value();
      for (std::size_t i = 0; i < nb * S; ++i) {
        out[b0 * S + i] = label_norm.inverse(i % S, y[i]);
      }
    }
    return out;
  }

  std::vector<Parameter*> backbone_parameters() {
    std::vector<Parameter*> out;
    encoder.collect(out);
    out.push_back(&tokens);
    t1.collect(out);
    t2.collect(out);
    out.push_back(&decoder_weight);
    out.push_back(&decoder_bias);
    if (cfg_.batchnorm_before_decoder) batch_norm.collect(out);
    return out;
  }

  std::vector<Parameter*> discriminator_parameters() {
    std::vector<Parameter*> out;
    for (auto& l : discriminator) l.collect(out);
    return out;
  }

  std::vector<Parameter*> parameters() {
    auto out = backbone_parameters();
    for (Parameter* p : discriminator_parameters()) out.push_back(p);
    return out;
  }

  std::vector<HybridLayerNorm*> norms() {
    return {&t1.norm1, &t1.norm2, &t2.norm1, &t2.norm2};
  }

  std::size_t parameter_count() {
    std::size_t n = 0;
    for (Parameter* p : parameters()) n += p->value.size();
    return n;
  }

 private:
  ModelConfig cfg_;
};

}  // namespace miranda
