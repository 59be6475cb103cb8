#pragma once

#include <cstddef>
#include <string>

#include "miranda/core/tensor.hpp"

namespace miranda {

/// How normalization layers behave for the current forward pass.
enum class NormMode {
  kSourceTrain,  // batch statistics; hybrid layers update running stats
  kSourceEval,   // batch statistics; no updates
  kTargetEval,   // hybrid layers use stored source statistics
};

struct ModelConfig {
  std::size_t channels = 7;      // C
  std::size_t seq_len = 365;     // T
  std::size_t species = 5;       // S
  std::size_t dim = 64;          // D
  std::size_t disc_dim = 128;    // F, hidden width of the discriminator
  std::size_t disc_out = 128;    // discriminator output width; 0 = none
  std::size_t heads = 4;
  std::size_t ffn_dim = 128;
  double ln_momentum = 0.1;      // m
  double ln_eps = 1e-5;
  bool hybrid_t1 = false;        // hybrid LN in the first layer (DANL)
  bool hybrid_t2 = true;         // hybrid LN in the second layer
  bool per_species_decoder = false;
  bool batchnorm_before_decoder = false;  // AdaBN

  void validate() const {
    auto positive = [](std::size_t v, const char* name) {
      if (v == 0) throw Error(std::string("ModelConfig: ") + name + " must be >= 1");
    };
    positive(channels, "channels");
    positive(seq_len, "seq_len");
    positive(species, "species");
    positive(dim, "dim");
    positive(heads, "heads");
    positive(ffn_dim, "ffn_dim");
    if (disc_out > 0) positive(disc_dim, "disc_dim");
    if (dim % heads != 0) throw Error("ModelConfig: dim must be divisible by heads");
    if (!(ln_momentum > 0.0 && ln_momentum <= 1.0)) {
      throw Error("ModelConfig: ln_momentum must lie in (0, 1]");
    }
    if (!(ln_eps >= 0.0)) throw Error("ModelConfig: ln_eps must be >= 0");
  }

  /// Closed-form number of learnable scalars.
  std::size_t parameter_count() const {
    const std::size_t D = dim, S = species;
    std::size_t n = channels * D + D;   // encoder
    n += S * D;                         // tokens
    const std::size_t layer = 4 * (D * D + D)            // q, k, v, out
                              + (D * ffn_dim + ffn_dim)  // ffn in
                              + (ffn_dim * D + D)        // ffn out
                              + 2 * 2 * D;               // two norms
    n += 2 * layer;
    n += per_species_decoder ? S * D + S : D + 1;
    if (batchnorm_before_decoder) n += 2 * D;
    if (disc_out > 0) {
      const std::size_t F = disc_dim;
      n += S * D * F + F + F * F + F + F * disc_out + disc_out;
    }
    return n;
  }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

}  // namespace miranda
