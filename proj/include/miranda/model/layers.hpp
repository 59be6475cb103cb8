#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "miranda/core/graph.hpp"
#include "miranda/core/ops.hpp"
#include "miranda/model/config.hpp"

namespace miranda {

/// y = x W + b over the last axis; W is (in, out).
struct Linear {
  Parameter weight;
  Parameter bias;

  Linear() = default;
  Linear(const std::string& name, std::size_t in, std::size_t out, std::mt19937_64& rng)
      : weight(name + ".weight", Tensor({in, out})), bias(name + ".bias", Tensor({out}, 0.0)) {
    // Glorot uniform.
    const double a = std::sqrt(6.0 / static_cast<double>(in + out));
    std::uniform_real_distribution<double> u(-a, a);
    for (double& w : weight.value.data()) w = u(rng);
  }

  std::size_t in() const { return weight.value.dim(0); }
  std::size_t out() const { return weight.value.dim(1); }

  Var forward(Graph& g, Var x) {
    if (x.shape().back() != in()) throw_shape("Linear(" + weight.name + ")", x.shape(), weight.value.shape());
    return add(matmul(x, g.param(weight)), g.param(bias));
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&weight);
    out.push_back(&bias);
  }
};

/// Per-vector mean and sigma = sqrt(var + eps) over the last axis, as plain
/// numbers.
struct VectorStats {
  double mean = 0.0;
  double sigma = 0.0;
};

inline std::vector<VectorStats> last_axis_stats(const Tensor& x, double eps) {
  const std::size_t d = x.shape().back();
  const std::size_t rows = x.size() / d;
  std::vector<VectorStats> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* v = x.ptr() + r * d;
    double mu = 0.0;
    for (std::size_t i = 0; i < d; ++i) mu += v[i];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t i = 0; i < d; ++i) var += (v[i] - mu) * (v[i] - mu);
    var /= static_cast<double>(d);
    out[r] = {mu, std::sqrt(var + eps)};
  }
  return out;
}

/// Running source statistics of a hybrid layer norm: one (mu_s, sigma_s) pair
/// per layer.
struct RunningStats {
  double mean = 0.0;
  double sigma = 1.0;
  bool initialized = false;
  std::size_t updates = 0;

  /// mu_s <- (1-m) mu_s + m mu(x), sigma_s <- (1-m) sigma_s + m sigma(x).
  void update(double batch_mean, double batch_sigma, double momentum) {
    mean = (1.0 - momentum) * mean + momentum * batch_mean;
    sigma = (1.0 - momentum) * sigma + momentum * batch_sigma;
    initialized = true;
    ++updates;
  }

  friend bool operator==(const RunningStats&, const RunningStats&) = default;
};

/// Layer normalization over the last axis. With `hybrid` set it also keeps
/// running source statistics: standard LN on source batches (updating the
/// stats in kSourceTrain), and normalization by the stored (mu_s, sigma_s) in
/// kTargetEval. Without `hybrid` the mode is ignored.
class HybridLayerNorm {
 public:
  HybridLayerNorm() = default;
  HybridLayerNorm(const std::string& name, std::size_t dim, bool hybrid,
                  double momentum, double eps)
      : gamma(name + ".gamma", Tensor({dim}, 1.0)),
        beta(name + ".beta", Tensor({dim}, 0.0)),
        hybrid_(hybrid),
        momentum_(momentum),
        eps_(eps) {}

  Parameter gamma;
  Parameter beta;
  RunningStats stats;

  bool hybrid() const { return hybrid_; }
  double momentum() const { return momentum_; }
  double eps() const { return eps_; }

  Var forward(Graph& g, Var x, NormMode mode) {
    if (x.shape().back() != gamma.value.size()) {
      throw_shape("LayerNorm(" + gamma.name + ")", x.shape(), gamma.value.shape());
    }
    if (!hybrid_ || mode != NormMode::kTargetEval) {
      if (hybrid_ && mode == NormMode::kSourceTrain) update(x.value());
      return standard(g, x);
    }
    if (!stats.initialized) {
      throw Error("HybridLayerNorm(" + gamma.name + "): uninitialized running statistics");
    }
    Var xn = scale(add_scalar(x, -stats.mean), 1.0 / stats.sigma);
    return add(mul(xn, g.param(gamma)), g.param(beta));
  }

  /// Standard LN, independent of the running statistics.
  Var standard(Graph& g, Var x) {
    const Shape& s = x.shape();
    Var mu = expand(mean(x, -1, true), s);
    Var xc = sub(x, mu);
    Var var = mean(mul(xc, xc), -1, true);
    Var sd = expand(sqrt(add_scalar(var, eps_)), s);
    return add(mul(div(xc, sd), g.param(gamma)), g.param(beta));
  }

  /// Folds the batch's LN statistics (per-vector values averaged over every
  /// vector in the batch) into the running estimates.
  void update(const Tensor& x) {
    const auto per_vector = last_axis_stats(x, eps_);
    double mu = 0.0, sigma = 0.0;
    for (const auto& v : per_vector) {
      mu += v.mean;
      sigma += v.sigma;
    }
    const auto n = static_cast<double>(per_vector.size());
    stats.update(mu / n, sigma / n, momentum_);
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

 private:
  bool hybrid_ = false;
  double momentum_ = 0.1;
  double eps_ = 1e-5;
};

/// Batch normalization over the channel (last) axis with every other axis
/// pooled. Inserted before the decoder for AdaBN.
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, std::size_t dim, double momentum, double eps)
      : gamma(name + ".gamma", Tensor({dim}, 1.0)),
        beta(name + ".beta", Tensor({dim}, 0.0)),
        running_mean(dim, 0.0),
        running_var(dim, 1.0),
        momentum_(momentum),
        eps_(eps) {}

  Parameter gamma;
  Parameter beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;

  double eps() const { return eps_; }

  Var forward(Graph& g, Var x, NormMode mode) {
    const Shape& s = x.shape();
    const std::size_t d = s.back();
    const std::size_t rows = x.value().size() / d;
    if (mode == NormMode::kSourceTrain) {
      if (rows < 2) throw Error("BatchNorm: training needs at least 2 rows");
      Var flat = reshape(x, {rows, d});
      Var mu = mean(flat, 0, true);
      Var xc = sub(flat, expand(mu, {rows, d}));
      Var var = mean(mul(xc, xc), 0, true);
      update_running(mu.value(), var.value(), rows);
      Var sd = expand(sqrt(add_scalar(var, eps_)), {rows, d});
      Var y = add(mul(div(xc, sd), g.param(gamma)), g.param(beta));
      return reshape(y, s);
    }
    Tensor shift({d}), inv({d});
    for (std::size_t i = 0; i < d; ++i) {
      shift[i] = -running_mean[i];
      inv[i] = 1.0 / std::sqrt(running_var[i] + eps_);
    }
    Var xn = mul(add(x, g.constant(shift)), g.constant(inv));
    return add(mul(xn, g.param(gamma)), g.param(beta));
  }

  /// Replaces the running statistics with exact population statistics
  /// accumulated over `begin_population` .. `end_population`.
  void begin_population() {
    pop_sum_.assign(running_mean.size(), 0.0);
    pop_sq_.assign(running_mean.size(), 0.0);
    pop_n_ = 0;
  }
  void accumulate_population(const Tensor& x) {
    const std::size_t d = running_mean.size();
    if (x.shape().back() != d) throw_shape("BatchNorm::accumulate", x.shape(), Shape{d});
    for (std::size_t r = 0; r < x.size() / d; ++r) {
      for (std::size_t i = 0; i < d; ++i) {
        const double v = x[r * d + i];
        pop_sum_[i] += v;
        pop_sq_[i] += v * v;
      }
      ++pop_n_;
    }
  }
  void end_population() {
    if (pop_n_ < 2) throw Error("BatchNorm: population pass needs at least 2 rows");
    const auto n = static_cast<double>(pop_n_);
    for (std::size_t i = 0; i < running_mean.size(); ++i) {
      running_mean[i] = pop_sum_[i] / n;
      running_var[i] = std::max(0.0, pop_sq_[i] / n - running_mean[i] * running_mean[i]) * n / (n - 1.0);
    }
  }

  void collect(std::vector<Parameter*>& out) {
    out.push_back(&gamma);
    out.push_back(&beta);
  }

 private:
  void update_running(const Tensor& mu, const Tensor& var, std::size_t rows) {
    const double unbias = static_cast<double>(rows) / static_cast<double>(rows - 1);
    for (std::size_t i = 0; i < running_mean.size(); ++i) {
      running_mean[i] = (1.0 - momentum_) * running_mean[i] + momentum_ * mu[i];
      running_var[i] = (1.0 - momentum_) * running_var[i] + momentum_ * var[i] * unbias;
    }
  }

  double momentum_ = 0.1;
  double eps_ = 1e-5;
  std::vector<double> pop_sum_, pop_sq_;
  std::size_t pop_n_ = 0;
};

class MultiHeadAttention {
 public:
  MultiHeadAttention() = default;
  MultiHeadAttention(const std::string& name, std::size_t dim, std::size_t heads,
                     std::mt19937_64& rng)
      : q(name + ".q", dim, dim, rng),
        k(name + ".k", dim, dim, rng),
        v(name + ".v", dim, dim, rng),
        o(name + ".out", dim, dim, rng),
        heads_(heads) {}

  Linear q, k, v, o;

  /// queries (B, Lq, D) attend over keys/values (B, Lk, D).
  Var forward(Graph& g, Var queries, Var keys) {
    Var ctx = attention(q.forward(g, queries), k.forward(g, keys), v.forward(g, keys), heads_);
    return o.forward(g, ctx);
  }

  void collect(std::vector<Parameter*>& out) {
    q.collect(out);
    k.collect(out);
    v.collect(out);
    o.collect(out);
  }

 private:
  std::size_t heads_ = 1;
};

/// Post-norm transformer encoder layer without dropout:
///   x1 = LN1(x + MHA(x)),  y = LN2(x1 + FFN(x1)).
class TransformerLayer {
 public:
  TransformerLayer() = default;
  TransformerLayer(const std::string& name, const ModelConfig& cfg, bool hybrid,
                   std::mt19937_64& rng)
      : attn(name + ".attn", cfg.dim, cfg.heads, rng),
        ffn_in(name + ".ffn_in", cfg.dim, cfg.ffn_dim, rng),
        ffn_out(name + ".ffn_out", cfg.ffn_dim, cfg.dim, rng),
        norm1(name + ".norm1", cfg.dim, hybrid, cfg.ln_momentum, cfg.ln_eps),
        norm2(name + ".norm2", cfg.dim, hybrid, cfg.ln_momentum, cfg.ln_eps) {}

  MultiHeadAttention attn;
  Linear ffn_in, ffn_out;
  HybridLayerNorm norm1, norm2;

  /// Outputs for every position of x (B, L, D).
  Var forward(Graph& g, Var x, NormMode mode) { return forward_queries(g, x, 0, mode); }

  /// Outputs only for positions [first, L); every position still serves as a
  /// key. Equal to the corresponding rows of forward(); normalization
  /// statistics see only the computed rows.
  Var forward_queries(Graph& g, Var x, std::size_t first, NormMode mode) {
    Var queries = first == 0 ? x : slice(x, 1, first, x.dim(1));
    Var x1 = norm1.forward(g, add(queries, attn.forward(g, queries, x)), mode);
    Var f = ffn_out.forward(g, relu(ffn_in.forward(g, x1)));
    return norm2.forward(g, add(x1, f), mode);
  }

  void collect(std::vector<Parameter*>& out) {
    attn.collect(out);
    ffn_in.collect(out);
    ffn_out.collect(out);
    norm1.collect(out);
    norm2.collect(out);
  }
};

/// Sinusoidal encodings, (T, D).
inline Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Tensor pe({length, dim});
  for (std::size_t t = 0; t < length; ++t) {
    for (std::size_t i = 0; i < dim; ++i) {
      const double freq = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(dim));
      const double a = static_cast<double>(t) * freq;
      pe.at(t, i) = (i % 2 == 0) ? std::sin(a) : std::cos(a);
    }
  }
  return pe;
}

}  // namespace miranda
