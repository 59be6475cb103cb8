#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <string>
#include <vector>

#include "miranda/core/graph.hpp"
#include "miranda/core/ops.hpp"

namespace miranda {

enum class Guidance { kYear, kAnnualTemperature, kElevation };

inline const char* to_string(Guidance g) {
  switch (g) {
    case Guidance::kYear: return "year";
    case Guidance::kAnnualTemperature: return "annual-temperature";
    case Guidance::kElevation: return "elevation";
  }
  return "?";
}

inline Guidance guidance_from_string(const std::string& s) {
  if (s == "year") return Guidance::kYear;
  if (s == "annual-temperature") return Guidance::kAnnualTemperature;
  if (s == "elevation") return Guidance::kElevation;
  throw Error("unknown guidance '" + s + "'");
}

struct RankLossConfig {
  double tau = 0.1;
  Guidance guidance = Guidance::kYear;

  void validate() const {
    if (!(tau > 0.0)) throw Error("RankLossConfig: tau must be > 0");
  }
};

inline constexpr double kRankNormEps = 1e-8;

/// Number of feature vectors so far whose norm fell below kRankNormEps.
inline std::atomic<std::size_t>& rank_loss_zero_norm_warnings() {
  static std::atomic<std::size_t> count{0};
  return count;
}

/// Mean squared error over entries where `target` is not NaN (NaN marks a
/// missing label).
inline Var mse(Var pred, const Tensor& target) {
  if (pred.shape() != target.shape()) throw_shape("mse", pred.shape(), target.shape());
  Tensor y(target.shape(), 0.0), mask(target.shape(), 0.0);
  std::size_t n = 0;
  for (std::size_t i = 0; i < target.size(); ++i) {
    if (std::isnan(target[i])) continue;
    y[i] = target[i];
    mask[i] = 1.0;
    ++n;
  }
  if (n == 0) throw Error("mse: every label is masked");
  Graph& g = pred.graph();
  Var d = mul(sub(pred, g.constant(std::move(y))), g.constant(std::move(mask)));
  return scale(sum_all(mul(d, d)), 1.0 / static_cast<double>(n));
}

/// Rank-N-Contrast over rows of `features` (N, F) with scalar guidance per
/// row:
///   L = 1/N sum_i 1/N sum_{j != i} -log( e^{s_ij} / sum_{k in S_ij} e^{s_ik} ),
///   s_ij = cos(f_i, f_j) / tau,  S_ij = {k != i : |g_i - g_k| >= |g_i - g_j|}.
inline Var rank_n_contrast(Var features, const std::vector<double>& guidance,
                           const RankLossConfig& cfg = {}) {
  cfg.validate();
  if (features.rank() != 2) throw_shape("rank_n_contrast", features.shape(), Shape{0, 0});
  const std::size_t N = features.dim(0);
  if (N < 2) throw Error("rank_n_contrast: need at least 2 samples, got " + std::to_string(N));
  if (guidance.size() != N) {
    throw Error("rank_n_contrast: " + std::to_string(guidance.size()) + " guidance values for " +
                std::to_string(N) + " samples");
  }
  Graph& g = features.graph();
  std::size_t clamped = 0;
  Var fn = l2_normalize(features, kRankNormEps, &clamped);
  if (clamped) rank_loss_zero_norm_warnings() += clamped;
  Var s = scale(matmul(fn, transpose(fn)), 1.0 / cfg.tau);  // (N, N)

  // Row-wise shift by a constant keeps the exponentials in range.
  Tensor shift({N, N});
  for (std::size_t i = 0; i < N; ++i) {
    double mx = -INFINITY;
    for (std::size_t k = 0; k < N; ++k) {
      if (k != i) mx = std::max(mx, s.value().at(i, k));
    }
    for (std::size_t k = 0; k < N; ++k) shift[i * N + k] = mx;
  }
  Var shifted = sub(s, g.constant(shift));

  // member[i][j][k] = 1 iff k in S_ij; the j == i rows only keep the log finite.
  // Distances closer than tie_tol compare as equal, so rounding from an affine
  // change of guidance units cannot move a sample across a tie.
  double scale_g = 0.0;
  for (double v : guidance) scale_g = std::max(scale_g, std::abs(v));
  const double tie_tol = 1e-10 * scale_g;
  Tensor member({N, N, N}, 0.0), pair_mask({N, N}, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < N; ++j) {
      if (j == i) {
        member[(i * N + j) * N + (i + 1) % N] = 1.0;
        continue;
      }
      pair_mask[i * N + j] = 1.0;
      const double dij = std::abs(guidance[i] - guidance[j]);
      for (std::size_t k = 0; k < N; ++k) {
        if (k != i && std::abs(guidance[i] - guidance[k]) >= dij - tie_tol) member[(i * N + j) * N + k] = 1.0;
      }
    }
  }
  Var e = reshape(exp(shifted), {N, N, 1});
  Var denom = reshape(matmul(g.constant(std::move(member)), e), {N, N});
  Var terms = sub(log(denom), shifted);
  const double n = static_cast<double>(N);
  return scale(sum_all(mul(terms, g.constant(std::move(pair_mask)))), 1.0 / (n * n));
}

/// Mean binary cross-entropy of domain logits (N) or (N, 1); label 1 marks
/// the target domain.
inline Var binary_domain_loss(Var logits, const std::vector<int>& domains) {
  const std::size_t N = logits.value().size();
  if (domains.size() != N || logits.shape().back() != (logits.rank() == 1 ? N : 1)) {
    throw_shape("binary_domain_loss", logits.shape(), Shape{domains.size()});
  }
  Tensor y({N});
  for (std::size_t i = 0; i < N; ++i) {
    if (domains[i] != 0 && domains[i] != 1) throw Error("binary_domain_loss: labels must be 0 or 1");
    y[i] = domains[i];
  }
  Var x = reshape(logits, {N});
  // BCE with logits: softplus(x) - y x.
  Var l = sub(softplus(x), mul(x, logits.graph().constant(std::move(y))));
  return mean_all(l);
}

/// CORAL: || C_s - C_t ||_F^2 / (4 d^2) with unbiased feature covariances.
inline Var coral(Var source, Var target) {
  if (source.rank() != 2 || target.rank() != 2 || source.dim(1) != target.dim(1)) {
    throw_shape("coral", source.shape(), target.shape());
  }
  if (source.dim(0) < 2 || target.dim(0) < 2) throw Error("coral: need at least 2 samples per domain");
  auto cov = [](Var x) {
    const std::size_t n = x.dim(0);
    Var xc = sub(x, expand(mean(x, 0, true), x.shape()));
    return scale(matmul(transpose(xc), xc), 1.0 / static_cast<double>(n - 1));
  };
  Var diff = sub(cov(source), cov(target));
  const double d = static_cast<double>(source.dim(1));
  return scale(sum_all(mul(diff, diff)), 1.0 / (4.0 * d * d));
}

}  // namespace miranda
