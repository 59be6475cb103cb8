#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include "miranda/core/tensor.hpp"

namespace miranda {

/// lambda(p) = 2 / (1 + exp(-steepness p)) - 1.
inline double lambda_schedule(double progress, double steepness = 10.0) {
  if (!(progress >= 0.0 && progress <= 1.0)) throw Error("lambda_schedule: progress outside [0, 1]");
  return 2.0 / (1.0 + std::exp(-steepness * progress)) - 1.0;
}

/// Endless reshuffled passes over [0, n).
class IndexStream {
 public:
  IndexStream(std::size_t n, std::uint64_t seed) : order_(n), rng_(seed) {
    if (n == 0) throw Error("IndexStream: empty domain");
    std::iota(order_.begin(), order_.end(), 0);
    std::shuffle(order_.begin(), order_.end(), rng_);
  }

  std::size_t next() {
    if (pos_ == order_.size()) {
      std::shuffle(order_.begin(), order_.end(), rng_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

  std::size_t size() const { return order_.size(); }

 private:
  std::vector<std::size_t> order_;
  std::mt19937_64 rng_;
  std::size_t pos_ = 0;
};

struct Batch {
  std::vector<std::size_t> source;  // indices into the source set
  std::vector<std::size_t> target;  // indices into the target pool; empty for source-only
};

/// Half source, half target per batch. An epoch is one pass over the larger
/// domain; the smaller one cycles with reshuffling.
class BalancedBatcher {
 public:
  BalancedBatcher(std::size_t n_source, std::size_t n_target, std::size_t batch_size, std::uint64_t seed)
      : half_(batch_size / 2),
        source_(n_source, seed ^ 0x5ULL),
        target_(n_target, seed ^ 0x7ULL) {
    if (batch_size < 2 || batch_size % 2 != 0) throw Error("BalancedBatcher: batch size must be even and >= 2");
  }

  std::size_t batches_per_epoch() const {
    const std::size_t n = std::max(source_.size(), target_.size());
    return (n + half_ - 1) / half_;
  }

  std::vector<Batch> epoch() {
    std::vector<Batch> out(batches_per_epoch());
    for (auto& b : out) {
      for (std::size_t i = 0; i < half_; ++i) b.source.push_back(source_.next());
      for (std::size_t i = 0; i < half_; ++i) b.target.push_back(target_.next());
    }
    return out;
  }

 private:
  std::size_t half_;
  IndexStream source_, target_;
};

/// Source-only batches: one reshuffled pass, last batch may be short.
class SourceBatcher {
 public:
  SourceBatcher(std::size_t n, std::size_t batch_size, std::uint64_t seed)
      : n_(n), batch_(batch_size), rng_(seed) {
    if (n == 0) throw Error("SourceBatcher: empty source set");
    if (batch_size == 0) throw Error("SourceBatcher: batch size must be >= 1");
  }

  std::size_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }

  std::vector<Batch> epoch() {
    std::vector<std::size_t> order(n_);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng_);
    std::vector<Batch> out;
    for (std::size_t i = 0; i < n_; i += batch_) {
      Batch b;
      b.source.assign(order.begin() + static_cast<std::ptrdiff_t>(i),
                      order.begin() + static_cast<std::ptrdiff_t>(std::min(n_, i + batch_)));
      out.push_back(std::move(b));
    }
    return out;
  }

 private:
  std::size_t n_, batch_;
  std::mt19937_64 rng_;
};

}  // namespace miranda
