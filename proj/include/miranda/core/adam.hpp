#pragma once

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "miranda/core/graph.hpp"

namespace miranda {

struct AdamOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are bound to the parameter list
/// given at construction; the list order must stay fixed.
class Adam {
 public:
  Adam(std::vector<Parameter*> params, double lr, AdamOptions opts = {})
      : params_(std::move(params)), lr_(lr), opts_(opts) {
    if (!(lr > 0.0)) throw Error("Adam: learning rate must be > 0");
    for (Parameter* p : params_) {
      m_.emplace_back(p->value.shape(), 0.0);
      v_.emplace_back(p->value.shape(), 0.0);
    }
  }

  /// Applies one update from the current Parameter::grad buffers. Non-finite
  /// gradients abort the step before any parameter is modified.
  void step() {
    for (const Parameter* p : params_) {
      if (p->grad.shape() != p->value.shape()) {
        throw ShapeError("Adam: gradient/value shape mismatch for '" + p->name + "'");
      }
      for (double g : p->grad.data()) {
        if (!std::isfinite(g)) {
          throw Error("Adam: non-finite gradient in parameter '" + p->name + "'");
        }
      }
    }
    ++step_;
    const double bc1 = 1.0 - std::pow(opts_.beta1, static_cast<double>(step_));
    const double bc2 = 1.0 - std::pow(opts_.beta2, static_cast<double>(step_));
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Parameter& p = *params_[k];
      double* w = p.value.ptr();
      const double* g = p.grad.ptr();
      double* m = m_[k].ptr();
      double* v = v_[k].ptr();
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        m[i] = opts_.beta1 * m[i] + (1.0 - opts_.beta1) * g[i];
        v[i] = opts_.beta2 * v[i] + (1.0 - opts_.beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        w[i] -= lr_ * mhat / (std::sqrt(vhat) + opts_.eps);
      }
    }
  }

  void zero_grad() {
    for (Parameter* p : params_) p->zero_grad();
  }

  std::size_t steps() const { return step_; }
  double lr() const { return lr_; }
  const std::vector<Tensor>& first_moments() const { return m_; }
  const std::vector<Tensor>& second_moments() const { return v_; }

 private:
  std::vector<Parameter*> params_;
  double lr_;
  AdamOptions opts_;
  std::vector<Tensor> m_, v_;
  std::size_t step_ = 0;
};

}  // namespace miranda
