#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "stabkit/tensor.hpp"

namespace stabkit {

// Adam with bias correction. Parameters must be unfrozen; updating a frozen
// parameter is a contract violation, not a no-op.
class Adam {
 public:
  explicit Adam(std::vector<Tensor> params, double beta1 = 0.9, double beta2 = 0.999,
                double eps = 1e-8)
      : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (const auto& p : params_) {
      m_.emplace_back(p.size(), 0.0);
      v_.emplace_back(p.size(), 0.0);
    }
  }

  // Applies one update and clears the consumed gradients. Accumulation over
  // several backward passes before a step still works.
  void step(double lr) {
    ++t_;
    double bc1 = 1.0 - std::pow(beta1_, t_);
    double bc2 = 1.0 - std::pow(beta2_, t_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      Tensor& p = params_[k];
      if (p.frozen()) throw std::logic_error("Adam: attempted update of a frozen parameter");
      if (!p.requires_grad()) throw std::logic_error("Adam: parameter has no gradient");
      const auto& g = p.grad();
      for (std::int64_t i = 0; i < p.size(); ++i) {
        m_[k][i] = beta1_ * m_[k][i] + (1.0 - beta1_) * g[i];
        v_[k][i] = beta2_ * v_[k][i] + (1.0 - beta2_) * g[i] * g[i];
        double mhat = m_[k][i] / bc1;
        double vhat = v_[k][i] / bc2;
        p.data()[i] -= lr * mhat / (std::sqrt(vhat) + eps_);
      }
      p.zero_grad();
    }
  }

  const std::vector<Tensor>& params() const { return params_; }

 private:
  std::vector<Tensor> params_;
  std::vector<std::vector<double>> m_, v_;
  double beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace stabkit
