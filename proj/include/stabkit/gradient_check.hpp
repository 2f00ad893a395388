#pragma once

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "stabkit/ops.hpp"

namespace stabkit {

struct GradCheckReport {
  double max_rel_error = 0.0;
  int worst_input = -1;
  std::int64_t worst_coord = -1;
};

// Compares reverse-mode gradients of a scalar function against central
// finite differences over every coordinate of every listed input. The
// function must read the inputs' current values on each call. Relative
// error uses max(1, |fd|) in the denominator.
inline GradCheckReport gradient_check(const std::function<Tensor()>& f,
                                      const std::vector<Tensor>& inputs, double eps = 1e-5) {
  for (auto& in : inputs)
    if (!in.requires_grad())
      throw std::invalid_argument("gradient_check: every input must require grad");

  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor loss = f();
    if (loss.size() != 1) throw std::invalid_argument("gradient_check: f must be scalar-valued");
    if (!std::isfinite(loss.item()))
      throw std::runtime_error("gradient_check: non-finite loss value");
    tape.backward(loss);
    for (auto& in : inputs) analytic.push_back(in.grad());
    tape.zero_grads();
  }

  GradCheckReport report;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    Tensor in = inputs[k];
    for (std::int64_t i = 0; i < in.size(); ++i) {
      double saved = in.data()[i];
      in.data()[i] = saved + eps;
      double up = f().item();
      in.data()[i] = saved - eps;
      double down = f().item();
      in.data()[i] = saved;
      double fd = (up - down) / (2.0 * eps);
      if (!std::isfinite(fd))
        throw std::runtime_error("gradient_check: non-finite difference at input " +
                                 std::to_string(k) + " coordinate " + std::to_string(i));
      double rel = std::abs(analytic[k][i] - fd) / std::max(1.0, std::abs(fd));
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_input = static_cast<int>(k);
        report.worst_coord = i;
      }
    }
  }
  return report;
}

inline double gradient_check_max_error(const std::function<Tensor()>& f, const Tensor& x,
                                       double eps = 1e-5) {
  return gradient_check(f, {x}, eps).max_rel_error;
}

}  // namespace stabkit
