#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "bdh/grad_tape.hpp"

namespace bdh::testing {

using TapeD = GradTape<double>;
using VarD = TapeD::Var;
using ScalarBuilder = std::function<VarD(TapeD&, const std::vector<VarD>&)>;

// Worst per-input relative error ||g - g_fd|| / max(||g||, ||g_fd||) between the
// tape's gradient and central finite differences.
inline double fd_relative_error(const ScalarBuilder& build, const std::vector<TensorD>& inputs, double h) {
  TapeD tape;
  std::vector<VarD> vars;
  for (const auto& in : inputs) vars.push_back(tape.leaf(in, true));
  auto loss = build(tape, vars);
  tape.backward(loss);

  auto eval = [&](const std::vector<TensorD>& xs) {
    TapeD t;
    std::vector<VarD> vs;
    for (const auto& x : xs) vs.push_back(t.leaf(x, false));
    return t.value(build(t, vs))[0];
  };

  double worst = 0;
  for (std::size_t k = 0; k < inputs.size(); ++k) {
    const TensorD analytic = tape.grad(vars[k]);
    double diff2 = 0, a2 = 0, f2 = 0;
    for (std::size_t i = 0; i < inputs[k].size(); ++i) {
      auto plus = inputs, minus = inputs;
      plus[k][i] += h;
      minus[k][i] -= h;
      const double fd = (eval(plus) - eval(minus)) / (2 * h);
      diff2 += (fd - analytic[i]) * (fd - analytic[i]);
      a2 += analytic[i] * analytic[i];
      f2 += fd * fd;
    }
    const double scale = std::sqrt(std::max(a2, f2));
    if (scale > 1e-12) worst = std::max(worst, std::sqrt(diff2) / scale);
  }
  return worst;
}

}  // namespace bdh::testing
