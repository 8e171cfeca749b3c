// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "span/rng.hpp"
#include "span/tensor.hpp"

namespace span::test {

using ag::Tape;
using ag::Tensor;
using ag::Var;

inline Tensor random_tensor(ag::Shape shape, Xorshift64Star& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape));
  for (double& v : t.data) v = rng.uniform(lo, hi);
  return t;
}

/// Relative error with a floor so that two near-zero values compare by
/// absolute difference.
inline double rel_error(double a, double b, double floor = 1e-8) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Loss builder over leaf variables placed on a fresh tape.
using LossFn = std::function<Var(Tape&, const std::vector<Var>&)>;

/// Largest elementwise relative error between the tape gradient and central
/// finite differences (step h) of every input.
inline double gradcheck(const LossFn& f, std::vector<Tensor> inputs, double h = 1e-5) {
  std::vector<std::vector<double>> analytic;
  {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.variable(x));
    tape.backward(f(tape, vars));
    for (const auto& v : vars) analytic.push_back(tape.grad(v));
  }
  auto eval = [&]() {
    Tape tape;
    std::vector<Var> vars;
    for (const auto& x : inputs) vars.push_back(tape.constant(x));
    return f(tape, vars).value().item();
  };
  double worst = 0.0;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    for (std::size_t j = 0; j < inputs[i].size(); ++j) {
      const double x0 = inputs[i].data[j];
      inputs[i].data[j] = x0 + h;
      const double up = eval();
      inputs[i].data[j] = x0 - h;
      const double down = eval();
      inputs[i].data[j] = x0;
      worst = std::max(worst, rel_error(analytic[i][j], (up - down) / (2.0 * h)));
    }
  return worst;
}

/// Same check over model parameters: `loss` builds a fresh tape each call.
inline double gradcheck_params(const std::function<double(bool backward)>& loss,
                               const std::vector<ag::Parameter*>& params, double h = 1e-5,
                               double floor = 1e-8) {
  for (auto* p : params) p->zero_grad();
  loss(true);
  double worst = 0.0;
  for (auto* p : params) {
    const auto analytic = p->grad;
    for (std::size_t j = 0; j < p->value.size(); ++j) {
      const double x0 = p->value.data[j];
      p->value.data[j] = x0 + h;
      const double up = loss(false);
      p->value.data[j] = x0 - h;
      const double down = loss(false);
      p->value.data[j] = x0;
      const double e = rel_error(analytic[j], (up - down) / (2.0 * h), floor);
      if (e > worst) worst = e;
    }
  }
  return worst;
}

}  // namespace span::test
