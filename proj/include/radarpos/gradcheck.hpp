// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks for tape gradients. The difference
// quotients here only ever evaluate forward values, so they stay independent
// of the backward closures they verify.

#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "radarpos/autograd.hpp"

namespace radarpos::gradcheck {

inline constexpr double kDefaultStep = 1e-3;
inline constexpr double kTolerance = 1e-5;

/// Five-point central difference of f at x (x restored on return).
template <class T, class F>
double central_difference(F&& f, T& x, double h = kDefaultStep) {
  const T saved = x;
  auto at = [&](double offset) {
    x = static_cast<T>(static_cast<double>(saved) + offset);
    return static_cast<double>(f());
  };
  const double fp1 = at(h), fm1 = at(-h), fp2 = at(2 * h), fm2 = at(-2 * h);
  x = saved;
  return (8.0 * (fp1 - fm1) - (fp2 - fm2)) / (12.0 * h);
}

/// ||analytic - numeric|| / (||numeric|| + 1e-8), 2-norm over a whole tensor.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    ref += numeric[i] * numeric[i];
  }
  return std::sqrt(diff) / (std::sqrt(ref) + 1e-8);
}

struct Result {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;

  bool passed(double tol = kTolerance) const { return max_relative_error < tol; }
};

using LossBuilder = std::function<Var<double>(Tape<double>&)>;

/// Compares tape gradients of every trainable parameter against finite
/// differences. One Result per parameter tensor.
inline std::vector<Result> check_parameters(ParameterStore<double>& params, const LossBuilder& build,
                                            double h = kDefaultStep) {
  params.zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  auto eval = [&] {
    Tape<double> tape;
    return build(tape).value().item();
  };
  std::vector<Result> results;
  for (auto& [name, p] : params) {
    if (!p.trainable) continue;
    std::vector<double> numeric(p.value.size());
    for (std::size_t i = 0; i < p.value.size(); ++i) numeric[i] = central_difference(eval, p.value[i], h);
    const auto analytic = p.grad.values();
    results.push_back({name, relative_error(analytic, numeric), numeric.size()});
  }
  return results;
}

/// Checks d(loss)/d(input) for a function of explicit input tensors.
inline Result check_inputs(const std::string& name, std::vector<Tensor<double>>& inputs,
                           const std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>& build,
                           double h = kDefaultStep) {
  ParameterStore<double> store;
  for (std::size_t k = 0; k < inputs.size(); ++k) store.add("in" + std::to_string(k), inputs[k]);
  auto loss = [&](Tape<double>& tape) {
    std::vector<Var<double>> vars;
    for (std::size_t k = 0; k < inputs.size(); ++k) vars.push_back(tape.parameter(store.get("in" + std::to_string(k))));
    return build(tape, vars);
  };
  Result out{name, 0.0, 0};
  for (const auto& r : check_parameters(store, loss, h)) {
    out.max_relative_error = std::max(out.max_relative_error, r.max_relative_error);
    out.checked += r.checked;
  }
  return out;
}

}  // namespace radarpos::gradcheck
