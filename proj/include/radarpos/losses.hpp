// SPDX-License-Identifier: Apache-2.0
//
// Masked-position objectives. Row i of the logits o[N×N] scores which patch
// index the token in slot i came from; its true index is i. Only masked rows
// contribute. Three variants:
//
//   position:  -Σ_i log softmax(o_i)_i
//   smoothed:  -Σ_i Σ_j w*(i,j) log softmax(o_i)_j,  w(i,j) = exp(-|i-j| / σ²), rows normalised
//   radarpos:  -Σ_i C_i Σ_j w*(i,j) log softmax(o_i)_j, C = softmax_i(cos(cls, token_i) / T)
//
// With Reduction::mean the sum over masked rows is divided by the masked count.

#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "radarpos/model.hpp"
#include "radarpos/ops.hpp"

namespace radarpos {

enum class Reduction : std::uint8_t { mean, sum };

/// Row-normalised Gaussian weights over a distance matrix.
inline Tensor<double> smoothing_weights_from_distance(const Tensor<double>& dist, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("smoothing sigma must be positive");
  const std::size_t n = dist.rows();
  Tensor<double> w(Shape{n, dist.cols()});
  const double s2 = sigma * sigma;
  for (std::size_t i = 0; i < n; ++i) {
    double total = 0.0;
    for (std::size_t j = 0; j < dist.cols(); ++j) total += (w.at(i, j) = std::exp(-dist.at(i, j) / s2));
    for (std::size_t j = 0; j < dist.cols(); ++j) w.at(i, j) /= total;
  }
  return w;
}

/// Un-normalised weights w(i,j) = exp(-|i-j| / σ²).
inline Tensor<double> raw_smoothing_weights(std::size_t n, double sigma) {
  if (!(sigma > 0.0)) throw ConfigError("smoothing sigma must be positive");
  Tensor<double> w(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      w.at(i, j) = std::exp(-std::abs(static_cast<double>(i) - static_cast<double>(j)) / (sigma * sigma));
  return w;
}

/// w*: index-distance smoothing weights, each row summing to 1.
inline Tensor<double> smoothing_weights(std::size_t n, double sigma) {
  Tensor<double> dist(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist.at(i, j) = std::abs(static_cast<double>(i) - static_cast<double>(j));
  return smoothing_weights_from_distance(dist, sigma);
}

/// w* over patch TOA differences, measured in units of the mean patch spacing.
inline Tensor<double> toa_smoothing_weights(const std::vector<double>& patch_toa, double sigma) {
  const std::size_t n = patch_toa.size();
  if (n < 2) return smoothing_weights(n, sigma);
  const double spacing = (patch_toa.back() - patch_toa.front()) / static_cast<double>(n - 1);
  if (!(spacing > 0.0)) throw DomainError("patch TOAs must be strictly increasing");
  Tensor<double> dist(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) dist.at(i, j) = std::abs(patch_toa[i] - patch_toa[j]) / spacing;
  return smoothing_weights_from_distance(dist, sigma);
}

/// C = softmax over rows of cos(cls, token_i) / T.
template <class T>
Var<T> attention_weights(const Var<T>& cls, const Var<T>& tokens, double temperature) {
  if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  return softmax(scalar_mul(cosine_rows(cls, tokens), static_cast<T>(1.0 / temperature)), 0);
}

namespace detail {

template <class T>
Var<T> masked_target_loss(const Var<T>& logits, const MaskPlan& plan, const Tensor<double>& targets,
                          const std::optional<Var<T>>& row_weights, Reduction reduction) {
  const Shape shape = logits.shape();  // copy: the tape may reallocate below
  if (shape.size() != 2 || shape[0] != plan.size() || shape[1] != targets.cols() || targets.rows() != plan.size()) {
    throw DimensionError("logits " + to_string(shape) + " do not match a mask of " + std::to_string(plan.size()) +
                         " and targets " + to_string(targets.shape()));
  }
  if (plan.masked_count == 0) throw ContractError("loss is undefined without masked rows");
  auto& tape = logits.tape();
  Tensor<T> w(shape);
  for (std::size_t i = 0; i < shape[0]; ++i) {
    if (!plan.is_masked(i)) continue;
    for (std::size_t j = 0; j < shape[1]; ++j) w.at(i, j) = static_cast<T>(targets.at(i, j));
  }
  auto per_row = sum_last(mul(log_softmax(logits, 1), tape.constant(std::move(w))));
  if (row_weights) {
    if (row_weights->shape() != Shape{shape[0]}) throw DimensionError("attention weights must be [N]");
    per_row = mul(per_row, *row_weights);
  }
  const double scale = reduction == Reduction::mean ? -1.0 / static_cast<double>(plan.masked_count) : -1.0;
  return scalar_mul(sum(per_row), static_cast<T>(scale));
}

inline Tensor<double> identity_targets(std::size_t n) {
  Tensor<double> eye(Shape{n, n});
  for (std::size_t i = 0; i < n; ++i) eye.at(i, i) = 1.0;
  return eye;
}

}  // namespace detail

/// Cross-entropy of each masked row against its own index.
template <class T>
Var<T> position_loss(const Var<T>& logits, const MaskPlan& plan, Reduction reduction = Reduction::mean) {
  return detail::masked_target_loss(logits, plan, detail::identity_targets(plan.size()), std::optional<Var<T>>{}, reduction);
}

template <class T>
Var<T> smoothed_loss(const Var<T>& logits, const MaskPlan& plan, const Tensor<double>& wstar,
                     Reduction reduction = Reduction::mean) {
  return detail::masked_target_loss(logits, plan, wstar, std::optional<Var<T>>{}, reduction);
}

template <class T>
Var<T> radarpos_loss(const Var<T>& logits, const MaskPlan& plan, const Tensor<double>& wstar,
                     const Var<T>& attention, Reduction reduction = Reduction::mean) {
  return detail::masked_target_loss(logits, plan, wstar, std::optional<Var<T>>(attention), reduction);
}

/// Cross-entropy of class logits [K] against a label.
template <class T>
Var<T> cross_entropy(const Var<T>& logits, std::size_t label) {
  if (logits.shape().size() != 1 || label >= logits.shape()[0]) throw DimensionError("cross_entropy: bad label/shape");
  return scalar_mul(element(log_softmax(logits, 0), label), T{-1});
}

}  // namespace radarpos
