// SPDX-License-Identifier: Apache-2.0
//
// Masked-position pretraining loop.
//
// Per sample: tokenize -> plan_mask -> apply_position_mask -> encode ->
// decode -> project_positions -> loss. Gradients are averaged over the batch
// and applied with AdamW at a constant learning rate.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <numeric>
#include <span>
#include <sstream>
#include <vector>

#include "radarpos/losses.hpp"
#include "radarpos/model.hpp"
#include "radarpos/optim.hpp"

namespace radarpos {

enum class PretrainObjective : std::uint8_t { position, smoothed, radarpos };
enum class SmoothingDistance : std::uint8_t { index, toa };

struct PretrainHyper {
  std::size_t epochs = 300;
  std::size_t batch_size = 256;
  double lr = 1e-5;
  double sigma = 0.9;
  double temperature = 0.95;
  AdamWConfig adamw{};
  PretrainObjective objective = PretrainObjective::radarpos;
  Reduction reduction = Reduction::mean;
  SmoothingDistance distance = SmoothingDistance::index;
  bool detach_attention = true;  // C enters as a constant weight (stop-gradient)

  void validate() const {
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(lr >= 0.0)) throw ConfigError("lr must be non-negative");
    if (!(sigma > 0.0)) throw ConfigError("sigma must be positive");
    if (!(temperature > 0.0)) throw ConfigError("temperature must be positive");
  }
};

struct EpochLog {
  std::size_t epoch = 0;
  double loss = 0.0;
  double lr = 0.0;
  double wall_ms = 0.0;
};

struct PretrainResult {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

template <class T>
struct PretrainForward {
  Var<T> logits;     // [N×N]
  Var<T> attention;  // [N], C
};

template <class T>
PretrainForward<T> pretrain_forward(const RadarPosModel<T>& model, Tape<T>& tape, const pdw::SampleRecord& sample,
                                    const MaskPlan& plan, double temperature, Rng* dropout_rng = nullptr) {
  auto tok = model.tokenize(tape, sample);
  auto tokens = model.apply_position_mask(tape, tok, plan);
  auto encoded = model.encode(tape, tokens, dropout_rng);
  auto decoded = model.decode(tape, encoded, dropout_rng);
  return {model.project_positions(tape, decoded.tokens), attention_weights(decoded.cls, decoded.tokens, temperature)};
}

template <class T>
Var<T> pretrain_loss(const RadarPosModel<T>& model, Tape<T>& tape, const pdw::SampleRecord& sample,
                     const MaskPlan& plan, const PretrainHyper& hyper, Rng* dropout_rng = nullptr) {
  auto fwd = pretrain_forward(model, tape, sample, plan, hyper.temperature, dropout_rng);
  if (hyper.objective == PretrainObjective::position) return position_loss(fwd.logits, plan, hyper.reduction);
  const std::size_t n = model.config().n_patches;
  Tensor<double> wstar;
  if (hyper.distance == SmoothingDistance::index) {
    wstar = smoothing_weights(n, hyper.sigma);
  } else {
    std::vector<double> anchors(n);
    for (std::size_t i = 0; i < n; ++i) anchors[i] = sample.toa_track[i * model.config().patch_len()];
    wstar = toa_smoothing_weights(anchors, hyper.sigma);
  }
  if (hyper.objective == PretrainObjective::smoothed) return smoothed_loss(fwd.logits, plan, wstar, hyper.reduction);
  auto c = hyper.detach_attention ? tape.constant(fwd.attention.value()) : fwd.attention;
  return radarpos_loss(fwd.logits, plan, wstar, c, hyper.reduction);
}

/// Mask seed for a sample at an epoch; evaluation masks use epoch = SIZE_MAX.
inline std::uint64_t mask_seed(std::uint64_t seed, std::size_t epoch, std::size_t index) {
  return derive_seed(seed, 0x6d61736bULL + epoch, index);
}

template <class T>
PretrainResult pretrain(RadarPosModel<T>& model, std::span<const pdw::SampleRecord> data, const PretrainHyper& hyper,
                        std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  hyper.validate();
  if (data.empty()) throw ContractError("pretraining dataset is empty");
  model.unfreeze_all();
  auto& params = model.params();
  AdamW<T> opt(hyper.adamw);
  PretrainResult result;
  const auto& cfg = model.config();
  Rng dropout_rng(derive_seed(seed, "dropout"));
  Rng* drop = cfg.dropout > 0.0 ? &dropout_rng : nullptr;

  std::vector<std::size_t> order(data.size());
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(seed, "shuffle"), epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const T inv = static_cast<T>(1.0 / static_cast<double>(end - start));
      params.zero_grad();
      double batch_total = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const std::size_t idx = order[b];
        const auto plan = plan_mask(cfg.n_patches, cfg.mask_ratio, mask_seed(seed, epoch, idx));
        Tape<T> tape;
        auto loss = pretrain_loss(model, tape, data[idx], plan, hyper, drop);
        batch_total += static_cast<double>(loss.value().item());
        tape.backward(scalar_mul(loss, inv));
      }
      bool finite = std::isfinite(batch_total);
      for (const auto& [name, p] : params) finite = finite && p.grad.all_finite();
      if (!finite) {
        std::ostringstream msg;
        msg << "non-finite loss at epoch " << epoch << ", batch " << batch_index << "; loss history:";
        for (double l : result.epoch_loss) msg << ' ' << l;
        msg << " | current batch sum " << batch_total;
        throw NumericError(msg.str());
      }
      opt.step(params, hyper.lr);
      ++result.steps;
      epoch_total += batch_total;
    }
    const double mean_loss = epoch_total / static_cast<double>(data.size());
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) {
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      on_epoch({epoch, mean_loss, hyper.lr, ms});
    }
  }
  params.zero_grad();
  return result;
}

/// Mean masked-position cross-entropy over a dataset with fixed evaluation masks.
template <class T>
double masked_position_ce(const RadarPosModel<T>& model, std::span<const pdw::SampleRecord> data, std::uint64_t seed) {
  if (data.empty()) throw ContractError("empty dataset");
  const auto& cfg = model.config();
  double total = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto plan = plan_mask(cfg.n_patches, cfg.mask_ratio, mask_seed(seed, SIZE_MAX, i));
    Tape<T> tape;
    auto fwd = pretrain_forward(model, tape, data[i], plan, 0.95);
    total += static_cast<double>(position_loss(fwd.logits, plan).value().item());
  }
  return total / static_cast<double>(data.size());
}

}  // namespace radarpos
