// SPDX-License-Identifier: Apache-2.0
//
// Adapter fine-tuning: base weights frozen, rank-r adapters on every encoder
// linear plus the classifier head trained with cross-entropy on emitter labels.

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
#include "radarpos/pretrain.hpp"

namespace radarpos {

struct FinetuneSchedule {
  std::size_t epochs = 50;
  double base_lr = 2.5e-5;
  std::size_t warmup_epochs = 10;
  double decay_factor = 0.1;
  std::size_t decay_every = 15;

  void validate() const {
    if (warmup_epochs == 0 || decay_every == 0) throw ConfigError("warmup_epochs and decay_every must be positive");
    if (!(base_lr >= 0.0)) throw ConfigError("base_lr must be non-negative");
    if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ConfigError("decay_factor must lie in (0, 1]");
  }

  /// Linear warmup base·(e+1)/W, then base·decay^⌊(e−W)/every⌋.
  double lr_at(std::size_t epoch) const {
    if (epoch < warmup_epochs) {
      return base_lr * static_cast<double>(epoch + 1) / static_cast<double>(warmup_epochs);
    }
    const auto k = static_cast<double>((epoch - warmup_epochs) / decay_every);
    return base_lr / std::pow(1.0 / decay_factor, k);
  }
};

struct FinetuneHyper {
  FinetuneSchedule schedule{};
  std::size_t batch_size = 32;
  std::size_t lora_rank = 8;
  AdamWConfig adamw{};
};

struct FinetuneResult {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

/// Attaches adapters if missing, freezes the base, and trains adapters + head.
template <class T>
FinetuneResult finetune(RadarPosModel<T>& model, std::span<const pdw::SampleRecord> train, const FinetuneHyper& hyper,
                        std::uint64_t seed, const std::function<void(const EpochLog&)>& on_epoch = {}) {
  hyper.schedule.validate();
  if (hyper.batch_size == 0) throw ConfigError("batch_size must be positive");
  if (train.empty()) throw ContractError("fine-tuning split is empty");
  if (!model.has_adapters()) model.attach_adapters(hyper.lora_rank);
  model.freeze_for_finetune();
  auto& params = model.params();
  AdamW<T> opt(hyper.adamw);
  FinetuneResult result;
  Rng dropout_rng(derive_seed(seed, "finetune.dropout"));
  Rng* drop = model.config().dropout > 0.0 ? &dropout_rng : nullptr;

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < hyper.schedule.epochs; ++epoch) {
    const auto t0 = std::chrono::steady_clock::now();
    const double lr = hyper.schedule.lr_at(epoch);
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng shuffle_rng(derive_seed(derive_seed(seed, "finetune.shuffle"), epoch));
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double epoch_total = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t start = 0; start < order.size(); start += hyper.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), start + hyper.batch_size);
      const T inv = static_cast<T>(1.0 / static_cast<double>(end - start));
      params.zero_grad();
      double batch_total = 0.0;
      for (std::size_t b = start; b < end; ++b) {
        const auto& sample = train[order[b]];
        Tape<T> tape;
        auto loss = cross_entropy(model.forward_classify(tape, sample, drop), sample.label);
        batch_total += static_cast<double>(loss.value().item());
        tape.backward(scalar_mul(loss, inv));
      }
      if (!std::isfinite(batch_total)) {
        std::ostringstream msg;
        msg << "non-finite fine-tuning loss at epoch " << epoch << ", batch " << batch_index << "; loss history:";
        for (double l : result.epoch_loss) msg << ' ' << l;
        throw NumericError(msg.str());
      }
      opt.step(params, lr);
      ++result.steps;
      epoch_total += batch_total;
    }
    const double mean_loss = epoch_total / static_cast<double>(train.size());
    result.epoch_loss.push_back(mean_loss);
    if (on_epoch) {
      const auto ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      on_epoch({epoch, mean_loss, lr, ms});
    }
  }
  params.zero_grad();
  return result;
}

template <class T>
std::size_t predict(const RadarPosModel<T>& model, const pdw::SampleRecord& sample) {
  Tape<T> tape;
  const auto logits = model.forward_classify(tape, sample).value();
  const auto v = logits.values();
  return static_cast<std::size_t>(std::distance(v.begin(), std::max_element(v.begin(), v.end())));
}

}  // namespace radarpos
