// SPDX-License-Identifier: Apache-2.0
//
// Experiment runner: shared pretraining, cross-mode fine-tune/evaluate for
// the six ordered mode pairs plus in-domain controls, and parameter sweeps.

#pragma once

#include <array>
#include <functional>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "radarpos/config.hpp"
#include "radarpos/finetune.hpp"
#include "radarpos/metrics.hpp"
#include "radarpos/parallel.hpp"
#include "radarpos/pretrain.hpp"

namespace radarpos {

struct Scenario {
  std::uint8_t source = 0;
  std::uint8_t target = 1;

  bool in_domain() const noexcept { return source == target; }
  std::string str() const { return "m" + std::to_string(source) + ":m" + std::to_string(target); }
  friend bool operator==(const Scenario&, const Scenario&) = default;

  /// Parses "m0:m1" (the leading 'm' is optional).
  static Scenario parse(const std::string& text) {
    const auto colon = text.find(':');
    if (colon == std::string::npos) throw ConfigError("scenario must look like m0:m1, got '" + text + "'");
    auto mode = [&](std::string part) -> std::uint8_t {
      if (!part.empty() && (part[0] == 'm' || part[0] == 'M')) part.erase(0, 1);
      if (part.size() != 1 || part[0] < '0' || part[0] >= '0' + static_cast<int>(pdw::kNumModes)) {
        throw ConfigError("scenario modes must be m0, m1 or m2, got '" + text + "'");
      }
      return static_cast<std::uint8_t>(part[0] - '0');
    };
    return {mode(text.substr(0, colon)), mode(text.substr(colon + 1))};
  }

  static std::vector<Scenario> cross_mode() {
    std::vector<Scenario> out;
    for (std::uint8_t s = 0; s < pdw::kNumModes; ++s)
      for (std::uint8_t t = 0; t < pdw::kNumModes; ++t)
        if (s != t) out.push_back({s, t});
    return out;
  }
};

/// Per-mode long-tailed splits plus the pretraining pool.
struct ExperimentData {
  std::array<pdw::DatasetSplit, pdw::kNumModes> modes;
  std::vector<pdw::SampleRecord> pretrain_pool;

  static std::vector<std::uint8_t> pool_modes(const DataConfig& data, std::uint8_t source) {
    if (data.pooled_pretraining) return {0, 1, 2};
    return {source};
  }

  static ExperimentData simulate(const DataConfig& data, std::uint8_t source = 0) {
    const auto registry = pdw::default_registry();
    ExperimentData out;
    const auto tests = pdw::balanced_test_counts(data.test_total);
    for (std::uint8_t m = 0; m < pdw::kNumModes; ++m) {
      out.modes[m] = pdw::make_split(registry, m, data.ratio, tests, data.noise, data.seed);
    }
    out.pretrain_pool =
        pdw::make_pretrain_pool(registry, pool_modes(data, source), data.pretrain_samples, data.noise, data.seed);
    return out;
  }
};

using EpochCallback = std::function<void(const std::string& stage, const EpochLog&)>;

template <class T = float>
RadarPosModel<T> run_pretraining(const RunConfig& cfg, std::span<const pdw::SampleRecord> pool,
                                 const EpochCallback& log = {}) {
  RadarPosModel<T> model(cfg.model, derive_seed(cfg.seed, "model"));
  if (cfg.pretrain.epochs > 0) {
    pretrain(model, pool, cfg.pretrain, derive_seed(cfg.seed, "pretrain"), [&](const EpochLog& e) {
      if (log) log("pretrain", e);
    });
  }
  return model;
}

template <class T>
EvalReport evaluate(const RadarPosModel<T>& model, std::span<const pdw::SampleRecord> test, std::string scenario = {}) {
  if (test.empty()) throw ContractError("test split is empty");
  std::vector<std::size_t> truth(test.size()), predicted(test.size());
  parallel_for(test.size(), [&](std::size_t i) {
    truth[i] = test[i].label;
    predicted[i] = predict(model, test[i]);
  });
  return EvalReport::from_confusion(confusion_from(truth, predicted, model.config().num_classes),
                                    std::move(scenario));
}

/// Fine-tunes a copy of `pretrained` on the source split and evaluates on the target test split.
template <class T>
EvalReport run_cross_mode(const RadarPosModel<T>& pretrained, const RunConfig& cfg, const ExperimentData& data,
                          Scenario scenario, const EpochCallback& log = {}) {
  auto model = pretrained.clone();
  finetune(model, data.modes.at(scenario.source).train, cfg.finetune,
           derive_seed(derive_seed(cfg.seed, "finetune"), scenario.source), [&](const EpochLog& e) {
             if (log) log("finetune " + scenario.str(), e);
           });
  return evaluate(model, data.modes.at(scenario.target).test, scenario.str());
}

struct CrossModeRow {
  Scenario scenario;
  EvalReport cross;
  EvalReport in_domain;  // target -> target control on the same seed
};

/// All six ordered pairs. Fine-tunes once per source mode and once per target for the controls.
template <class T>
std::vector<CrossModeRow> run_all_scenarios(const RadarPosModel<T>& pretrained, const RunConfig& cfg,
                                            const ExperimentData& data, const EpochCallback& log = {}) {
  std::array<std::optional<RadarPosModel<T>>, pdw::kNumModes> tuned;
  for (std::uint8_t m = 0; m < pdw::kNumModes; ++m) {
    auto model = pretrained.clone();
    finetune(model, data.modes[m].train, cfg.finetune, derive_seed(derive_seed(cfg.seed, "finetune"), m), [&](const EpochLog& e) {
      if (log) log("finetune m" + std::to_string(m), e);
    });
    tuned[m].emplace(std::move(model));
  }
  std::vector<CrossModeRow> rows;
  for (const auto& sc : Scenario::cross_mode()) {
    CrossModeRow row{sc, evaluate(*tuned[sc.source], data.modes[sc.target].test, sc.str()),
                     evaluate(*tuned[sc.target], data.modes[sc.target].test, Scenario{sc.target, sc.target}.str())};
    rows.push_back(std::move(row));
  }
  return rows;
}

enum class SweepParam : std::uint8_t { sigma, lora_rank, toa_pe };

inline SweepParam parse_sweep_param(const std::string& s) {
  if (s == "sigma") return SweepParam::sigma;
  if (s == "lora_rank" || s == "rank") return SweepParam::lora_rank;
  if (s == "toa_pe" || s == "toa_pe_on_off") return SweepParam::toa_pe;
  throw ConfigError("unknown sweep parameter '" + s + "' (expected sigma, lora_rank or toa_pe)");
}

inline std::string sweep_param_name(SweepParam p) {
  switch (p) {
    case SweepParam::sigma:
      return "sigma";
    case SweepParam::lora_rank:
      return "lora_rank";
    default:
      return "toa_pe";
  }
}

/// Applies one sweep value to a config. toa_pe accepts on/off (or 1/0, true/false).
inline RunConfig apply_sweep_value(RunConfig cfg, SweepParam param, const std::string& value) {
  try {
    switch (param) {
      case SweepParam::sigma:
        cfg.pretrain.sigma = std::stod(value);
        break;
      case SweepParam::lora_rank: {
        const long r = std::stol(value);
        if (r <= 0) throw ConfigError("lora_rank must be positive");
        cfg.finetune.lora_rank = static_cast<std::size_t>(r);
        break;
      }
      case SweepParam::toa_pe:
        if (value == "on" || value == "1" || value == "true") {
          cfg.model.positional = PositionalSource::toa;
        } else if (value == "off" || value == "0" || value == "false") {
          cfg.model.positional = PositionalSource::learned_index;
        } else {
          throw ConfigError("toa_pe values must be on or off, got '" + value + "'");
        }
        break;
    }
  } catch (const std::logic_error&) {
    throw ConfigError("bad sweep value '" + value + "' for " + sweep_param_name(param));
  }
  cfg.validate();
  return cfg;
}

/// Splits "0.1,0.3,0.5" into its items.
inline std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  for (std::string item; std::getline(ss, item, ',');) {
    if (!item.empty()) out.push_back(item);
  }
  if (out.empty()) throw ConfigError("sweep needs at least one value");
  return out;
}

struct SweepRow {
  std::string param_value;
  std::string scenario;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::uint64_t seed = 0;
  EvalReport report;
};

/// One full run per value on a shared data seed. Pretraining is shared across
/// values that do not change it (lora_rank).
template <class T = float>
std::vector<SweepRow> sweep(const RunConfig& base, SweepParam param, const std::vector<std::string>& values,
                            Scenario scenario, const ExperimentData& data, const EpochCallback& log = {}) {
  if (values.empty()) throw ConfigError("sweep needs at least one value");
  std::optional<RadarPosModel<T>> shared;
  std::vector<SweepRow> rows;
  for (const auto& value : values) {
    const auto cfg = apply_sweep_value(base, param, value);
    const bool reuse = param == SweepParam::lora_rank;
    auto tag = [&](const std::string& stage, const EpochLog& e) {
      if (log) log(sweep_param_name(param) + "=" + value + " " + stage, e);
    };
    if (!reuse || !shared) shared.emplace(run_pretraining<T>(cfg, data.pretrain_pool, tag));
    auto report = run_cross_mode(*shared, cfg, data, scenario, tag);
    rows.push_back({value, scenario.str(), report.accuracy, report.macro_f1, cfg.seed, std::move(report)});
  }
  return rows;
}

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream out;
  out.precision(17);
  out << "param_value,scenario,accuracy,macro_f1,seed\n";
  for (const auto& r : rows) out << r.param_value << ',' << r.scenario << ',' << r.accuracy << ',' << r.macro_f1 << ',' << r.seed << '\n';
  return out.str();
}

/// Checksum of every parameter except the positional source, for comparing ablation arms.
template <class T>
std::string shared_weight_checksum(const RadarPosModel<T>& model) {
  io::ByteWriter w;
  for (const auto& [name, p] : model.params()) {
    if (name == "pos_embedding") continue;
    w.put_bytes(name);
    for (T v : p.value.values()) w.put<T>(v);
  }
  return io::hash_bytes(w.bytes());
}

}  // namespace radarpos
