// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: one JSON document with "model", "pretrain", "finetune"
// and "data" sections. A preset supplies every field; a config file is merged
// over it and unknown keys are rejected.

#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "radarpos/finetune.hpp"
#include "radarpos/io.hpp"
#include "radarpos/model.hpp"
#include "radarpos/pdw.hpp"
#include "radarpos/pretrain.hpp"

namespace radarpos {

struct DataConfig {
  std::uint64_t seed = 7;
  std::vector<std::uint32_t> ratio{pdw::kDefaultRatio.begin(), pdw::kDefaultRatio.end()};
  std::size_t test_total = pdw::kDefaultTestTotal;
  std::size_t pretrain_samples = 3500;
  bool pooled_pretraining = true;  // pool all modes; otherwise the source mode only
  pdw::NoiseParams noise{};
};

struct RunConfig {
  std::string preset = "paper";
  std::uint64_t seed = 1;
  ModelConfig model{};
  PretrainHyper pretrain{};
  FinetuneHyper finetune{};
  DataConfig data{};

  static RunConfig paper() { return RunConfig{}; }

  /// Desk-scale preset: small backbone, short runs, larger step sizes.
  static RunConfig tiny() {
    RunConfig c;
    c.preset = "tiny";
    c.model = ModelConfig::tiny();
    c.pretrain.epochs = 50;
    c.pretrain.batch_size = 8;
    c.pretrain.lr = 5e-3;
    c.finetune.schedule.base_lr = 5e-3;
    c.finetune.batch_size = 16;
    c.data.pretrain_samples = 200;
    return c;
  }

  static RunConfig preset_named(const std::string& name) {
    if (name == "paper") return paper();
    if (name == "tiny") return tiny();
    throw ConfigError("unknown preset '" + name + "' (expected paper or tiny)");
  }

  void validate() const {
    model.validate();
    pretrain.validate();
    finetune.schedule.validate();
    if (finetune.batch_size == 0) throw ConfigError("finetune.batch_size must be positive");
    if (finetune.lora_rank == 0) throw ConfigError("finetune.lora_rank must be positive");
    if (data.ratio.size() != pdw::kNumEmitters) throw ConfigError("data.ratio needs 7 entries");
    if (data.test_total == 0) throw ConfigError("data.test_total must be positive");
    if (data.pretrain_samples == 0) throw ConfigError("data.pretrain_samples must be positive");
  }
};

namespace config_detail {

template <class E>
struct EnumNames;

template <>
struct EnumNames<PositionalSource> {
  static constexpr std::array<const char*, 2> names{"toa", "learned_index"};
};
template <>
struct EnumNames<PretrainObjective> {
  static constexpr std::array<const char*, 3> names{"position", "smoothed", "radarpos"};
};
template <>
struct EnumNames<Reduction> {
  static constexpr std::array<const char*, 2> names{"mean", "sum"};
};
template <>
struct EnumNames<SmoothingDistance> {
  static constexpr std::array<const char*, 2> names{"index", "toa"};
};

template <class E>
std::string enum_name(E e) {
  return EnumNames<E>::names.at(static_cast<std::size_t>(e));
}

template <class E>
E parse_enum(const std::string& s, const char* field) {
  const auto& names = EnumNames<E>::names;
  for (std::size_t i = 0; i < names.size(); ++i) {
    if (s == names[i]) return static_cast<E>(i);
  }
  std::string allowed;
  for (const char* n : names) allowed += std::string(allowed.empty() ? "" : ", ") + n;
  throw ConfigError(std::string(field) + ": unknown value '" + s + "' (expected " + allowed + ")");
}

/// Reads `key` from `j` into `out` when present.
template <class V>
void read(const nlohmann::json& j, const char* key, V& out) {
  if (auto it = j.find(key); it != j.end()) out = it->template get<V>();
}

template <class E>
void read_enum(const nlohmann::json& j, const char* key, E& out) {
  if (auto it = j.find(key); it != j.end()) out = parse_enum<E>(it->template get<std::string>(), key);
}

inline void reject_unknown(const nlohmann::json& given, const nlohmann::json& known, const std::string& path) {
  if (!given.is_object()) throw ConfigError(path + " must be an object");
  for (const auto& [key, value] : given.items()) {
    const std::string here = path.empty() ? key : path + "." + key;
    auto it = known.find(key);
    if (it == known.end()) throw ConfigError("unknown config key '" + here + "'");
    if (it->is_object()) reject_unknown(value, *it, here);
  }
}

}  // namespace config_detail

inline nlohmann::json to_json(const RunConfig& c) {
  using config_detail::enum_name;
  const auto& m = c.model;
  const auto& p = c.pretrain;
  const auto& f = c.finetune;
  return {
      {"preset", c.preset},
      {"seed", c.seed},
      {"model",
       {{"n_patches", m.n_patches},
        {"embed_dim", m.embed_dim},
        {"encoder_layers", m.encoder_layers},
        {"decoder_layers", m.decoder_layers},
        {"heads", m.heads},
        {"mlp_ratio", m.mlp_ratio},
        {"mask_ratio", m.mask_ratio},
        {"dropout", m.dropout},
        {"positional", enum_name(m.positional)},
        {"toa_scale", m.toa_scale},
        {"layer_norm_eps", m.layer_norm_eps}}},
      {"pretrain",
       {{"epochs", p.epochs},
        {"batch_size", p.batch_size},
        {"lr", p.lr},
        {"sigma", p.sigma},
        {"temperature", p.temperature},
        {"weight_decay", p.adamw.weight_decay},
        {"objective", enum_name(p.objective)},
        {"reduction", enum_name(p.reduction)},
        {"distance", enum_name(p.distance)},
        {"detach_attention", p.detach_attention}}},
      {"finetune",
       {{"epochs", f.schedule.epochs},
        {"base_lr", f.schedule.base_lr},
        {"warmup_epochs", f.schedule.warmup_epochs},
        {"decay_factor", f.schedule.decay_factor},
        {"decay_every", f.schedule.decay_every},
        {"batch_size", f.batch_size},
        {"lora_rank", f.lora_rank},
        {"weight_decay", f.adamw.weight_decay}}},
      {"data",
       {{"seed", c.data.seed},
        {"ratio", c.data.ratio},
        {"test_total", c.data.test_total},
        {"pretrain_samples", c.data.pretrain_samples},
        {"pooled_pretraining", c.data.pooled_pretraining},
        {"noise",
         {{"toa_sigma", c.data.noise.toa_sigma},
          {"rf_sigma", c.data.noise.rf_sigma},
          {"pw_sigma", c.data.noise.pw_sigma}}}}},
  };
}

/// Applies the fields present in `j` over `base`.
inline RunConfig merge_config(RunConfig base, const nlohmann::json& j) {
  using namespace config_detail;
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("config: preset must be a string");
    if (it->get<std::string>() != base.preset) base = RunConfig::preset_named(it->get<std::string>());
  }
  try {
    reject_unknown(j, to_json(base), "");
    read(j, "seed", base.seed);
    if (auto it = j.find("model"); it != j.end()) {
      auto& m = base.model;
      const auto& s = *it;
      read(s, "n_patches", m.n_patches);
      read(s, "embed_dim", m.embed_dim);
      read(s, "encoder_layers", m.encoder_layers);
      read(s, "decoder_layers", m.decoder_layers);
      read(s, "heads", m.heads);
      read(s, "mlp_ratio", m.mlp_ratio);
      read(s, "mask_ratio", m.mask_ratio);
      read(s, "dropout", m.dropout);
      read_enum(s, "positional", m.positional);
      read(s, "toa_scale", m.toa_scale);
      read(s, "layer_norm_eps", m.layer_norm_eps);
    }
    if (auto it = j.find("pretrain"); it != j.end()) {
      auto& p = base.pretrain;
      const auto& s = *it;
      read(s, "epochs", p.epochs);
      read(s, "batch_size", p.batch_size);
      read(s, "lr", p.lr);
      read(s, "sigma", p.sigma);
      read(s, "temperature", p.temperature);
      read(s, "weight_decay", p.adamw.weight_decay);
      read_enum(s, "objective", p.objective);
      read_enum(s, "reduction", p.reduction);
      read_enum(s, "distance", p.distance);
      read(s, "detach_attention", p.detach_attention);
    }
    if (auto it = j.find("finetune"); it != j.end()) {
      auto& f = base.finetune;
      const auto& s = *it;
      read(s, "epochs", f.schedule.epochs);
      read(s, "base_lr", f.schedule.base_lr);
      read(s, "warmup_epochs", f.schedule.warmup_epochs);
      read(s, "decay_factor", f.schedule.decay_factor);
      read(s, "decay_every", f.schedule.decay_every);
      read(s, "batch_size", f.batch_size);
      read(s, "lora_rank", f.lora_rank);
      read(s, "weight_decay", f.adamw.weight_decay);
    }
    if (auto it = j.find("data"); it != j.end()) {
      auto& d = base.data;
      const auto& s = *it;
      read(s, "seed", d.seed);
      read(s, "ratio", d.ratio);
      read(s, "test_total", d.test_total);
      read(s, "pretrain_samples", d.pretrain_samples);
      read(s, "pooled_pretraining", d.pooled_pretraining);
      if (auto n = s.find("noise"); n != s.end()) {
        read(*n, "toa_sigma", d.noise.toa_sigma);
        read(*n, "rf_sigma", d.noise.rf_sigma);
        read(*n, "pw_sigma", d.noise.pw_sigma);
      }
    }
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  base.validate();
  return base;
}

/// Preset (from the file's "preset" key, else `preset`) with the file merged over it.
inline RunConfig load_config(const std::filesystem::path& path, const std::string& preset = "paper") {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: " + path.string());
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(io::read_file(path));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object()) throw ConfigError(path.string() + ": top level must be an object");
  std::string name = preset;
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError(path.string() + ": preset must be a string");
    name = it->get<std::string>();
  }
  return merge_config(RunConfig::preset_named(name), j);
}

}  // namespace radarpos
