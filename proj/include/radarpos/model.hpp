// SPDX-License-Identifier: Apache-2.0
//
// The position-aware transformer: patch tokenizer, TOA sinusoidal positional
// encoding, positional masking, pre-norm encoder/decoder stacks, position
// projector and classifier head, plus low-rank adapters on the encoder.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "radarpos/ops.hpp"
#include "radarpos/pdw.hpp"
#include "radarpos/rng.hpp"

namespace radarpos {

enum class PositionalSource : std::uint8_t { toa, learned_index };

struct ModelConfig {
  std::size_t n_patches = 64;
  std::size_t embed_dim = 512;
  std::size_t encoder_layers = 6;
  std::size_t decoder_layers = 2;
  std::size_t heads = 8;
  std::size_t mlp_ratio = 4;
  double mask_ratio = 0.6;
  double dropout = 0.0;
  std::size_t sequence_length = pdw::kSequenceLength;
  std::size_t channels = pdw::kChannels;
  std::size_t num_classes = pdw::kNumEmitters;
  PositionalSource positional = PositionalSource::toa;
  double toa_scale = 1e6;  // TOA seconds -> encoding units (microseconds)
  double layer_norm_eps = 1e-5;

  std::size_t patch_len() const { return sequence_length / n_patches; }
  std::size_t patch_width() const { return channels * patch_len(); }
  std::size_t head_dim() const { return embed_dim / heads; }

  void validate() const {
    if (n_patches == 0 || embed_dim == 0 || heads == 0 || mlp_ratio == 0 || num_classes == 0) {
      throw ConfigError("model dimensions must be positive");
    }
    if (embed_dim % 2 != 0) throw ConfigError("embed_dim must be even");
    if (embed_dim % heads != 0) throw ConfigError("embed_dim must be divisible by heads");
    if (sequence_length % n_patches != 0 || n_patches * patch_len() != sequence_length) {
      throw ConfigError("n_patches x patch_len must equal the sequence length");
    }
    if (!(mask_ratio > 0.0 && mask_ratio < 1.0)) throw ConfigError("mask_ratio must lie in (0, 1)");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0, 1)");
    if (!(toa_scale > 0.0)) throw ConfigError("toa_scale must be positive");
  }

  /// Full-size backbone (the `paper` preset).
  static ModelConfig paper() { return ModelConfig{}; }

  /// Desk-scale backbone: N=8, D=16, 2 encoder + 1 decoder layers.
  static ModelConfig tiny() {
    ModelConfig c;
    c.n_patches = 8;
    c.embed_dim = 16;
    c.encoder_layers = 2;
    c.decoder_layers = 1;
    c.heads = 4;
    return c;
  }
};

/// Sinusoidal encoding of a time of arrival: element 2k = sin(toa / 10000^(2k/D)), 2k+1 = cos(...).
inline std::vector<double> toa_positional_encoding(double toa, std::size_t dim) {
  if (dim % 2 != 0) throw ConfigError("positional encoding dimension must be even");
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < dim / 2; ++k) {
    const double freq = std::pow(10000.0, static_cast<double>(2 * k) / static_cast<double>(dim));
    out[2 * k] = std::sin(toa / freq);
    out[2 * k + 1] = std::cos(toa / freq);
  }
  return out;
}

/// Which patch positions have their positional encoding replaced by the mask token.
struct MaskPlan {
  std::vector<std::uint8_t> masked;  // 1 = masked
  std::size_t masked_count = 0;
  std::uint64_t seed = 0;

  std::size_t size() const noexcept { return masked.size(); }
  bool is_masked(std::size_t i) const { return masked.at(i) != 0; }

  static MaskPlan none(std::size_t n) { return {std::vector<std::uint8_t>(n, 0), 0, 0}; }
  static MaskPlan all(std::size_t n) { return {std::vector<std::uint8_t>(n, 1), n, 0}; }
  static MaskPlan from_flags(std::vector<std::uint8_t> flags) {
    const auto count = static_cast<std::size_t>(std::count_if(flags.begin(), flags.end(), [](auto f) { return f != 0; }));
    return {std::move(flags), count, 0};
  }
};

/// ceil(ratio * n), guarded against the product landing a hair above an integer.
inline std::size_t masked_count_for(std::size_t n, double ratio) {
  const double exact = ratio * static_cast<double>(n);
  const double nearest = std::round(exact);
  if (std::abs(exact - nearest) <= 1e-9 * std::max(1.0, exact)) return static_cast<std::size_t>(nearest);
  return static_cast<std::size_t>(std::ceil(exact));
}

inline MaskPlan plan_mask(std::size_t n, double ratio, std::uint64_t seed) {
  if (!(ratio > 0.0 && ratio < 1.0)) throw ConfigError("mask ratio must lie in (0, 1)");
  const std::size_t count = std::max<std::size_t>(1, masked_count_for(n, ratio));
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(seed);
  // partial Fisher-Yates: the first `count` slots are a uniform sample without replacement
  for (std::size_t i = 0; i < count; ++i) {
    std::uniform_int_distribution<std::size_t> pick(i, n - 1);
    std::swap(order[i], order[pick(rng)]);
  }
  MaskPlan plan{std::vector<std::uint8_t>(n, 0), count, seed};
  for (std::size_t i = 0; i < count; ++i) plan.masked[order[i]] = 1;
  return plan;
}

template <class T>
struct TokenizedSample {
  Var<T> tokens;                  // [N×D]
  std::vector<double> patch_toa;  // seconds, first pulse of each patch
  std::uint8_t label = 0;
};

template <class T>
struct DecoderOutput {
  Var<T> cls;     // [D]
  Var<T> tokens;  // [N×D]
};

/// Affine map y = x·W + b with an optional low-rank adapter scale·(x·Aᵀ)·Bᵀ.
template <class T>
struct Linear {
  Parameter<T>* weight = nullptr;  // [in×out]
  Parameter<T>* bias = nullptr;    // [out]
  Parameter<T>* lora_a = nullptr;  // [r×in]
  Parameter<T>* lora_b = nullptr;  // [out×r]
  T lora_scale = T{0};
  std::string name;

  std::size_t in_features() const { return weight->value.rows(); }
  std::size_t out_features() const { return weight->value.cols(); }
  bool adapted() const { return lora_a != nullptr; }

  Var<T> operator()(Tape<T>& tape, const Var<T>& x) const {
    auto y = add(matmul(x, tape.parameter(*weight)), tape.parameter(*bias));
    if (!adapted()) return y;
    auto low = matmul(x, transpose(tape.parameter(*lora_a)));
    auto delta = matmul(low, transpose(tape.parameter(*lora_b)));
    return add(y, scalar_mul(delta, lora_scale));
  }
};

template <class T>
struct Norm {
  Parameter<T>* gain = nullptr;
  Parameter<T>* bias = nullptr;

  Var<T> operator()(Tape<T>& tape, const Var<T>& x, T eps) const {
    return layer_norm(x, tape.parameter(*gain), tape.parameter(*bias), eps);
  }
};

template <class T>
struct TransformerLayer {
  Norm<T> ln1, ln2;
  Linear<T> q, k, v, o, fc1, fc2;

  std::vector<Linear<T>*> linears() { return {&q, &k, &v, &o, &fc1, &fc2}; }
  std::vector<const Linear<T>*> linears() const { return {&q, &k, &v, &o, &fc1, &fc2}; }
};

template <class T>
class RadarPosModel {
 public:
  RadarPosModel(ModelConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)), seed_(seed) {
    cfg_.validate();
    const std::size_t d = cfg_.embed_dim;
    tokenizer_ = make_linear("tokenizer", cfg_.patch_width(), d);
    cls_token_ = &add_param("cls_token", truncated_init({d}, "cls_token"));
    mask_token_ = &add_param("mask_token", truncated_init({d}, "mask_token"));
    if (cfg_.positional == PositionalSource::learned_index) {
      pos_embedding_ = &add_param("pos_embedding", truncated_init({cfg_.n_patches + 1, d}, "pos_embedding"));
    }
    for (std::size_t l = 0; l < cfg_.encoder_layers; ++l) encoder_.push_back(make_layer("encoder." + std::to_string(l)));
    for (std::size_t l = 0; l < cfg_.decoder_layers; ++l) decoder_.push_back(make_layer("decoder." + std::to_string(l)));
    decoder_norm_ = make_norm("decoder.norm");
    projector_ = make_linear("projector", d, cfg_.n_patches);
    classifier_ = make_linear("classifier", d, cfg_.num_classes);
  }

  RadarPosModel(const RadarPosModel&) = delete;
  RadarPosModel& operator=(const RadarPosModel&) = delete;
  RadarPosModel(RadarPosModel&&) noexcept = default;
  RadarPosModel& operator=(RadarPosModel&&) noexcept = default;

  /// Deep copy of values, adapters and trainable flags.
  RadarPosModel clone() const {
    RadarPosModel copy(cfg_, seed_);
    if (has_adapters()) copy.attach_adapters(adapter_rank_);
    for (auto& [name, p] : copy.store_) {
      const auto& src = store_.get(name);
      p.value = src.value;
      p.trainable = src.trainable;
    }
    return copy;
  }

  const ModelConfig& config() const noexcept { return cfg_; }
  std::uint64_t seed() const noexcept { return seed_; }
  ParameterStore<T>& params() noexcept { return store_; }
  const ParameterStore<T>& params() const noexcept { return store_; }

  // ---- tokenizer and positional path --------------------------------------

  /// Constant [N × patch_width] matrix: row i holds pulses [i·L, i·L+L) of channel 0, then channel 1.
  Tensor<T> patch_matrix(const pdw::SampleRecord& sample) const {
    const std::size_t n = cfg_.n_patches, len = cfg_.patch_len();
    if (sample.features.size() != cfg_.channels * cfg_.sequence_length ||
        sample.toa_track.size() != cfg_.sequence_length) {
      throw DimensionError("sample layout does not match the model configuration");
    }
    Tensor<T> patches(Shape{n, cfg_.patch_width()});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t c = 0; c < cfg_.channels; ++c)
        for (std::size_t j = 0; j < len; ++j)
          patches.at(i, c * len + j) = static_cast<T>(sample.features[c * cfg_.sequence_length + i * len + j]);
    return patches;
  }

  TokenizedSample<T> tokenize(Tape<T>& tape, const pdw::SampleRecord& sample) const {
    TokenizedSample<T> out;
    out.tokens = tokenizer_(tape, tape.constant(patch_matrix(sample)));
    out.patch_toa.resize(cfg_.n_patches);
    for (std::size_t i = 0; i < cfg_.n_patches; ++i) out.patch_toa[i] = sample.toa_track[i * cfg_.patch_len()];
    out.label = sample.label;
    return out;
  }

  /// [N×D] constant of TOA encodings for the given patch anchors.
  Tensor<T> toa_encodings(const std::vector<double>& patch_toa) const {
    const std::size_t d = cfg_.embed_dim;
    Tensor<T> pe(Shape{patch_toa.size(), d});
    for (std::size_t i = 0; i < patch_toa.size(); ++i) {
      const auto row = toa_positional_encoding(patch_toa[i] * cfg_.toa_scale, d);
      for (std::size_t c = 0; c < d; ++c) pe.at(i, c) = static_cast<T>(row[c]);
    }
    return pe;
  }

  /// [(N+1)×D]: row 0 = z_cls + p0, row i+1 = z_i + (masked ? p_mask : p_i). Content rows are never altered.
  Var<T> apply_position_mask(Tape<T>& tape, const TokenizedSample<T>& tok, const MaskPlan& plan) const {
    const std::size_t n = cfg_.n_patches, d = cfg_.embed_dim;
    if (plan.size() != n || tok.tokens.shape() != Shape{n, d}) throw DimensionError("mask plan does not match N");
    Var<T> positions, cls_position;
    if (cfg_.positional == PositionalSource::toa) {
      positions = tape.constant(toa_encodings(tok.patch_toa));
      const auto p0 = toa_positional_encoding(0.0, d);
      cls_position = tape.constant(Tensor<T>(Shape{d}, std::vector<T>(p0.begin(), p0.end())));
    } else {
      auto table = tape.parameter(*pos_embedding_);
      positions = slice(table, 0, 1, n);
      cls_position = reshape(slice(table, 0, 0, 1), {d});
    }
    auto mixed = replace_rows(positions, tape.parameter(*mask_token_), std::span<const std::uint8_t>(plan.masked));
    auto patches = add(tok.tokens, mixed);
    auto cls = reshape(add(tape.parameter(*cls_token_), cls_position), {1, d});
    return concat<T>({cls, patches}, 0);
  }

  // ---- transformer stacks ---------------------------------------------------

  Var<T> encode(Tape<T>& tape, const Var<T>& tokens, Rng* dropout_rng = nullptr) const {
    require_tokens(tokens);
    Var<T> x = tokens;
    for (const auto& layer : encoder_) x = block(tape, layer, x, dropout_rng);
    return x;
  }

  DecoderOutput<T> decode(Tape<T>& tape, const Var<T>& encoded, Rng* dropout_rng = nullptr) const {
    require_tokens(encoded);
    Var<T> x = encoded;
    for (const auto& layer : decoder_) x = block(tape, layer, x, dropout_rng);
    x = decoder_norm_(tape, x, static_cast<T>(cfg_.layer_norm_eps));
    return {reshape(slice(x, 0, 0, 1), {cfg_.embed_dim}), slice(x, 0, 1, cfg_.n_patches)};
  }

  /// Position logits o = g(decoded), [N×N].
  Var<T> project_positions(Tape<T>& tape, const Var<T>& decoded) const {
    if (decoded.shape() != Shape{cfg_.n_patches, cfg_.embed_dim}) throw DimensionError("projector expects [N×D]");
    return projector_(tape, decoded);
  }

  /// Class logits from the class-token row of the encoder output.
  Var<T> classify(Tape<T>& tape, const Var<T>& encoded) const {
    require_tokens(encoded);
    return classify_cls(tape, slice(encoded, 0, 0, 1));
  }

  Var<T> classify_cls(Tape<T>& tape, const Var<T>& cls_row) const {
    auto logits = classifier_(tape, reshape(cls_row, {1, cfg_.embed_dim}));
    return reshape(logits, {cfg_.num_classes});
  }

  /// Unmasked classification forward for one sample.
  Var<T> forward_classify(Tape<T>& tape, const pdw::SampleRecord& sample, Rng* dropout_rng = nullptr) const {
    auto tok = tokenize(tape, sample);
    auto tokens = apply_position_mask(tape, tok, MaskPlan::none(cfg_.n_patches));
    return classify(tape, encode(tape, tokens, dropout_rng));
  }

  // ---- adapters -------------------------------------------------------------

  bool has_adapters() const noexcept { return adapter_rank_ > 0; }
  std::size_t adapter_rank() const noexcept { return adapter_rank_; }

  /// Adds rank-r adapters (A normal, B zero, scale 1/r) to every encoder linear.
  void attach_adapters(std::size_t rank) {
    if (rank == 0) throw ConfigError("adapter rank must be positive");
    if (has_adapters()) throw ContractError("adapters already attached");
    adapter_rank_ = rank;
    for (auto& layer : encoder_) {
      for (auto* lin : layer.linears()) {
        const std::size_t in = lin->in_features(), out = lin->out_features();
        Rng rng(derive_seed(seed_, lin->name + ".lora_a"));
        lin->lora_a = &add_param(lin->name + ".lora_a", normal<T>({rank, in}, 1.0 / std::sqrt(double(in)), rng));
        lin->lora_b = &add_param(lin->name + ".lora_b", Tensor<T>(Shape{out, rank}));
        lin->lora_scale = static_cast<T>(1.0 / static_cast<double>(rank));
      }
    }
  }

  /// Folds W <- W + scale·(B·A)ᵀ into every adapted linear and removes the adapters.
  void merge_adapters() {
    for (auto& layer : encoder_) {
      for (auto* lin : layer.linears()) {
        if (!lin->adapted()) continue;
        const auto& a = lin->lora_a->value;
        const auto& b = lin->lora_b->value;
        auto& w = lin->weight->value;
        const std::size_t in = a.cols(), out = b.rows(), r = a.rows();
        for (std::size_t i = 0; i < in; ++i)
          for (std::size_t o = 0; o < out; ++o) {
            T acc{0};
            for (std::size_t k = 0; k < r; ++k) acc += b.at(o, k) * a.at(k, i);
            w.at(i, o) += lin->lora_scale * acc;
          }
        store_.erase(lin->name + ".lora_a");
        store_.erase(lin->name + ".lora_b");
        lin->lora_a = lin->lora_b = nullptr;
      }
    }
    adapter_rank_ = 0;
  }

  /// Freezes everything except adapters and the classifier head.
  void freeze_for_finetune() {
    for (auto& [name, p] : store_) p.trainable = is_finetune_parameter(name);
  }

  void unfreeze_all() {
    for (auto& [name, p] : store_) p.trainable = true;
  }

  static bool is_adapter_parameter(const std::string& name) {
    return name.ends_with(".lora_a") || name.ends_with(".lora_b");
  }
  static bool is_finetune_parameter(const std::string& name) {
    return is_adapter_parameter(name) || name.starts_with("classifier.");
  }
  static bool is_encoder_parameter(const std::string& name) {
    return name.starts_with("encoder.") || name.starts_with("tokenizer.") || name == "cls_token" ||
           name == "mask_token" || name == "pos_embedding";
  }

  /// Encoder linears and their [in, out] shapes (adapter placement).
  std::vector<std::pair<std::size_t, std::size_t>> adapted_linear_shapes() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (const auto& layer : encoder_)
      for (const auto* lin : layer.linears())
        out.emplace_back(lin->in_features(), lin->out_features());
    return out;
  }

 private:
  Parameter<T>& add_param(const std::string& name, Tensor<T> value) { return store_.add(name, std::move(value)); }

  Tensor<T> truncated_init(Shape shape, const std::string& name) const {
    Rng rng(derive_seed(seed_, name));
    return truncated_normal<T>(std::move(shape), 0.02, rng);
  }

  Linear<T> make_linear(const std::string& name, std::size_t in, std::size_t out) {
    Linear<T> lin;
    lin.name = name;
    lin.weight = &add_param(name + ".weight", truncated_init({in, out}, name + ".weight"));
    lin.bias = &add_param(name + ".bias", Tensor<T>(Shape{out}));
    return lin;
  }

  Norm<T> make_norm(const std::string& name) {
    Norm<T> n;
    n.gain = &add_param(name + ".gain", Tensor<T>(Shape{cfg_.embed_dim}, T{1}));
    n.bias = &add_param(name + ".bias", Tensor<T>(Shape{cfg_.embed_dim}));
    return n;
  }

  TransformerLayer<T> make_layer(const std::string& prefix) {
    const std::size_t d = cfg_.embed_dim, hidden = d * cfg_.mlp_ratio;
    TransformerLayer<T> layer;
    layer.ln1 = make_norm(prefix + ".ln1");
    layer.ln2 = make_norm(prefix + ".ln2");
    layer.q = make_linear(prefix + ".attn.q", d, d);
    layer.k = make_linear(prefix + ".attn.k", d, d);
    layer.v = make_linear(prefix + ".attn.v", d, d);
    layer.o = make_linear(prefix + ".attn.o", d, d);
    layer.fc1 = make_linear(prefix + ".mlp.fc1", d, hidden);
    layer.fc2 = make_linear(prefix + ".mlp.fc2", hidden, d);
    return layer;
  }

  void require_tokens(const Var<T>& x) const {
    if (x.shape() != Shape{cfg_.n_patches + 1, cfg_.embed_dim}) {
      throw DimensionError("expected [(N+1)xD] tokens, got " + to_string(x.shape()));
    }
  }

  Var<T> attention(Tape<T>& tape, const TransformerLayer<T>& layer, const Var<T>& h) const {
    const std::size_t dh = cfg_.head_dim();
    const T scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));
    auto q = layer.q(tape, h);
    auto k = layer.k(tape, h);
    auto v = layer.v(tape, h);
    std::vector<Var<T>> heads;
    heads.reserve(cfg_.heads);
    for (std::size_t head = 0; head < cfg_.heads; ++head) {
      auto qh = slice(q, 1, head * dh, dh);
      auto kh = slice(k, 1, head * dh, dh);
      auto vh = slice(v, 1, head * dh, dh);
      auto scores = scalar_mul(matmul(qh, transpose(kh)), scale);
      heads.push_back(matmul(softmax(scores, 1), vh));
    }
    return layer.o(tape, heads.size() == 1 ? heads.front() : concat(heads, 1));
  }

  Var<T> block(Tape<T>& tape, const TransformerLayer<T>& layer, const Var<T>& x, Rng* rng) const {
    const T eps = static_cast<T>(cfg_.layer_norm_eps);
    auto a = attention(tape, layer, layer.ln1(tape, x, eps));
    if (rng != nullptr) a = dropout(a, cfg_.dropout, *rng);
    auto y = add(x, a);
    auto m = layer.fc2(tape, gelu(layer.fc1(tape, layer.ln2(tape, y, eps))));
    if (rng != nullptr) m = dropout(m, cfg_.dropout, *rng);
    return add(y, m);
  }

  ModelConfig cfg_;
  std::uint64_t seed_ = 0;
  ParameterStore<T> store_;
  Linear<T> tokenizer_;
  Parameter<T>* cls_token_ = nullptr;
  Parameter<T>* mask_token_ = nullptr;
  Parameter<T>* pos_embedding_ = nullptr;
  std::vector<TransformerLayer<T>> encoder_;
  std::vector<TransformerLayer<T>> decoder_;
  Norm<T> decoder_norm_;
  Linear<T> projector_;
  Linear<T> classifier_;
  std::size_t adapter_rank_ = 0;
};

/// Σ over adapted linears of r·(in + out), plus the classifier head.
inline std::size_t expected_finetune_parameter_count(const ModelConfig& cfg, std::size_t rank) {
  const std::size_t d = cfg.embed_dim, hidden = d * cfg.mlp_ratio;
  const std::size_t per_layer = 4 * rank * (d + d) + rank * (d + hidden) + rank * (hidden + d);
  return cfg.encoder_layers * per_layer + cfg.num_classes * d + cfg.num_classes;
}

}  // namespace radarpos
