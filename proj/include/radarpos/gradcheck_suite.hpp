// SPDX-License-Identifier: Apache-2.0
//
// The full finite-difference suite: every differentiable op on small random
// inputs, then the three pretraining losses and the fine-tuning loss through a
// float64 tiny model.

#pragma once

#include <string>
#include <vector>

#include "radarpos/gradcheck.hpp"
#include "radarpos/losses.hpp"
#include "radarpos/model.hpp"
#include "radarpos/pdw.hpp"

namespace radarpos::gradcheck {

struct SuiteOptions {
  ModelConfig model = ModelConfig::tiny();
  std::uint64_t seed = 11;
  double sigma = 0.9;
  double temperature = 0.95;
  double step = kDefaultStep;
  bool inject_fault = false;  // adds an op with a deliberately wrong backward
  bool include_ops = true;
  bool include_losses = true;
};

struct SuiteReport {
  std::vector<Result> ops;     // one row per op
  std::vector<Result> losses;  // one row per loss, worst parameter tensor
  std::vector<std::string> offenders;

  bool passed() const { return offenders.empty(); }
};

namespace suite_detail {

inline Tensor<double> random_tensor(Shape shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(shape));
  for (auto& v : t.values()) v = u(rng);
  return t;
}

/// Σ R ⊙ y with a fixed random R, so every output element gets a distinct weight.
inline Var<double> project(Tape<double>& tape, const Var<double>& y, std::uint64_t seed) {
  Rng rng(seed);
  return sum(mul(y, tape.constant(random_tensor(y.shape(), rng))));
}

/// y = 2x on the way forward, but backward reports 2.02·g.
inline Var<double> faulty_double(const Var<double>& a) {
  Tensor<double> out = a.value();
  for (auto& v : out.values()) v *= 2.0;
  const std::size_t ia = a.id();
  return a.tape().record(std::move(out), {ia}, [ia](Tape<double>& t, std::size_t self) {
    const auto& g = t.grad(self);
    auto& ga = t.grad(ia);
    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += 2.02 * g[i];
  });
}

using Build = std::function<Var<double>(Tape<double>&, const std::vector<Var<double>>&)>;

struct OpCase {
  std::string name;
  std::vector<Shape> shapes;
  Build build;
  double lo = -1.0, hi = 1.0;
};

inline std::vector<OpCase> op_cases(bool inject_fault) {
  using V = std::vector<Var<double>>;
  std::vector<OpCase> cases{
      {"add", {{3, 4}, {3, 4}}, [](auto& t, const V& x) { return project(t, add(x[0], x[1]), 1); }},
      {"add_bias", {{3, 4}, {4}}, [](auto& t, const V& x) { return project(t, add(x[0], x[1]), 2); }},
      {"sub", {{3, 4}, {3, 4}}, [](auto& t, const V& x) { return project(t, sub(x[0], x[1]), 3); }},
      {"mul", {{3, 4}, {3, 4}}, [](auto& t, const V& x) { return project(t, mul(x[0], x[1]), 4); }},
      {"scalar_mul", {{5}}, [](auto& t, const V& x) { return project(t, scalar_mul(x[0], 1.7), 5); }},
      {"exp", {{2, 3}}, [](auto& t, const V& x) { return project(t, exp(x[0]), 6); }},
      {"log", {{2, 3}}, [](auto& t, const V& x) { return project(t, log(x[0]), 7); }, 0.5, 2.0},
      {"sin", {{2, 3}}, [](auto& t, const V& x) { return project(t, sin(x[0]), 8); }},
      {"cos", {{2, 3}}, [](auto& t, const V& x) { return project(t, cos(x[0]), 9); }},
      {"gelu", {{2, 5}}, [](auto& t, const V& x) { return project(t, gelu(x[0]), 10); }, -3.0, 3.0},
      {"sum", {{2, 3}}, [](auto&, const V& x) { return scalar_mul(sum(x[0]), 0.7); }},
      {"mean", {{2, 3}}, [](auto&, const V& x) { return scalar_mul(mean(x[0]), 1.3); }},
      {"sum_last", {{3, 4}}, [](auto& t, const V& x) { return project(t, sum_last(x[0]), 11); }},
      {"concat", {{2, 3}, {1, 3}}, [](auto& t, const V& x) { return project(t, concat<double>({x[0], x[1]}, 0), 12); }},
      {"concat_cols", {{2, 3}, {2, 2}}, [](auto& t, const V& x) { return project(t, concat<double>({x[0], x[1]}, 1), 13); }},
      {"slice", {{4, 5}}, [](auto& t, const V& x) { return project(t, slice(x[0], 1, 1, 3), 14); }},
      {"transpose", {{3, 4}}, [](auto& t, const V& x) { return project(t, transpose(x[0]), 15); }},
      {"reshape", {{3, 4}}, [](auto& t, const V& x) { return project(t, reshape(x[0], {2, 6}), 16); }},
      {"embedding_gather", {{5, 3}}, [](auto& t, const V& x) { return project(t, embedding_gather(x[0], {4, 0, 4, 2}), 17); }},
      {"matmul", {{3, 4}, {4, 2}}, [](auto& t, const V& x) { return project(t, matmul(x[0], x[1]), 18); }},
      {"softmax", {{3, 5}}, [](auto& t, const V& x) { return project(t, softmax(x[0], 1), 19); }},
      {"softmax_axis0", {{3, 5}}, [](auto& t, const V& x) { return project(t, softmax(x[0], 0), 20); }},
      {"log_softmax", {{3, 5}}, [](auto& t, const V& x) { return project(t, log_softmax(x[0], 1), 21); }},
      {"layer_norm", {{3, 6}, {6}, {6}}, [](auto& t, const V& x) { return project(t, layer_norm(x[0], x[1], x[2], 1e-5), 22); }},
      {"cosine_rows", {{4}, {3, 4}}, [](auto& t, const V& x) { return project(t, cosine_rows(x[0], x[1]), 23); }},
      {"replace_rows", {{4, 3}, {3}}, [](auto& t, const V& x) {
         const std::vector<std::uint8_t> flags{1, 0, 1, 0};
         return project(t, replace_rows(x[0], x[1], std::span<const std::uint8_t>(flags)), 24);
       }},
      {"element", {{2, 3}}, [](auto&, const V& x) { return element(x[0], 4); }},
  };
  if (inject_fault) {
    cases.push_back({"faulty_double", {{2, 3}}, [](auto& t, const V& x) { return project(t, faulty_double(x[0]), 25); }});
  }
  return cases;
}

inline pdw::SampleRecord probe_sample(std::uint64_t seed) {
  return pdw::simulate_sample(pdw::default_registry(), 3, 1, pdw::NoiseParams{}, seed);
}

inline Result worst(const std::string& name, const std::vector<Result>& per_tensor) {
  Result out{name, 0.0, 0};
  for (const auto& r : per_tensor) {
    out.max_relative_error = std::max(out.max_relative_error, r.max_relative_error);
    out.checked += r.checked;
  }
  return out;
}

}  // namespace suite_detail

/// Checks only the ops.
inline std::vector<Result> check_ops(const SuiteOptions& opt = {}) {
  std::vector<Result> out;
  Rng rng(derive_seed(opt.seed, "ops"));
  for (const auto& c : suite_detail::op_cases(opt.inject_fault)) {
    std::vector<Tensor<double>> inputs;
    for (const auto& s : c.shapes) inputs.push_back(suite_detail::random_tensor(s, rng, c.lo, c.hi));
    out.push_back(check_inputs(c.name, inputs, c.build, opt.step));
  }
  return out;
}

enum class LossKind : std::uint8_t { position, smoothed, radarpos };

/// Per-parameter-tensor results for one pretraining loss through a float64 model.
inline std::vector<Result> check_pretrain_loss(LossKind kind, const SuiteOptions& opt = {}) {
  RadarPosModel<double> model(opt.model, opt.seed);
  const auto sample = suite_detail::probe_sample(derive_seed(opt.seed, "probe"));
  const auto plan = plan_mask(opt.model.n_patches, opt.model.mask_ratio, derive_seed(opt.seed, "mask"));
  const auto wstar = smoothing_weights(opt.model.n_patches, opt.sigma);
  auto build = [&](Tape<double>& tape) {
    auto tok = model.tokenize(tape, sample);
    auto decoded = model.decode(tape, model.encode(tape, model.apply_position_mask(tape, tok, plan)));
    auto logits = model.project_positions(tape, decoded.tokens);
    switch (kind) {
      case LossKind::position:
        return position_loss(logits, plan);
      case LossKind::smoothed:
        return smoothed_loss(logits, plan, wstar);
      default:
        return radarpos_loss(logits, plan, wstar, attention_weights(decoded.cls, decoded.tokens, opt.temperature));
    }
  };
  return check_parameters(model.params(), build, opt.step);
}

/// Fine-tuning cross-entropy with adapters attached (B perturbed off zero) and the base frozen.
inline std::vector<Result> check_finetune_loss(const SuiteOptions& opt = {}) {
  RadarPosModel<double> model(opt.model, opt.seed);
  model.attach_adapters(2);
  Rng rng(derive_seed(opt.seed, "lora_b"));
  for (auto& [name, p] : model.params()) {
    if (name.ends_with(".lora_b")) p.value = suite_detail::random_tensor(p.value.shape(), rng, -0.1, 0.1);
  }
  model.freeze_for_finetune();
  const auto sample = suite_detail::probe_sample(derive_seed(opt.seed, "probe"));
  auto build = [&](Tape<double>& tape) { return cross_entropy(model.forward_classify(tape, sample), sample.label); };
  return check_parameters(model.params(), build, opt.step);
}

inline SuiteReport run_suite(const SuiteOptions& opt = {}) {
  SuiteReport report;
  if (opt.include_ops) report.ops = check_ops(opt);
  if (opt.include_losses) {
    report.losses.push_back(suite_detail::worst("position_loss", check_pretrain_loss(LossKind::position, opt)));
    report.losses.push_back(suite_detail::worst("smoothed_loss", check_pretrain_loss(LossKind::smoothed, opt)));
    report.losses.push_back(suite_detail::worst("radarpos_loss", check_pretrain_loss(LossKind::radarpos, opt)));
    report.losses.push_back(suite_detail::worst("finetune_cross_entropy", check_finetune_loss(opt)));
  }
  for (const auto* group : {&report.ops, &report.losses}) {
    for (const auto& r : *group) {
      if (!r.passed()) report.offenders.push_back(r.name);
    }
  }
  return report;
}

}  // namespace radarpos::gradcheck
