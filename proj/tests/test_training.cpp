#include <cmath>
#include <limits>

#include "catch_amalgamated.hpp"
#include "radarpos/experiment.hpp"

using namespace radarpos;
using Catch::Matchers::WithinAbs;

namespace {

std::vector<pdw::SampleRecord> small_pool(std::size_t n, std::uint64_t seed = 3) {
  return pdw::make_pretrain_pool(pdw::default_registry(), {0, 1, 2}, n, pdw::NoiseParams{}, seed);
}

ParameterStore<double> single(double theta, double grad) {
  ParameterStore<double> s;
  auto& p = s.add("theta", Tensor<double>(Shape{1}, theta));
  p.grad[0] = grad;
  return s;
}

}  // namespace

TEST_CASE("AdamW first step", "[optim]") {
  SECTION("unit gradient moves by lr after decoupled decay") {
    auto s = single(1.0, 1.0);
    AdamW<double> opt;
    opt.step(s, 0.1);
    // bias-corrected moments are g and g² on the first step
    CHECK_THAT(s.get("theta").value[0], WithinAbs(1.0 - 0.1 * 0.01 - 0.1 / (1.0 + 1e-8), 1e-15));
    CHECK_THAT(s.get("theta").value[0], WithinAbs(0.899, 1e-6));
  }
  SECTION("zero gradient without decay leaves theta alone") {
    auto s = single(1.0, 0.0);
    AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
    opt.step(s, 0.1);
    CHECK(s.get("theta").value[0] == 1.0);
  }
  SECTION("decay alone shrinks theta by lr*wd") {
    auto s = single(1.0, 0.0);
    AdamW<double> opt({0.9, 0.999, 1e-8, 0.1});
    opt.step(s, 0.1);
    CHECK_THAT(s.get("theta").value[0], WithinAbs(0.99, 1e-15));
  }
  SECTION("frozen parameters are skipped") {
    auto s = single(1.0, 1.0);
    s.get("theta").trainable = false;
    AdamW<double> opt;
    opt.step(s, 0.1);
    CHECK(s.get("theta").value[0] == 1.0);
  }
}

TEST_CASE("AdamW second step against a hand-rolled recurrence", "[optim]") {
  auto s = single(0.5, 0.2);
  AdamW<double> opt({0.9, 0.999, 1e-8, 0.0});
  opt.step(s, 0.01);
  s.get("theta").grad[0] = -0.4;
  opt.step(s, 0.01);
  double theta = 0.5, m = 0.0, v = 0.0;
  const double grads[] = {0.2, -0.4};
  for (int t = 1; t <= 2; ++t) {
    m = 0.9 * m + 0.1 * grads[t - 1];
    v = 0.999 * v + 0.001 * grads[t - 1] * grads[t - 1];
    theta -= 0.01 * (m / (1 - std::pow(0.9, t))) / (std::sqrt(v / (1 - std::pow(0.999, t))) + 1e-8);
  }
  CHECK_THAT(s.get("theta").value[0], WithinAbs(theta, 1e-15));
  CHECK(opt.steps() == 2);
}

TEST_CASE("fine-tuning schedule hits its anchor values exactly", "[schedule]") {
  const FinetuneSchedule s;
  CHECK(s.lr_at(0) == 2.5e-6);
  CHECK(s.lr_at(9) == 2.5e-5);
  CHECK(s.lr_at(10) == 2.5e-5);
  CHECK(s.lr_at(24) == 2.5e-5);
  CHECK(s.lr_at(25) == 2.5e-6);
  CHECK(s.lr_at(40) == 2.5e-7);
  CHECK(s.lr_at(49) == 2.5e-7);
}

TEST_CASE("schedule rises through warmup and never rises after", "[schedule]") {
  const FinetuneSchedule s;
  for (std::size_t e = 1; e < 10; ++e) CHECK(s.lr_at(e) > s.lr_at(e - 1));
  for (std::size_t e = 11; e < 100; ++e) CHECK(s.lr_at(e) <= s.lr_at(e - 1));
  FinetuneSchedule bad;
  bad.warmup_epochs = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = {};
  bad.decay_factor = 1.5;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("zero pretraining epochs leave the initialisation untouched", "[pretrain]") {
  RadarPosModel<float> m(ModelConfig::tiny(), 2), ref(ModelConfig::tiny(), 2);
  PretrainHyper h;
  h.epochs = 0;
  const auto pool = small_pool(7);
  const auto r = pretrain(m, std::span<const pdw::SampleRecord>(pool), h, 1);
  CHECK(r.steps == 0);
  CHECK(shared_weight_checksum(m) == shared_weight_checksum(ref));
}

TEST_CASE("short pretraining is deterministic and lowers the loss", "[pretrain]") {
  PretrainHyper h;
  h.epochs = 6;
  h.batch_size = 4;
  h.lr = 5e-3;
  const auto pool = small_pool(16);
  RadarPosModel<float> a(ModelConfig::tiny(), 2), b(ModelConfig::tiny(), 2);
  const auto ra = pretrain(a, std::span<const pdw::SampleRecord>(pool), h, 5);
  const auto rb = pretrain(b, std::span<const pdw::SampleRecord>(pool), h, 5);
  CHECK(ra.epoch_loss == rb.epoch_loss);
  CHECK(shared_weight_checksum(a) == shared_weight_checksum(b));
  CHECK(ra.steps == 6 * 4);
  CHECK(ra.epoch_loss.back() < ra.epoch_loss.front());
}

TEST_CASE("every objective trains without error", "[pretrain]") {
  const auto pool = small_pool(8);
  for (auto obj : {PretrainObjective::position, PretrainObjective::smoothed, PretrainObjective::radarpos}) {
    for (auto dist : {SmoothingDistance::index, SmoothingDistance::toa}) {
      PretrainHyper h;
      h.epochs = 1;
      h.batch_size = 4;
      h.objective = obj;
      h.distance = dist;
      RadarPosModel<float> m(ModelConfig::tiny(), 2);
      const auto r = pretrain(m, std::span<const pdw::SampleRecord>(pool), h, 1);
      CHECK(std::isfinite(r.epoch_loss[0]));
      CHECK(r.epoch_loss[0] > 0.0);
    }
  }
}

TEST_CASE("non-finite inputs abort pretraining with a numeric error", "[pretrain]") {
  auto pool = small_pool(4);
  pool[2].features[10] = std::numeric_limits<float>::quiet_NaN();
  PretrainHyper h;
  h.epochs = 1;
  h.batch_size = 2;
  RadarPosModel<float> m(ModelConfig::tiny(), 2);
  CHECK_THROWS_AS(pretrain(m, std::span<const pdw::SampleRecord>(pool), h, 1), NumericError);
}

TEST_CASE("fine-tuning touches only adapters and the head", "[finetune]") {
  const auto split = pdw::make_split(0, 4);
  RadarPosModel<float> m(ModelConfig::tiny(), 2);
  const auto before = m.params();
  FinetuneHyper h;
  h.schedule.epochs = 2;
  h.schedule.base_lr = 5e-3;
  h.lora_rank = 2;
  finetune(m, std::span<const pdw::SampleRecord>(split.train), h, 3);
  std::size_t changed = 0;
  for (const auto& [name, p] : before) {
    const auto& now = m.params().get(name);
    if (name.starts_with("classifier.")) {
      changed += !(now.value == p.value);
    } else {
      CHECK(now.value == p.value);
    }
  }
  CHECK(changed > 0);
  bool adapters_moved = false;
  for (const auto& [name, p] : m.params())
    if (name.ends_with(".lora_b"))
      for (float v : p.value.values()) adapters_moved = adapters_moved || v != 0.0f;
  CHECK(adapters_moved);
}

TEST_CASE("frozen base parameters get no gradient during fine-tuning", "[finetune]") {
  RadarPosModel<float> m(ModelConfig::tiny(), 2);
  m.attach_adapters(2);
  m.freeze_for_finetune();
  const auto s = pdw::simulate_sample(pdw::default_registry(), 1, 0, pdw::NoiseParams{}, 1);
  Tape<float> tape;
  tape.backward(cross_entropy(m.forward_classify(tape, s), s.label));
  for (const auto& [name, p] : m.params()) {
    if (p.trainable) continue;
    for (float g : p.grad.values()) REQUIRE(g == 0.0f);
  }
  double head = 0.0;
  for (float g : m.params().get("classifier.weight").grad.values()) head += std::fabs(g);
  CHECK(head > 0.0);
}

TEST_CASE("zero fine-tuning epochs reproduce the untrained head", "[finetune]") {
  const auto split = pdw::make_split(1, 4);
  RadarPosModel<float> m(ModelConfig::tiny(), 2);
  const auto before = evaluate(m, std::span<const pdw::SampleRecord>(split.test));
  FinetuneHyper h;
  h.schedule.epochs = 0;
  finetune(m, std::span<const pdw::SampleRecord>(split.train), h, 3);
  CHECK(m.has_adapters());
  const auto after = evaluate(m, std::span<const pdw::SampleRecord>(split.test));
  CHECK(after.accuracy == before.accuracy);
  CHECK(after.confusion.rows() == before.confusion.rows());
}
