// SPDX-License-Identifier: Apache-2.0
//
// Synthetic pulse-descriptor-word (PDW) generator.
//
// Seven emitter classes, each with an RF hop program and a PW program that
// advance in pulse-count dwells from the start of the intercept. Three modes
// differ in their PRI program: m0 (VS) constant high-PRF, m1 (TAS) staggered,
// m2 (STT) jittered. Samples are the first 512 pulses, RF and PW min-max
// normalised per sequence, with the raw TOA track kept separately.

#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "radarpos/errors.hpp"
#include "radarpos/parallel.hpp"
#include "radarpos/rng.hpp"

namespace radarpos::pdw {

inline constexpr std::size_t kSequenceLength = 512;
inline constexpr std::size_t kChannels = 2;
inline constexpr std::size_t kNumEmitters = 7;
inline constexpr std::size_t kNumModes = 3;

struct PulseDescriptor {
  double toa = 0.0;  // s
  double rf = 0.0;   // Hz
  double pw = 0.0;   // s
  double amplitude = 1.0;
};

enum class PriPattern : std::uint8_t { constant, stagger, jitter };

inline const char* mode_name(std::uint8_t mode_id) {
  static constexpr std::array<const char*, kNumModes> names{"VS", "TAS", "STT"};
  return mode_id < kNumModes ? names[mode_id] : "?";
}

struct ModeSpec {
  std::uint8_t mode_id = 0;
  PriPattern pattern = PriPattern::constant;
  double pri_base = 1e-3;              // s; constant and jitter patterns
  std::vector<double> stagger_levels;  // s; cycled in order for the stagger pattern
  double jitter = 0.0;                 // fraction of pri_base, uniform ±

  void validate() const {
    if (mode_id >= kNumModes) throw ConfigError("mode id must be 0..2");
    switch (pattern) {
      case PriPattern::constant:
        if (!(pri_base > 0)) throw ConfigError("constant PRI must be positive");
        break;
      case PriPattern::stagger:
        if (stagger_levels.size() < 2 || stagger_levels.size() > 8) {
          throw ConfigError("stagger needs 2..8 levels, got " + std::to_string(stagger_levels.size()));
        }
        for (double l : stagger_levels) {
          if (!(l > 0)) throw ConfigError("stagger levels must be positive");
        }
        break;
      case PriPattern::jitter:
        if (!(pri_base > 0)) throw ConfigError("jittered PRI must be positive");
        if (!(jitter > 0.0 && jitter <= 0.3)) throw ConfigError("jitter fraction must lie in (0, 0.3]");
        break;
    }
  }

  double min_pri() const {
    switch (pattern) {
      case PriPattern::stagger:
        return *std::min_element(stagger_levels.begin(), stagger_levels.end());
      case PriPattern::jitter:
        return pri_base * (1.0 - jitter);
      default:
        return pri_base;
    }
  }
};

enum class RfAgility : std::uint8_t { fixed, hop_set };

struct EmitterSpec {
  std::uint8_t emitter_id = 0;
  double rf_center = 9.0e9;  // Hz
  RfAgility rf_agility = RfAgility::fixed;
  std::vector<double> rf_hops;  // Hz offsets from rf_center, visited in order
  std::size_t rf_dwell = 1;     // pulses per hop
  double pw_nominal = 1e-6;     // s
  std::vector<double> pw_levels{1.0};  // multipliers of pw_nominal, visited in order
  std::size_t pw_dwell = 1;            // pulses per PW level
  std::array<ModeSpec, kNumModes> modes{};

  void validate() const {
    if (emitter_id >= kNumEmitters) throw ConfigError("emitter id must be 0..6");
    if (!(rf_center > 0)) throw ConfigError("rf_center must be positive");
    if (!(pw_nominal > 0)) throw ConfigError("pw_nominal must be positive");
    if (rf_agility == RfAgility::hop_set && rf_hops.empty()) throw ConfigError("hop-set emitter without hops");
    if (rf_dwell == 0 || pw_dwell == 0) throw ConfigError("dwell must be at least one pulse");
    if (pw_levels.empty()) throw ConfigError("pw_levels must not be empty");
    for (double h : rf_hops) {
      if (!(rf_center + h > 0)) throw ConfigError("hop frequency must stay positive");
    }
    for (double l : pw_levels) {
      if (!(l > 0)) throw ConfigError("pw levels must be positive");
    }
  }
};

struct NoiseParams {
  double toa_sigma = 50e-9;  // s
  double rf_sigma = 1e6;     // Hz
  double pw_sigma = 20e-9;   // s

  static NoiseParams none() { return {0.0, 0.0, 0.0}; }
};

/// Model input: channel-major [RF | PW] features in [0,1] plus the raw TOA track.
struct SampleRecord {
  std::vector<float> features;    // kChannels * kSequenceLength
  std::vector<double> toa_track;  // s, toa_track[0] == 0
  std::uint8_t label = 0;
  std::uint8_t mode = 0;

  float feature(std::size_t channel, std::size_t pulse) const { return features[channel * kSequenceLength + pulse]; }

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetSplit {
  std::vector<SampleRecord> train;
  std::vector<SampleRecord> test;
  std::vector<std::uint32_t> ratio;
  std::uint64_t seed = 0;
};

inline constexpr std::array<std::uint32_t, kNumEmitters> kDefaultRatio{100, 50, 25, 15, 10, 5, 1};
inline constexpr std::size_t kDefaultTestTotal = 200;

inline std::vector<PulseDescriptor> generate_sequence(const EmitterSpec& emitter, const ModeSpec& mode,
                                                      std::size_t n_pulses, const NoiseParams& noise,
                                                      std::uint64_t seed) {
  emitter.validate();
  mode.validate();
  if (n_pulses == 0) throw ConfigError("n_pulses must be positive");
  if (noise.toa_sigma < 0 || noise.rf_sigma < 0 || noise.pw_sigma < 0) throw ConfigError("noise sigmas must be >= 0");
  if (noise.toa_sigma * 10.0 >= mode.min_pri()) {
    throw ConfigError("TOA noise too large for the PRI program (need 10 sigma < min PRI)");
  }

  Rng rng(seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);

  std::vector<PulseDescriptor> out(n_pulses);
  double ideal_toa = 0.0;
  for (std::size_t n = 0; n < n_pulses; ++n) {
    if (n > 0) {
      switch (mode.pattern) {
        case PriPattern::constant:
          ideal_toa += mode.pri_base;
          break;
        case PriPattern::stagger:
          ideal_toa += mode.stagger_levels[(n - 1) % mode.stagger_levels.size()];
          break;
        case PriPattern::jitter:
          ideal_toa += mode.pri_base * (1.0 + mode.jitter * unit(rng));
          break;
      }
    }
    auto& p = out[n];
    p.toa = ideal_toa + noise.toa_sigma * gauss(rng);
    const double hop = emitter.rf_agility == RfAgility::hop_set
                           ? emitter.rf_hops[(n / emitter.rf_dwell) % emitter.rf_hops.size()]
                           : 0.0;
    p.rf = emitter.rf_center + hop + noise.rf_sigma * gauss(rng);
    const double level = emitter.pw_levels[(n / emitter.pw_dwell) % emitter.pw_levels.size()];
    p.pw = std::max(1e-9, emitter.pw_nominal * level + noise.pw_sigma * gauss(rng));
    p.amplitude = 1.0;
    if (n > 0 && !(p.toa > out[n - 1].toa)) throw NumericError("generated TOAs are not strictly increasing");
  }
  return out;
}

namespace detail {
inline void min_max_normalise(const std::vector<double>& x, float* out) {
  const auto [lo, hi] = std::minmax_element(x.begin(), x.end());
  const double mn = *lo, mx = *hi;
  for (std::size_t i = 0; i < x.size(); ++i) {
    out[i] = mx == mn ? 0.5f : static_cast<float>((x[i] - mn) / (mx - mn));
  }
}
}  // namespace detail

inline SampleRecord to_sample(const std::vector<PulseDescriptor>& seq, std::uint8_t label = 0, std::uint8_t mode = 0) {
  if (seq.size() < kSequenceLength) {
    throw InsufficientDataError("sequence has " + std::to_string(seq.size()) + " pulses, need " +
                                std::to_string(kSequenceLength));
  }
  SampleRecord s;
  s.label = label;
  s.mode = mode;
  s.features.assign(kChannels * kSequenceLength, 0.0f);
  s.toa_track.resize(kSequenceLength);
  std::vector<double> rf(kSequenceLength), pw(kSequenceLength);
  for (std::size_t n = 0; n < kSequenceLength; ++n) {
    rf[n] = seq[n].rf;
    pw[n] = seq[n].pw;
    s.toa_track[n] = seq[n].toa - seq[0].toa;
  }
  detail::min_max_normalise(rf, s.features.data());
  detail::min_max_normalise(pw, s.features.data() + kSequenceLength);
  return s;
}

/// Splits `total` over the weights by largest remainder; ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, const std::vector<double>& weights) {
  const double wsum = std::accumulate(weights.begin(), weights.end(), 0.0);
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> rem;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(total) * weights[i] / wsum;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    rem.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(rem.begin(), rem.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) counts[rem[k % rem.size()].second] += 1;
  return counts;
}

inline std::vector<std::size_t> balanced_test_counts(std::size_t total = kDefaultTestTotal) {
  return largest_remainder(total, std::vector<double>(kNumEmitters, 1.0));
}

/// The default seven-emitter registry. PRI programs depend on the mode only.
inline std::vector<EmitterSpec> default_registry() {
  const double mhz = 1e6, us = 1e-6;
  std::vector<EmitterSpec> reg(kNumEmitters);
  auto set = [&](std::size_t e, double rf_center, std::vector<double> hops_mhz, std::size_t rf_dwell, double pw_us,
                 std::vector<double> pw_levels, std::size_t pw_dwell) {
    auto& s = reg[e];
    s.emitter_id = static_cast<std::uint8_t>(e);
    s.rf_center = rf_center;
    s.rf_agility = hops_mhz.size() > 1 ? RfAgility::hop_set : RfAgility::fixed;
    for (double h : hops_mhz) s.rf_hops.push_back(h * mhz);
    s.rf_dwell = rf_dwell;
    s.pw_nominal = pw_us * us;
    s.pw_levels = std::move(pw_levels);
    s.pw_dwell = pw_dwell;
    s.modes[0] = ModeSpec{0, PriPattern::constant, 20 * us, {}, 0.0};
    s.modes[1] = ModeSpec{1, PriPattern::stagger, 0.0, {60 * us, 75 * us, 90 * us}, 0.0};
    s.modes[2] = ModeSpec{2, PriPattern::jitter, 40 * us, {}, 0.1};
  };
  set(0, 9.00e9, {0, 10, 20, 30, 40, 50, 60, 70}, 64, 1.0, {1.0}, 1);
  set(1, 9.20e9, {0, 70, 10, 60, 20, 50, 30, 40}, 64, 2.0, {1.0}, 1);
  set(2, 9.40e9, {0}, 1, 1.0, {1.0, 1.5, 2.0, 2.5}, 128);
  set(3, 9.60e9, {60, 40, 20, 0}, 128, 1.5, {1.0, 2.0}, 256);
  set(4, 9.80e9, {0, 50}, 32, 0.5, {8, 7, 6, 5, 4, 3, 2, 1}, 64);
  set(5, 10.0e9, {30, 10, 140, 70, 0, 120, 50, 100, 20, 130, 80, 40, 150, 60, 110, 90}, 32, 3.0, {1.0}, 1);
  set(6, 10.2e9, {0}, 1, 2.0, {3, 1, 4, 0.5, 6, 2, 7, 5}, 64);
  return reg;
}

inline SampleRecord simulate_sample(const std::vector<EmitterSpec>& registry, std::size_t emitter, std::uint8_t mode,
                                    const NoiseParams& noise, std::uint64_t seed) {
  const auto& spec = registry.at(emitter);
  auto seq = generate_sequence(spec, spec.modes.at(mode), kSequenceLength, noise, seed);
  return to_sample(seq, spec.emitter_id, mode);
}

/// Long-tailed train split (class k gets ratio[k] samples) plus a test split with test_counts[k] per class.
inline DatasetSplit make_split(const std::vector<EmitterSpec>& registry, std::uint8_t mode,
                               const std::vector<std::uint32_t>& ratio, const std::vector<std::size_t>& test_counts,
                               const NoiseParams& noise, std::uint64_t seed) {
  if (ratio.size() != registry.size() || test_counts.size() != registry.size()) {
    throw ConfigError("ratio and test counts need one entry per emitter");
  }
  for (auto r : ratio) {
    if (r == 0) throw ConfigError("ratio entries must be positive");
  }
  struct Job {
    std::size_t emitter;
    std::uint64_t seed;
    bool train;
  };
  std::vector<Job> jobs;
  for (std::size_t k = 0; k < registry.size(); ++k) {
    for (std::size_t i = 0; i < ratio[k]; ++i) jobs.push_back({k, derive_seed(seed, mode * 16 + 0, k * 100000 + i), true});
  }
  for (std::size_t k = 0; k < registry.size(); ++k) {
    for (std::size_t i = 0; i < test_counts[k]; ++i)
      jobs.push_back({k, derive_seed(seed, mode * 16 + 1, k * 100000 + i), false});
  }
  std::vector<SampleRecord> samples(jobs.size());
  parallel_for(jobs.size(), [&](std::size_t j) {
    samples[j] = simulate_sample(registry, jobs[j].emitter, mode, noise, jobs[j].seed);
  });
  DatasetSplit split;
  split.ratio = ratio;
  split.seed = seed;
  for (std::size_t j = 0; j < jobs.size(); ++j) (jobs[j].train ? split.train : split.test).push_back(std::move(samples[j]));
  return split;
}

inline DatasetSplit make_split(std::uint8_t mode, std::uint64_t seed) {
  return make_split(default_registry(), mode, {kDefaultRatio.begin(), kDefaultRatio.end()}, balanced_test_counts(),
                    NoiseParams{}, seed);
}

/// Unlabelled-use pretraining pool: round-robin over (emitter, mode) pairs.
inline std::vector<SampleRecord> make_pretrain_pool(const std::vector<EmitterSpec>& registry,
                                                    const std::vector<std::uint8_t>& modes, std::size_t count,
                                                    const NoiseParams& noise, std::uint64_t seed) {
  if (modes.empty()) throw ConfigError("pretraining pool needs at least one mode");
  std::vector<SampleRecord> out(count);
  parallel_for(count, [&](std::size_t i) {
    const std::size_t emitter = i % registry.size();
    const std::uint8_t mode = modes[(i / registry.size()) % modes.size()];
    out[i] = simulate_sample(registry, emitter, mode, noise, derive_seed(seed, 0x9001, i));
  });
  return out;
}

}  // namespace radarpos::pdw
