// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <random>
#include <string_view>

#include "radarpos/tensor.hpp"

namespace radarpos {

using Rng = std::mt19937_64;

/// SplitMix64 finaliser; used to derive independent stream seeds.
constexpr std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a) { return mix64(seed ^ mix64(a)); }

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  return derive_seed(derive_seed(seed, a), b);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed, std::string_view name) { return derive_seed(seed, fnv1a(name)); }

/// Normal(0, stddev) truncated to ±2·stddev by resampling.
template <class T>
Tensor<T> truncated_normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, 1.0);
  for (std::size_t i = 0; i < out.size(); ++i) {
    double z = dist(rng);
    while (z < -2.0 || z > 2.0) z = dist(rng);
    out[i] = static_cast<T>(z * stddev);
  }
  return out;
}

template <class T>
Tensor<T> normal(Shape shape, double stddev, Rng& rng) {
  Tensor<T> out(std::move(shape));
  std::normal_distribution<double> dist(0.0, stddev);
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<T>(dist(rng));
  return out;
}

}  // namespace radarpos
