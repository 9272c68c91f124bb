// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cmath>
#include <map>
#include <string>

#include "radarpos/autograd.hpp"

namespace radarpos {

struct AdamWConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// AdamW with decoupled weight decay and bias-corrected moments. Frozen
/// parameters are skipped entirely.
template <class T>
class AdamW {
 public:
  explicit AdamW(AdamWConfig cfg = {}) : cfg_(cfg) {}

  void step(ParameterStore<T>& params, double lr) {
    ++t_;
    const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (auto& [name, p] : params) {
      if (!p.trainable) continue;
      auto [it, fresh] = state_.try_emplace(name);
      auto& st = it->second;
      if (fresh) {
        st.m.assign(p.value.size(), 0.0);
        st.v.assign(p.value.size(), 0.0);
      }
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double g = static_cast<double>(p.grad[i]);
        double theta = static_cast<double>(p.value[i]);
        theta -= lr * cfg_.weight_decay * theta;
        st.m[i] = cfg_.beta1 * st.m[i] + (1.0 - cfg_.beta1) * g;
        st.v[i] = cfg_.beta2 * st.v[i] + (1.0 - cfg_.beta2) * g * g;
        const double mhat = st.m[i] / c1;
        const double vhat = st.v[i] / c2;
        theta -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        p.value[i] = static_cast<T>(theta);
      }
    }
  }

  std::size_t steps() const noexcept { return t_; }
  const AdamWConfig& config() const noexcept { return cfg_; }

 private:
  struct Moments {
    std::vector<double> m, v;
  };

  AdamWConfig cfg_;
  std::size_t t_ = 0;
  std::map<std::string, Moments> state_;
};

}  // namespace radarpos
