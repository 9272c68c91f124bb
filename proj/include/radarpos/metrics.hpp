// SPDX-License-Identifier: Apache-2.0
//
// Confusion matrix (rows = truth, columns = prediction), accuracy and
// per-class / macro-averaged precision, recall and F1.

#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "radarpos/errors.hpp"

namespace radarpos {

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t classes) : k_(classes), counts_(classes * classes, 0) {
    if (classes == 0) throw ConfigError("confusion matrix needs at least one class");
  }

  static ConfusionMatrix from_counts(const std::vector<std::vector<std::uint64_t>>& rows) {
    ConfusionMatrix cm(rows.size());
    for (std::size_t t = 0; t < rows.size(); ++t) {
      if (rows[t].size() != rows.size()) throw DimensionError("confusion matrix must be square");
      for (std::size_t p = 0; p < rows.size(); ++p) cm.counts_[t * cm.k_ + p] = rows[t][p];
    }
    return cm;
  }

  void add(std::size_t truth, std::size_t predicted) {
    if (truth >= k_ || predicted >= k_) throw DomainError("class index out of range");
    ++counts_[truth * k_ + predicted];
  }

  std::size_t classes() const noexcept { return k_; }
  std::uint64_t at(std::size_t truth, std::size_t predicted) const { return counts_.at(truth * k_ + predicted); }

  std::uint64_t total() const {
    std::uint64_t s = 0;
    for (auto c : counts_) s += c;
    return s;
  }
  std::uint64_t trace() const {
    std::uint64_t s = 0;
    for (std::size_t i = 0; i < k_; ++i) s += at(i, i);
    return s;
  }
  std::uint64_t row_sum(std::size_t truth) const {
    std::uint64_t s = 0;
    for (std::size_t p = 0; p < k_; ++p) s += at(truth, p);
    return s;
  }
  std::uint64_t col_sum(std::size_t predicted) const {
    std::uint64_t s = 0;
    for (std::size_t t = 0; t < k_; ++t) s += at(t, predicted);
    return s;
  }

  std::vector<std::vector<std::uint64_t>> rows() const {
    std::vector<std::vector<std::uint64_t>> out(k_, std::vector<std::uint64_t>(k_));
    for (std::size_t t = 0; t < k_; ++t)
      for (std::size_t p = 0; p < k_; ++p) out[t][p] = at(t, p);
    return out;
  }

 private:
  std::size_t k_;
  std::vector<std::uint64_t> counts_;
};

struct ClassScores {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  std::uint64_t support = 0;
  bool absent = false;  // no truth and no prediction for this class; scores are 0
};

inline double safe_ratio(double num, double den) { return den == 0.0 ? 0.0 : num / den; }

inline std::vector<ClassScores> class_scores(const ConfusionMatrix& cm) {
  std::vector<ClassScores> out(cm.classes());
  for (std::size_t c = 0; c < cm.classes(); ++c) {
    const auto tp = static_cast<double>(cm.at(c, c));
    const auto truth = cm.row_sum(c);
    const auto pred = cm.col_sum(c);
    auto& s = out[c];
    s.support = truth;
    s.absent = truth == 0 && pred == 0;
    s.precision = safe_ratio(tp, static_cast<double>(pred));
    s.recall = safe_ratio(tp, static_cast<double>(truth));
    s.f1 = safe_ratio(2.0 * s.precision * s.recall, s.precision + s.recall);
  }
  return out;
}

inline double accuracy(const ConfusionMatrix& cm) {
  return safe_ratio(static_cast<double>(cm.trace()), static_cast<double>(cm.total()));
}

/// Unweighted mean of per-class F1 over all classes, absent ones included as 0.
inline double macro_f1(const ConfusionMatrix& cm) {
  const auto scores = class_scores(cm);
  double s = 0.0;
  for (const auto& c : scores) s += c.f1;
  return s / static_cast<double>(scores.size());
}

struct EvalReport {
  std::string scenario;  // "m0:m1"
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  std::vector<ClassScores> per_class;
  ConfusionMatrix confusion{1};

  static EvalReport from_confusion(ConfusionMatrix cm, std::string scenario = {}) {
    EvalReport r;
    r.scenario = std::move(scenario);
    r.accuracy = radarpos::accuracy(cm);
    r.macro_f1 = radarpos::macro_f1(cm);
    r.per_class = class_scores(cm);
    r.confusion = std::move(cm);
    return r;
  }

  nlohmann::json to_json() const {
    nlohmann::json classes = nlohmann::json::array();
    for (const auto& c : per_class) {
      classes.push_back({{"precision", c.precision}, {"recall", c.recall}, {"f1", c.f1}, {"support", c.support},
                         {"absent", c.absent}});
    }
    return {{"scenario", scenario}, {"accuracy", accuracy},          {"macro_f1", macro_f1},
            {"per_class", classes}, {"confusion", confusion.rows()}};
  }
};

inline ConfusionMatrix confusion_from(std::span<const std::size_t> truth, std::span<const std::size_t> predicted,
                                      std::size_t classes) {
  if (truth.size() != predicted.size()) throw DimensionError("truth and prediction lengths differ");
  ConfusionMatrix cm(classes);
  for (std::size_t i = 0; i < truth.size(); ++i) cm.add(truth[i], predicted[i]);
  return cm;
}

}  // namespace radarpos
