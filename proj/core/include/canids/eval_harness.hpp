#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "canids/can_frame.hpp"
#include "json.hpp"

namespace canids {

/// counts[true][predicted]
struct ConfusionMatrix {
  std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses> counts{};

  void add(ClassLabel truth, ClassLabel predicted) { ++counts[index_of(truth)][index_of(predicted)]; }
  std::uint64_t at(ClassLabel truth, ClassLabel predicted) const {
    return counts[index_of(truth)][index_of(predicted)];
  }
  std::uint64_t total() const;
  std::uint64_t trace() const;
  friend bool operator==(const ConfusionMatrix&, const ConfusionMatrix&) = default;
};

using LabelPair = std::pair<ClassLabel, ClassLabel>;  // (true, predicted)

/// Throws Error on an empty input.
ConfusionMatrix confusion(std::span<const LabelPair> pairs);

/// One-vs-rest metrics for an attack, restricted to frames whose true label
/// is Normal or that attack. A metric whose denominator is zero is nullopt.
struct AttackMetrics {
  std::optional<double> accuracy;
  std::optional<double> precision;
  std::optional<double> tpr;
  std::optional<double> fpr;
  std::optional<double> f1;
  friend bool operator==(const AttackMetrics&, const AttackMetrics&) = default;
};

AttackMetrics per_attack_metrics(const ConfusionMatrix& cm, ClassLabel attack);

/// Accuracy over all classes; fpr/fnr after collapsing to normal vs attack.
struct OverallMetrics {
  double accuracy = 0.0;
  std::optional<double> fpr;
  std::optional<double> fnr;
  friend bool operator==(const OverallMetrics&, const OverallMetrics&) = default;
};

OverallMetrics overall_metrics(const ConfusionMatrix& cm);

struct EvalReport {
  static constexpr int kSchemaVersion = 1;

  OverallMetrics overall;
  std::map<ClassLabel, AttackMetrics> per_attack;
  ConfusionMatrix confusion;
  nlohmann::json meta = nlohmann::json::object();  // model hash, manifest, seed, config
  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// Overall plus every attack that has at least one Normal-or-attack frame.
EvalReport build_report(const ConfusionMatrix& cm, nlohmann::json meta = nlohmann::json::object());

nlohmann::json to_json(const EvalReport& report);
EvalReport eval_report_from_json(const nlohmann::json& j);

/// Text table in the column order Attacks | Accuracy | Precisions | TPR |
/// FPR | F1-score, preceded by the overall summary. Undefined cells print "-".
std::string render_text(const EvalReport& report);

/// Four decimals; nonzero values below 1e-4 switch to scientific notation.
std::string format_rate(std::optional<double> value);

/// Human-readable attack name used in reports ("DoS Attack", ...).
std::string attack_title(ClassLabel attack);

}  // namespace canids
