#include "canids/eval_harness.hpp"

#include <cstdio>
#include <sstream>

namespace canids {

namespace {

std::optional<double> ratio(std::uint64_t num, std::uint64_t den) {
  if (den == 0) return std::nullopt;
  return static_cast<double>(num) / static_cast<double>(den);
}

nlohmann::json optional_json(const std::optional<double>& v) {
  return v ? nlohmann::json(*v) : nlohmann::json(nullptr);
}

std::optional<double> optional_from(const nlohmann::json& j) {
  if (j.is_null()) return std::nullopt;
  return j.get<double>();
}

}  // namespace

std::uint64_t ConfusionMatrix::total() const {
  std::uint64_t n = 0;
  for (const auto& row : counts)
    for (auto v : row) n += v;
  return n;
}

std::uint64_t ConfusionMatrix::trace() const {
  std::uint64_t n = 0;
  for (std::size_t i = 0; i < kNumClasses; ++i) n += counts[i][i];
  return n;
}

ConfusionMatrix confusion(std::span<const LabelPair> pairs) {
  if (pairs.empty()) throw Error("confusion matrix needs at least one prediction");
  ConfusionMatrix cm;
  for (const auto& [truth, predicted] : pairs) cm.add(truth, predicted);
  return cm;
}

AttackMetrics per_attack_metrics(const ConfusionMatrix& cm, ClassLabel attack) {
  if (attack == ClassLabel::Normal) throw Error("per-attack metrics need an attack label");
  const std::size_t a = index_of(attack);
  const std::size_t normal = index_of(ClassLabel::Normal);
  const std::uint64_t tp = cm.counts[a][a];
  const std::uint64_t fp = cm.counts[normal][a];
  std::uint64_t fn = 0;
  std::uint64_t tn = 0;
  for (std::size_t p = 0; p < kNumClasses; ++p) {
    if (p == a) continue;
    fn += cm.counts[a][p];
    tn += cm.counts[normal][p];
  }
  const std::uint64_t n = tp + tn + fp + fn;
  if (n == 0) throw Error("no Normal or " + std::string(label_name(attack)) + " frames to evaluate");

  AttackMetrics m;
  m.accuracy = ratio(tp + tn, n);
  m.precision = ratio(tp, tp + fp);
  m.tpr = ratio(tp, tp + fn);
  m.fpr = ratio(fp, fp + tn);
  if (m.precision && m.tpr && (*m.precision + *m.tpr) > 0.0)
    m.f1 = 2.0 * *m.precision * *m.tpr / (*m.precision + *m.tpr);
  return m;
}

OverallMetrics overall_metrics(const ConfusionMatrix& cm) {
  const std::uint64_t total = cm.total();
  if (total == 0) throw Error("overall metrics need a non-empty confusion matrix");
  const std::size_t normal = index_of(ClassLabel::Normal);
  std::uint64_t normal_total = 0;
  std::uint64_t normal_flagged = 0;
  std::uint64_t attack_total = 0;
  std::uint64_t attack_missed = 0;
  for (std::size_t t = 0; t < kNumClasses; ++t) {
    for (std::size_t p = 0; p < kNumClasses; ++p) {
      const auto v = cm.counts[t][p];
      if (t == normal) {
        normal_total += v;
        if (p != normal) normal_flagged += v;
      } else {
        attack_total += v;
        if (p == normal) attack_missed += v;
      }
    }
  }
  OverallMetrics m;
  m.accuracy = static_cast<double>(cm.trace()) / static_cast<double>(total);
  m.fpr = ratio(normal_flagged, normal_total);
  m.fnr = ratio(attack_missed, attack_total);
  return m;
}

EvalReport build_report(const ConfusionMatrix& cm, nlohmann::json meta) {
  EvalReport r;
  r.confusion = cm;
  r.overall = overall_metrics(cm);
  const std::size_t normal = index_of(ClassLabel::Normal);
  std::uint64_t normal_total = 0;
  for (auto v : cm.counts[normal]) normal_total += v;
  for (auto attack : kAttackLabels) {
    std::uint64_t attack_total = 0;
    for (auto v : cm.counts[index_of(attack)]) attack_total += v;
    if (attack_total + normal_total > 0) r.per_attack[attack] = per_attack_metrics(cm, attack);
  }
  r.meta = std::move(meta);
  return r;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["schema_version"] = EvalReport::kSchemaVersion;
  j["overall"] = {{"accuracy", report.overall.accuracy},
                  {"fpr", optional_json(report.overall.fpr)},
                  {"fnr", optional_json(report.overall.fnr)}};
  auto& per = j["per_attack"] = nlohmann::json::object();
  for (const auto& [attack, m] : report.per_attack) {
    per[std::string(label_name(attack))] = {{"accuracy", optional_json(m.accuracy)},
                                            {"precision", optional_json(m.precision)},
                                            {"tpr", optional_json(m.tpr)},
                                            {"fpr", optional_json(m.fpr)},
                                            {"f1", optional_json(m.f1)}};
  }
  nlohmann::json labels = nlohmann::json::array();
  for (auto l : kAllLabels) labels.push_back(std::string(label_name(l)));
  j["confusion"] = {{"labels", labels}, {"counts", report.confusion.counts}};
  j["meta"] = report.meta;
  return j;
}

EvalReport eval_report_from_json(const nlohmann::json& j) {
  const int version = j.at("schema_version").get<int>();
  if (version != EvalReport::kSchemaVersion)
    throw Error("unsupported report schema version " + std::to_string(version));
  EvalReport r;
  const auto& o = j.at("overall");
  r.overall.accuracy = o.at("accuracy").get<double>();
  r.overall.fpr = optional_from(o.at("fpr"));
  r.overall.fnr = optional_from(o.at("fnr"));
  for (const auto& [name, m] : j.at("per_attack").items()) {
    auto label = label_from_name(name);
    if (!label || *label == ClassLabel::Normal) throw Error("unknown attack '" + name + "' in report");
    r.per_attack[*label] = {optional_from(m.at("accuracy")), optional_from(m.at("precision")),
                            optional_from(m.at("tpr")), optional_from(m.at("fpr")), optional_from(m.at("f1"))};
  }
  r.confusion.counts =
      j.at("confusion").at("counts").get<std::array<std::array<std::uint64_t, kNumClasses>, kNumClasses>>();
  r.meta = j.at("meta");
  return r;
}

std::string format_rate(std::optional<double> value) {
  if (!value) return "-";
  char buf[32];
  if (*value != 0.0 && *value < 1e-4)
    std::snprintf(buf, sizeof buf, "%.4e", *value);
  else
    std::snprintf(buf, sizeof buf, "%.4f", *value);
  return buf;
}

std::string attack_title(ClassLabel attack) {
  switch (attack) {
    case ClassLabel::Dos:
      return "DoS Attack";
    case ClassLabel::Fuzzy:
      return "Fuzzy Attack";
    case ClassLabel::GearSpoof:
      return "Gear Spoofing Attack";
    case ClassLabel::RpmSpoof:
      return "RPM Spoofing Attack";
    case ClassLabel::Normal:
      break;
  }
  return "Normal";
}

std::string render_text(const EvalReport& report) {
  std::ostringstream out;
  char line[160];
  out << "Overall\n";
  std::snprintf(line, sizeof line, "%-10s %-12s %-12s\n", "Accuracy", "FPR", "FNR");
  out << line;
  std::snprintf(line, sizeof line, "%-10s %-12s %-12s\n", format_rate(report.overall.accuracy).c_str(),
                format_rate(report.overall.fpr).c_str(), format_rate(report.overall.fnr).c_str());
  out << line << '\n';
  std::snprintf(line, sizeof line, "%-22s %-10s %-11s %-10s %-11s %-10s\n", "Attacks", "Accuracy", "Precisions",
                "TPR", "FPR", "F1-score");
  out << line;
  for (const auto& [attack, m] : report.per_attack) {
    std::snprintf(line, sizeof line, "%-22s %-10s %-11s %-10s %-11s %-10s\n", attack_title(attack).c_str(),
                  format_rate(m.accuracy).c_str(), format_rate(m.precision).c_str(), format_rate(m.tpr).c_str(),
                  format_rate(m.fpr).c_str(), format_rate(m.f1).c_str());
    out << line;
  }
  return out.str();
}

}  // namespace canids
