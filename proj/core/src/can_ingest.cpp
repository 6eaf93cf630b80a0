#include "canids/can_ingest.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <numeric>
#include <random>

namespace canids {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

std::vector<std::string_view> split_fields(std::string_view line, char delimiter) {
  std::vector<std::string_view> fields;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(delimiter, start);
    if (pos == std::string_view::npos) {
      fields.push_back(trim(line.substr(start)));
      break;
    }
    fields.push_back(trim(line.substr(start, pos - start)));
    start = pos + 1;
  }
  return fields;
}

std::optional<std::size_t> resolve(int col, std::size_t n) {
  long idx = col < 0 ? static_cast<long>(n) + col : col;
  if (idx < 0 || static_cast<std::size_t>(idx) >= n) return std::nullopt;
  return static_cast<std::size_t>(idx);
}

template <typename T>
bool parse_hex(std::string_view s, T& out) {
  if (s.starts_with("0x") || s.starts_with("0X")) s.remove_prefix(2);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out, 16);
  return ec == std::errc() && ptr == s.data() + s.size();
}

bool parse_double(std::string_view s, double& out) {
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::vector<std::pair<std::string_view, std::string_view>> split_pairs(std::string_view text) {
  std::vector<std::pair<std::string_view, std::string_view>> out;
  for (auto item : split_fields(text, ',')) {
    if (item.empty()) continue;
    auto colon = item.find(':');
    if (colon == std::string_view::npos) throw Error("expected key:value, got '" + std::string(item) + "'");
    out.emplace_back(trim(item.substr(0, colon)), trim(item.substr(colon + 1)));
  }
  return out;
}

ClassLabel require_label(std::string_view name) {
  auto label = label_from_name(name);
  if (!label) throw Error("unknown class label '" + std::string(name) + "'");
  return *label;
}

}  // namespace

std::map<std::string, std::optional<ClassLabel>, std::less<>> parse_flag_map(std::string_view text) {
  std::map<std::string, std::optional<ClassLabel>, std::less<>> map;
  for (auto [token, target] : split_pairs(text)) {
    if (target == "@file")
      map[std::string(token)] = std::nullopt;
    else
      map[std::string(token)] = require_label(target);
  }
  return map;
}

std::string format_flag_map(const std::map<std::string, std::optional<ClassLabel>, std::less<>>& map) {
  std::string out;
  for (const auto& [token, target] : map) {
    if (!out.empty()) out += ',';
    out += token + ':' + (target ? std::string(label_name(*target)) : std::string("@file"));
  }
  return out;
}

std::vector<std::pair<std::string, ClassLabel>> parse_filename_rules(std::string_view text) {
  std::vector<std::pair<std::string, ClassLabel>> rules;
  for (auto [pattern, target] : split_pairs(text)) rules.emplace_back(lower(pattern), require_label(target));
  return rules;
}

std::string format_filename_rules(const std::vector<std::pair<std::string, ClassLabel>>& rules) {
  std::string out;
  for (const auto& [pattern, target] : rules) {
    if (!out.empty()) out += ',';
    out += pattern + ':' + std::string(label_name(target));
  }
  return out;
}

std::optional<ClassLabel> label_for_filename(const LogFormat& format, const std::filesystem::path& path) {
  const std::string name = lower(path.filename().string());
  for (const auto& [pattern, label] : format.filename_rules) {
    if (name.find(lower(pattern)) != std::string::npos) return label;
  }
  return std::nullopt;
}

std::optional<CanFrame> parse_row(std::string_view line, const LogFormat& format, std::string& reason) {
  const auto fields = split_fields(line, format.delimiter);
  const std::size_t n = fields.size();
  auto ts_col = resolve(format.timestamp_col, n);
  auto id_col = resolve(format.id_col, n);
  auto dlc_col = resolve(format.dlc_col, n);
  auto flag_col = resolve(format.flag_col, n);
  if (!ts_col || !id_col || !dlc_col || !flag_col) {
    reason = "too few columns";
    return std::nullopt;
  }

  CanFrame frame;
  if (!parse_double(fields[*ts_col], frame.timestamp) || !std::isfinite(frame.timestamp) ||
      frame.timestamp < 0.0) {
    reason = "invalid timestamp";
    return std::nullopt;
  }
  std::uint64_t id = 0;
  if (!parse_hex(fields[*id_col], id)) {
    reason = "invalid id";
    return std::nullopt;
  }
  if (id > kMaxStandardId) {
    reason = "id exceeds 11-bit range";
    return std::nullopt;
  }
  frame.can_id = static_cast<std::uint32_t>(id);

  unsigned dlc = 0;
  auto dlc_text = fields[*dlc_col];
  auto [ptr, ec] = std::from_chars(dlc_text.data(), dlc_text.data() + dlc_text.size(), dlc);
  if (ec != std::errc() || ptr != dlc_text.data() + dlc_text.size() || dlc > kMaxPayload) {
    reason = "invalid dlc";
    return std::nullopt;
  }
  frame.dlc = static_cast<std::uint8_t>(dlc);

  if (format.data_col < 0 || static_cast<std::size_t>(format.data_col) + dlc > n) {
    reason = "payload shorter than dlc";
    return std::nullopt;
  }
  const auto data_begin = static_cast<std::size_t>(format.data_col);
  if (*flag_col >= data_begin && *flag_col < data_begin + dlc) {
    reason = "payload shorter than dlc";
    return std::nullopt;
  }
  frame.payload.resize(dlc);
  for (unsigned i = 0; i < dlc; ++i) {
    unsigned byte = 0;
    auto text = fields[static_cast<std::size_t>(format.data_col) + i];
    if (text.size() > 2 || !parse_hex(text, byte)) {
      reason = "invalid payload byte";
      return std::nullopt;
    }
    frame.payload[i] = static_cast<std::uint8_t>(byte);
  }

  const auto flag = fields[*flag_col];
  if (auto it = format.flag_map.find(flag); it != format.flag_map.end()) {
    if (it->second) {
      frame.label = *it->second;
    } else if (format.file_label) {
      frame.label = *format.file_label;
    } else {
      reason = "injected flag but no attack label for this file";
      return std::nullopt;
    }
  } else if (auto named = label_from_name(flag)) {
    frame.label = *named;
  } else {
    reason = "unknown flag '" + std::string(flag) + "'";
    return std::nullopt;
  }
  return frame;
}

ParseResult parse_log(std::istream& source, const LogFormat& format) {
  if (!source) throw IngestError("log stream is not readable");
  ParseResult result;
  std::string line;
  std::size_t line_no = 0;
  std::string reason;
  bool first_content = true;
  while (std::getline(source, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (trim(line).empty() || line.front() == '#') continue;
    if (first_content) {
      first_content = false;
      // Header detection: a non-numeric timestamp column on the first line.
      const auto fields = split_fields(line, format.delimiter);
      double ts = 0.0;
      auto col = resolve(format.timestamp_col, fields.size());
      if (!col || !parse_double(fields[*col], ts)) continue;
    }
    ++result.data_rows;
    if (auto frame = parse_row(line, format, reason)) {
      result.frames.push_back(std::move(*frame));
    } else {
      result.rejects.push_back({line_no, reason});
    }
  }
  if (source.bad()) throw IngestError("read error while parsing log");
  if (result.data_rows > 0) {
    const double fraction =
        static_cast<double>(result.rejects.size()) / static_cast<double>(result.data_rows);
    if (fraction > format.max_reject_fraction) {
      const auto& first = result.rejects.front();
      throw IngestError(std::to_string(result.rejects.size()) + " of " +
                        std::to_string(result.data_rows) +
                        " rows rejected; check the log format (first: row " +
                        std::to_string(first.row) + ": " + first.reason + ")");
    }
  }
  return result;
}

ParseResult parse_log_file(const std::filesystem::path& path, LogFormat format) {
  std::ifstream in(path);
  if (!in) throw IngestError("cannot open log " + path.string());
  if (!format.file_label) format.file_label = label_for_filename(format, path);
  try {
    return parse_log(in, format);
  } catch (const IngestError& e) {
    throw IngestError(path.string() + ": " + e.what());
  }
}

std::string format_row(const CanFrame& frame, const LogFormat& format) {
  validate(frame);
  // Resolve columns against the row width this frame produces.
  const std::size_t n = 4 + frame.dlc;
  std::vector<std::string> fields(n);
  auto put = [&](int col, std::string value) {
    auto idx = resolve(col, n);
    if (!idx) throw Error("log format column out of range for writing");
    fields[*idx] = std::move(value);
  };

  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, frame.timestamp);
  if (ec != std::errc()) throw Error("timestamp not representable");
  put(format.timestamp_col, std::string(buf, end));

  std::snprintf(buf, sizeof buf, "%04x", frame.can_id);
  put(format.id_col, buf);
  put(format.dlc_col, std::to_string(frame.dlc));
  for (std::size_t i = 0; i < frame.dlc; ++i) {
    std::snprintf(buf, sizeof buf, "%02x", frame.payload[i]);
    put(format.data_col + static_cast<int>(i), buf);
  }

  // Prefer a flag token that maps to this label unambiguously; otherwise the
  // canonical label name, which parse_row always accepts.
  std::string flag(label_name(frame.label));
  for (const auto& [token, target] : format.flag_map) {
    if (target == frame.label) {
      flag = token;
      break;
    }
    if (!target && format.file_label == frame.label) flag = token;
  }
  put(format.flag_col, flag);

  std::string row;
  for (std::size_t i = 0; i < n; ++i) {
    if (i) row += format.delimiter;
    row += fields[i];
  }
  return row;
}

// ---------------------------------------------------------------------------

Ratio Ratio::parse(std::string_view text) {
  auto colon = text.find(':');
  auto parse_part = [&](std::string_view part) {
    part = trim(part);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || ptr != part.data() + part.size() || v == 0)
      throw Error("invalid ratio '" + std::string(text) + "'");
    return v;
  };
  if (colon == std::string_view::npos) return {parse_part(text), 1};
  return {parse_part(text.substr(0, colon)), parse_part(text.substr(colon + 1))};
}

std::string Ratio::to_string() const { return std::to_string(first) + ":" + std::to_string(second); }

LabelCounts count_labels(std::span<const ClassLabel> labels, std::span<const std::size_t> indices) {
  LabelCounts counts{};
  for (std::size_t i : indices) ++counts[index_of(labels[i])];
  return counts;
}

std::vector<ClassLabel> labels_of(std::span<const CanFrame> frames) {
  std::vector<ClassLabel> labels;
  labels.reserve(frames.size());
  for (const auto& f : frames) labels.push_back(f.label);
  return labels;
}

DatasetSplit split_train_test(std::span<const ClassLabel> labels, Ratio ratio, std::uint64_t seed) {
  if (labels.empty()) throw Error("cannot split an empty dataset");
  if (ratio.first == 0 || ratio.second == 0) throw Error("split ratio must be positive");
  const std::size_t n = labels.size();
  const double share = static_cast<double>(ratio.first) / static_cast<double>(ratio.first + ratio.second);
  const auto n_train = static_cast<std::size_t>(std::llround(share * static_cast<double>(n)));

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  DatasetSplit split;
  split.ratio = ratio;
  split.seed = seed;
  split.train.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
  split.test.assign(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
  std::sort(split.train.begin(), split.train.end());
  std::sort(split.test.begin(), split.test.end());
  split.train_counts = count_labels(labels, split.train);
  split.test_counts = count_labels(labels, split.test);
  return split;
}

DatasetSplit split_train_test(std::span<const CanFrame> frames, Ratio ratio, std::uint64_t seed) {
  const auto labels = labels_of(frames);
  return split_train_test(labels, ratio, seed);
}

std::vector<std::size_t> build_balanced_train_subset(std::span<const ClassLabel> labels,
                                                     const DatasetSplit& split,
                                                     const BalanceOptions& options,
                                                     std::uint64_t seed) {
  const auto& r = options.normal_to_attack;
  if (r.first == 0 || r.second == 0) throw Error("normal:attack ratio must be positive");
  const std::size_t normal_each = static_cast<std::size_t>(
      std::llround(static_cast<double>(options.per_attack) * static_cast<double>(r.first) /
                   static_cast<double>(r.first + r.second)));
  const std::size_t attack_each = options.per_attack - normal_each;

  std::array<std::vector<std::size_t>, kNumClasses> pools;
  for (std::size_t i : split.train) pools[index_of(labels[i])].push_back(i);

  std::array<std::size_t, kNumClasses> need{};
  need[index_of(ClassLabel::Normal)] = normal_each * kAttackLabels.size();
  for (auto a : kAttackLabels) need[index_of(a)] = attack_each;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    if (pools[c].size() < need[c]) {
      throw Error("insufficient " + std::string(label_name(label_from_index(c))) +
                  " frames in training split: need " + std::to_string(need[c]) + ", have " +
                  std::to_string(pools[c].size()) + " (shortfall " +
                  std::to_string(need[c] - pools[c].size()) + ")");
    }
  }

  std::mt19937_64 rng(seed);
  auto draw = [&](std::vector<std::size_t>& pool, std::size_t k) {
    // Partial Fisher-Yates: the first k entries become a uniform sample.
    for (std::size_t i = 0; i < k; ++i) {
      std::uniform_int_distribution<std::size_t> pick(i, pool.size() - 1);
      std::swap(pool[i], pool[pick(rng)]);
    }
    return std::vector<std::size_t>(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(k));
  };

  std::vector<std::size_t> normals = draw(pools[index_of(ClassLabel::Normal)], need[0]);
  std::vector<std::size_t> subset;
  subset.reserve(options.per_attack * kAttackLabels.size());
  for (std::size_t a = 0; a < kAttackLabels.size(); ++a) {
    auto begin = normals.begin() + static_cast<std::ptrdiff_t>(a * normal_each);
    subset.insert(subset.end(), begin, begin + static_cast<std::ptrdiff_t>(normal_each));
    auto attacks = draw(pools[index_of(kAttackLabels[a])], attack_each);
    subset.insert(subset.end(), attacks.begin(), attacks.end());
  }
  std::shuffle(subset.begin(), subset.end(), rng);
  return subset;
}

std::vector<std::size_t> build_balanced_train_subset(std::span<const CanFrame> frames,
                                                     const DatasetSplit& split,
                                                     const BalanceOptions& options,
                                                     std::uint64_t seed) {
  const auto labels = labels_of(frames);
  return build_balanced_train_subset(labels, split, options, seed);
}

nlohmann::json counts_to_json(const LabelCounts& counts) {
  nlohmann::json j = nlohmann::json::object();
  for (auto label : kAllLabels) j[std::string(label_name(label))] = counts[index_of(label)];
  return j;
}

nlohmann::json split_manifest(const DatasetSplit& split, std::span<const std::string> sources) {
  nlohmann::json j;
  j["ratio"] = split.ratio.to_string();
  j["seed"] = split.seed;
  j["sources"] = std::vector<std::string>(sources.begin(), sources.end());
  j["train"] = {{"total", split.train.size()}, {"per_label", counts_to_json(split.train_counts)}};
  j["test"] = {{"total", split.test.size()}, {"per_label", counts_to_json(split.test_counts)}};
  return j;
}

}  // namespace canids
