#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "canids/can_frame.hpp"
#include "json.hpp"

namespace canids {

/// Column layout and flag semantics of a CSV CAN log.
///
/// Defaults match the Car-hacking dataset captures:
///   `1478198376.389427,0316,8,05,21,68,09,21,21,00,6f,R`
/// i.e. timestamp, hex ID, DLC, DLC hex payload octets, and a trailing flag.
/// The flag sits at the last column because short frames carry fewer data
/// columns. A negative column index counts from the end of the row.
struct LogFormat {
  int timestamp_col = 0;
  int id_col = 1;
  int dlc_col = 2;
  int data_col = 3;
  int flag_col = -1;
  char delimiter = ',';

  /// Written as the first line by the log writer. When parsing, a first line
  /// whose timestamp column is not numeric is treated as a header and skipped.
  /// Lines starting with '#' are comments.
  std::string header = "Timestamp,CAN ID,DLC,DATA,Flag";

  /// Flag token -> label. std::nullopt means "the attack label of the file"
  /// (see `file_label`). Canonical label names are always accepted as flags.
  std::map<std::string, std::optional<ClassLabel>, std::less<>> flag_map = {
      {"R", ClassLabel::Normal}, {"T", std::nullopt}};

  /// Case-insensitive filename substrings that select the file's attack label.
  std::vector<std::pair<std::string, ClassLabel>> filename_rules = {
      {"dos", ClassLabel::Dos},
      {"fuzzy", ClassLabel::Fuzzy},
      {"gear", ClassLabel::GearSpoof},
      {"rpm", ClassLabel::RpmSpoof}};

  /// Label for injected-flag rows of the log being parsed.
  std::optional<ClassLabel> file_label;

  /// More than this fraction of rejected rows aborts parsing.
  double max_reject_fraction = 0.01;
};

/// "R:Normal,T:@file" style flag mapping; `@file` selects the per-file label.
std::map<std::string, std::optional<ClassLabel>, std::less<>> parse_flag_map(std::string_view text);
std::string format_flag_map(const std::map<std::string, std::optional<ClassLabel>, std::less<>>& map);
/// "dos:Dos,fuzzy:Fuzzy" style filename rules.
std::vector<std::pair<std::string, ClassLabel>> parse_filename_rules(std::string_view text);
std::string format_filename_rules(const std::vector<std::pair<std::string, ClassLabel>>& rules);

/// First matching filename rule, if any.
std::optional<ClassLabel> label_for_filename(const LogFormat& format, const std::filesystem::path& path);

struct RejectedRow {
  std::size_t row = 0;  // 1-based line number
  std::string reason;
};

struct ParseResult {
  std::vector<CanFrame> frames;
  std::vector<RejectedRow> rejects;
  std::size_t data_rows = 0;
};

/// Raised when a log cannot be read or when too many rows are rejected.
class IngestError : public Error {
 public:
  using Error::Error;
};

/// Parses one row. On failure returns the reject reason in `reason`.
std::optional<CanFrame> parse_row(std::string_view line, const LogFormat& format, std::string& reason);

/// Parses a whole log, one frame per valid row in file order. Throws
/// IngestError if the rejected fraction exceeds `format.max_reject_fraction`.
ParseResult parse_log(std::istream& source, const LogFormat& format);

/// Opens `path`, derives `file_label` from the filename rules when the format
/// does not already fix it, and parses.
ParseResult parse_log_file(const std::filesystem::path& path, LogFormat format);

/// Serializes one frame as a row of `format`; the inverse of parse_row.
std::string format_row(const CanFrame& frame, const LogFormat& format);

// ---------------------------------------------------------------------------
// Dataset construction

/// A positive ratio a:b, e.g. 3:1 for train:test.
struct Ratio {
  std::uint64_t first = 1;
  std::uint64_t second = 1;

  static Ratio parse(std::string_view text);  // "3:1" or "3"
  std::string to_string() const;
  friend bool operator==(const Ratio&, const Ratio&) = default;
};

using LabelCounts = std::array<std::size_t, kNumClasses>;

LabelCounts count_labels(std::span<const ClassLabel> labels, std::span<const std::size_t> indices);

/// Train/test partition expressed as ascending indices into the source rows.
struct DatasetSplit {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
  LabelCounts train_counts{};
  LabelCounts test_counts{};
  Ratio ratio;
  std::uint64_t seed = 0;
};

/// Uniform random partition with |train|:|test| as close to `ratio` as whole
/// frames allow. Index lists come back sorted so log order is preserved.
DatasetSplit split_train_test(std::span<const ClassLabel> labels, Ratio ratio, std::uint64_t seed);
DatasetSplit split_train_test(std::span<const CanFrame> frames, Ratio ratio, std::uint64_t seed);

struct BalanceOptions {
  std::size_t per_attack = 90'000;
  Ratio normal_to_attack{2, 1};
};

/// For every attack label draws `per_attack` training frames, of which the
/// normal share follows `normal_to_attack`; normals are distinct across the
/// four subsets. Returns source indices in seeded shuffled order.
std::vector<std::size_t> build_balanced_train_subset(std::span<const ClassLabel> labels,
                                                     const DatasetSplit& split,
                                                     const BalanceOptions& options,
                                                     std::uint64_t seed);
std::vector<std::size_t> build_balanced_train_subset(std::span<const CanFrame> frames,
                                                     const DatasetSplit& split,
                                                     const BalanceOptions& options,
                                                     std::uint64_t seed);

std::vector<ClassLabel> labels_of(std::span<const CanFrame> frames);

template <typename T>
std::vector<T> gather(std::span<const T> source, std::span<const std::size_t> indices) {
  std::vector<T> out;
  out.reserve(indices.size());
  for (std::size_t i : indices) out.push_back(source[i]);
  return out;
}

nlohmann::json counts_to_json(const LabelCounts& counts);

/// Manifest: counts per label per split, ratio, seed and the source files.
nlohmann::json split_manifest(const DatasetSplit& split, std::span<const std::string> sources);

}  // namespace canids
