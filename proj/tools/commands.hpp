#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "canids/can_ingest.hpp"
#include "canids/features.hpp"
#include "canids/gen_classifier.hpp"
#include "json.hpp"

namespace canids::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Bad flags or config values; maps to exit code 2.
class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Log layout flags as typed on the command line.
struct LogFormatOptions {
  int timestamp_col = 0;
  int id_col = 1;
  int dlc_col = 2;
  int data_col = 3;
  int flag_col = -1;
  std::string delimiter = ",";
  std::string flag_map = "R:Normal,T:@file";
  std::string filename_rules = "dos:Dos,fuzzy:Fuzzy,gear:GearSpoof,rpm:RpmSpoof";
  std::string file_label;
  double max_reject_fraction = 0.01;

  LogFormat resolve() const;
};

struct FeatureOptions {
  double t_max = 0.1;
  int padding_byte = 0;

  FeatureConfig resolve() const;
};

/// Which rows of the loaded logs a command works on.
struct SelectionOptions {
  std::string split_ratio;  // empty: every row
  std::uint64_t split_seed = 0;
  std::string part;         // "train" or "test"; empty picks the command default
  bool balanced = false;
  std::size_t per_attack = 90'000;
  std::string normal_ratio = "2:1";

  nlohmann::json to_json(const std::string& default_part) const;
};

struct GenOptions {
  std::string out;
  std::string manifest;
  std::string scenarios;
  double duration = 10.0;
  bool duration_set = false;
  std::uint64_t seed = 0;
  LogFormatOptions format;
};

struct SplitOptions {
  std::vector<std::string> logs;
  std::string out;
  std::string ratio = "3:1";
  std::uint64_t seed = 0;
  bool balanced = false;
  std::size_t per_attack = 90'000;
  std::string normal_ratio = "2:1";
  LogFormatOptions format;
};

struct ModelOptions {
  ModelConfig config;
  std::string mode = "FullElbo";

  ModelConfig resolve() const;
};

struct TrainOptions {
  std::vector<std::string> logs;
  std::string out;
  std::string trace;
  std::uint64_t seed = 0;
  TrainConfig train;
  std::string iteration_unit = "epochs";
  ModelOptions model;
  LogFormatOptions format;
  FeatureOptions features;
  SelectionOptions selection;
};

struct PredictOptions {
  std::vector<std::string> logs;
  std::string model;
  std::string out;
  std::uint64_t seed = 0;
  LogFormatOptions format;
  FeatureOptions features;
  SelectionOptions selection;
};

struct EvalOptions {
  std::vector<std::string> logs;
  std::string model;
  std::string out_json;
  std::string out_text;
  std::uint64_t seed = 0;
  bool quiet = false;
  LogFormatOptions format;
  FeatureOptions features;
  SelectionOptions selection;
};

int run_gen(const GenOptions& opts);
int run_split(const SplitOptions& opts);
int run_train(const TrainOptions& opts);
int run_predict(const PredictOptions& opts);
int run_eval(const EvalOptions& opts);

/// Parses argv and dispatches; returns the process exit code.
int run_cli(int argc, char** argv);

}  // namespace canids::cli
