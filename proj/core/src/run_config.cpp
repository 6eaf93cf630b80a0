#include "canids/run_config.hpp"

#include <cstdio>

namespace canids {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string config_hash(const nlohmann::json& config) {
  // nlohmann::json objects keep keys sorted, so dump() is canonical.
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(config.dump())));
  return buf;
}

nlohmann::json to_json(const LogFormat& format) {
  nlohmann::json j;
  j["timestamp_col"] = format.timestamp_col;
  j["id_col"] = format.id_col;
  j["dlc_col"] = format.dlc_col;
  j["data_col"] = format.data_col;
  j["flag_col"] = format.flag_col;
  j["delimiter"] = std::string(1, format.delimiter);
  j["header"] = format.header;
  j["flag_map"] = format_flag_map(format.flag_map);
  j["filename_rules"] = format_filename_rules(format.filename_rules);
  j["file_label"] = format.file_label ? nlohmann::json(std::string(label_name(*format.file_label)))
                                      : nlohmann::json(nullptr);
  j["max_reject_fraction"] = format.max_reject_fraction;
  return j;
}

LogFormat log_format_from_json(const nlohmann::json& j) {
  LogFormat f;
  f.timestamp_col = j.at("timestamp_col").get<int>();
  f.id_col = j.at("id_col").get<int>();
  f.dlc_col = j.at("dlc_col").get<int>();
  f.data_col = j.at("data_col").get<int>();
  f.flag_col = j.at("flag_col").get<int>();
  const auto delim = j.at("delimiter").get<std::string>();
  if (delim.size() != 1) throw Error("log delimiter must be a single character");
  f.delimiter = delim[0];
  f.header = j.at("header").get<std::string>();
  f.flag_map = parse_flag_map(j.at("flag_map").get<std::string>());
  f.filename_rules = parse_filename_rules(j.at("filename_rules").get<std::string>());
  if (!j.at("file_label").is_null()) {
    auto label = label_from_name(j.at("file_label").get<std::string>());
    if (!label) throw Error("unknown file label");
    f.file_label = label;
  }
  f.max_reject_fraction = j.at("max_reject_fraction").get<double>();
  return f;
}

}  // namespace canids
