#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "canids/adam.hpp"
#include "json.hpp"

namespace canids {

struct NamedArray {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;
  friend bool operator==(const NamedArray&, const NamedArray&) = default;
};

/// Versioned JSON container for model parameters, optimizer state, the RNG
/// seed and free-form metadata. Doubles are written in shortest round-trip
/// form, so save followed by load reproduces every bit.
struct ParamContainer {
  static constexpr int kFormatVersion = 1;

  std::uint64_t seed = 0;
  std::vector<NamedArray> blocks;
  std::optional<AdamState> optimizer;
  nlohmann::json metadata = nlohmann::json::object();

  const NamedArray& block(const std::string& name) const;
};

nlohmann::json to_json(const AdamState& state);
AdamState adam_state_from_json(const nlohmann::json& j);

nlohmann::json to_json(const ParamContainer& c);
ParamContainer container_from_json(const nlohmann::json& j);

void save_container(const std::filesystem::path& path, const ParamContainer& c);
ParamContainer load_container(const std::filesystem::path& path);

bool operator==(const AdamState& a, const AdamState& b);

}  // namespace canids
