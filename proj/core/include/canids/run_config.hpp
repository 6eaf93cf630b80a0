#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include "canids/can_ingest.hpp"
#include "json.hpp"

namespace canids {

std::uint64_t fnv1a64(std::string_view bytes);

/// Hex digest of the canonical (sorted-key, compact) JSON dump.
std::string config_hash(const nlohmann::json& config);

nlohmann::json to_json(const LogFormat& format);
LogFormat log_format_from_json(const nlohmann::json& j);

}  // namespace canids
