#include "canids/features.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

namespace canids {

std::uint64_t FeatureConfig::hash() const {
  // FNV-1a over the raw bit patterns.
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  const char tag[] = "canids.features.v1";
  mix(tag, sizeof tag - 1);
  std::uint64_t bits = 0;
  std::memcpy(&bits, &t_max, sizeof bits);
  mix(&bits, sizeof bits);
  mix(&padding_byte, 1);
  return h;
}

nlohmann::json to_json(const FeatureConfig& cfg) {
  return {{"t_max", cfg.t_max}, {"padding_byte", cfg.padding_byte}};
}

FeatureConfig feature_config_from_json(const nlohmann::json& j) {
  FeatureConfig cfg;
  cfg.t_max = j.at("t_max").get<double>();
  cfg.padding_byte = j.at("padding_byte").get<std::uint8_t>();
  return cfg;
}

std::optional<double> IdHistory::last_seen(std::uint32_t can_id) const {
  auto it = last_seen_.find(can_id);
  if (it == last_seen_.end()) return std::nullopt;
  return it->second;
}

void IdHistory::record(std::uint32_t can_id, double timestamp) { last_seen_[can_id] = timestamp; }

FeatureVector extract(const CanFrame& frame, IdHistory& history, const FeatureConfig& cfg) {
  if (!(cfg.t_max > 0.0)) throw Error("t_max must be positive");
  validate(frame);

  FeatureVector x;
  for (std::size_t b = 0; b < kIdBits; ++b) {
    x.values[b] = ((frame.can_id >> (kIdBits - 1 - b)) & 1u) ? 1.0 : 0.0;
  }

  double dt = cfg.t_max;
  if (auto last = history.last_seen(frame.can_id)) {
    if (frame.timestamp < *last) throw Error("non-monotonic timestamp");
    dt = frame.timestamp - *last;
  }
  x.values[kIdBits] = std::clamp(dt, 0.0, cfg.t_max) / cfg.t_max;

  for (std::size_t i = 0; i < kMaxPayload; ++i) {
    const std::uint8_t byte = i < frame.dlc ? frame.payload[i] : cfg.padding_byte;
    x.values[kIdBits + 1 + i] = static_cast<double>(byte) / 255.0;
  }

  history.record(frame.can_id, frame.timestamp);
  return x;
}

std::vector<LabeledFeature> extract_stream(std::span<const CanFrame> frames, const FeatureConfig& cfg) {
  IdHistory history;
  std::vector<LabeledFeature> out;
  out.reserve(frames.size());
  for (const auto& frame : frames) out.push_back({extract(frame, history, cfg), frame.label});
  return out;
}

std::uint32_t decode_id(const FeatureVector& x) {
  std::uint32_t id = 0;
  for (std::size_t b = 0; b < kIdBits; ++b) id = (id << 1) | (x.values[b] >= 0.5 ? 1u : 0u);
  return id;
}

}  // namespace canids
