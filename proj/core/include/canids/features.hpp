#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <unordered_map>
#include <vector>

#include "canids/can_frame.hpp"
#include "json.hpp"

namespace canids {

inline constexpr std::size_t kIdBits = 11;
inline constexpr std::size_t kFeatureDim = kIdBits + 1 + kMaxPayload;  // 20

/// Model input: 11 ID bits (MSB first), the normalized same-ID interval, and
/// the 8 payload bytes scaled to [0, 1].
struct FeatureVector {
  std::array<double, kFeatureDim> values{};

  std::span<const double> span() const { return values; }
  friend bool operator==(const FeatureVector&, const FeatureVector&) = default;
};

struct FeatureConfig {
  double t_max = 0.1;            // seconds; intervals saturate here
  std::uint8_t padding_byte = 0;  // fills payload slots beyond dlc

  /// Stable 64-bit digest of the encoding parameters, stored in checkpoints.
  std::uint64_t hash() const;
  friend bool operator==(const FeatureConfig&, const FeatureConfig&) = default;
};

nlohmann::json to_json(const FeatureConfig& cfg);
FeatureConfig feature_config_from_json(const nlohmann::json& j);

/// Timestamp of the most recent frame seen for each ID.
class IdHistory {
 public:
  std::optional<double> last_seen(std::uint32_t can_id) const;
  void record(std::uint32_t can_id, double timestamp);
  std::size_t size() const { return last_seen_.size(); }

 private:
  std::unordered_map<std::uint32_t, double> last_seen_;
};

/// Encodes `frame` against `history`, then records the frame in it.
/// Throws Error("non-monotonic timestamp") when the frame predates the last
/// frame with the same ID.
FeatureVector extract(const CanFrame& frame, IdHistory& history, const FeatureConfig& cfg);

struct LabeledFeature {
  FeatureVector x;
  ClassLabel y = ClassLabel::Normal;
};

std::vector<LabeledFeature> extract_stream(std::span<const CanFrame> frames, const FeatureConfig& cfg);

/// Rebuilds the arbitration ID from the ID-bit block of `x`.
std::uint32_t decode_id(const FeatureVector& x);

}  // namespace canids
