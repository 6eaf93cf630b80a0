#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <span>
#include <vector>

#include "canids/can_frame.hpp"
#include "canids/can_ingest.hpp"
#include "json.hpp"

namespace canids {

enum class ByteBehavior : std::uint8_t { Constant, Counter, Noise };

/// One payload byte of a periodic message: a fixed value, a per-message
/// counter starting at `value`, or a fresh uniform byte.
struct PayloadByte {
  ByteBehavior behavior = ByteBehavior::Constant;
  std::uint8_t value = 0;
  friend bool operator==(const PayloadByte&, const PayloadByte&) = default;
};

struct PeriodicId {
  std::uint32_t can_id = 0;
  double period = 0.01;  // seconds
  double jitter = 0.0;   // fraction of the period, uniform +-
  std::array<PayloadByte, kMaxPayload> payload{};
  friend bool operator==(const PeriodicId&, const PeriodicId&) = default;
};

/// Benign periodic traffic on the bus.
struct BusProfile {
  std::vector<PeriodicId> ids;

  /// Ten IDs with periods between 5 and 100 ms and mixed payload behavior.
  static BusProfile default_profile();
  void validate() const;
  friend bool operator==(const BusProfile&, const BusProfile&) = default;
};

inline constexpr double kDosCycle = 0.0003;
inline constexpr double kFuzzyCycle = 0.0005;
inline constexpr double kSpoofCycle = 0.001;
inline constexpr std::uint32_t kDefaultGearId = 0x43F;
inline constexpr std::uint32_t kDefaultRpmId = 0x316;

/// An injection window. Spoofing forges payloads on `target_id`: the bytes
/// of `forged` are sent verbatim except where `noise_mask` has a bit set, in
/// which case that byte is random.
struct AttackScenario {
  ClassLabel kind = ClassLabel::Dos;
  double start = 0.0;
  double end = 0.0;
  double cycle = kDosCycle;
  std::uint32_t target_id = 0;
  std::array<std::uint8_t, kMaxPayload> forged{};
  std::uint8_t noise_mask = 0;

  /// Scenario with the default cycle, target and forged payload for `kind`.
  static AttackScenario make(ClassLabel kind, double start, double end);
  void validate() const;
  /// Number of frames this window injects.
  std::size_t injected_count() const;
  friend bool operator==(const AttackScenario&, const AttackScenario&) = default;
};

/// Background frames plus injections, merged by timestamp. On equal
/// timestamps background frames come first.
std::vector<CanFrame> generate(const BusProfile& profile, std::span<const AttackScenario> scenarios,
                               double duration, std::uint64_t seed);

/// Writes the header line then one row per frame; the inverse of parse_log.
void write_log(std::span<const CanFrame> frames, const LogFormat& format, std::ostream& sink);

nlohmann::json to_json(const BusProfile& profile);
BusProfile bus_profile_from_json(const nlohmann::json& j);
nlohmann::json to_json(const AttackScenario& scenario);
AttackScenario attack_scenario_from_json(const nlohmann::json& j);

/// Scenario file: {"duration": s, "profile": {...} (optional), "scenarios": [...]}.
struct SynthConfig {
  double duration = 10.0;
  BusProfile profile = BusProfile::default_profile();
  std::vector<AttackScenario> scenarios;
};

nlohmann::json to_json(const SynthConfig& cfg);
SynthConfig synth_config_from_json(const nlohmann::json& j);

/// One window per attack, back to back after a benign lead-in, filling
/// `duration`. Used when no scenario file is given.
std::vector<AttackScenario> default_scenarios(double duration);

}  // namespace canids
