#include "canids/traffic_synth.hpp"

#include <algorithm>
#include <cmath>
#include <ostream>
#include <random>
#include <string>

namespace canids {

namespace {

struct Event {
  double timestamp;
  bool injected;
  std::uint64_t sequence;
  CanFrame frame;
};

PayloadByte constant(std::uint8_t v) { return {ByteBehavior::Constant, v}; }
PayloadByte counter(std::uint8_t v = 0) { return {ByteBehavior::Counter, v}; }
PayloadByte noise() { return {ByteBehavior::Noise, 0}; }

std::string_view behavior_name(ByteBehavior b) {
  switch (b) {
    case ByteBehavior::Constant:
      return "constant";
    case ByteBehavior::Counter:
      return "counter";
    case ByteBehavior::Noise:
      return "noise";
  }
  return "constant";
}

ByteBehavior behavior_from_name(const std::string& name) {
  if (name == "constant") return ByteBehavior::Constant;
  if (name == "counter") return ByteBehavior::Counter;
  if (name == "noise") return ByteBehavior::Noise;
  throw Error("unknown payload byte behavior '" + name + "'");
}

}  // namespace

BusProfile BusProfile::default_profile() {
  BusProfile p;
  auto add = [&](std::uint32_t id, double period, std::array<PayloadByte, kMaxPayload> payload) {
    p.ids.push_back({id, period, 0.05, payload});
  };
  // IDs and cadences loosely modelled on a passenger-car powertrain bus.
  add(0x0A0, 0.010, {constant(0x00), counter(), constant(0x1C), noise(), constant(0x00), constant(0x00),
                     constant(0x7F), constant(0x00)});
  add(0x130, 0.010, {constant(0x40), constant(0x80), counter(0x10), constant(0x00), noise(), constant(0x0F),
                     constant(0x00), constant(0x00)});
  add(0x18F, 0.010, {constant(0xFE), constant(0x5B), constant(0x00), constant(0x00), constant(0x00),
                     constant(0x3C), counter(), constant(0x00)});
  add(0x260, 0.010, {constant(0x19), constant(0x21), constant(0x22), constant(0x30), constant(0x08),
                     constant(0x8E), noise(), counter()});
  add(0x2A0, 0.020, {constant(0x64), constant(0x00), constant(0x9A), constant(0x1D), constant(0x97),
                     constant(0x02), constant(0xBD), counter()});
  add(0x316, 0.010, {constant(0x05), constant(0x21), constant(0x68), constant(0x09), constant(0x21),
                     constant(0x21), constant(0x00), counter(0x6F)});
  add(0x329, 0.010, {constant(0x0F), constant(0xC3), noise(), constant(0x0C), constant(0x00), constant(0x00),
                     constant(0x00), counter()});
  add(0x43F, 0.010, {constant(0x00), constant(0x40), constant(0x60), constant(0xFF), constant(0x5A),
                     constant(0x6C), constant(0x08), counter()});
  add(0x545, 0.050, {constant(0xD8), constant(0x00), counter(0x8A), constant(0x00), constant(0x00),
                     constant(0x00), noise(), constant(0x00)});
  add(0x5A0, 0.100, {constant(0x00), constant(0x00), constant(0x00), constant(0xC0), noise(), constant(0x00),
                     constant(0x00), counter()});
  return p;
}

void BusProfile::validate() const {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto& id = ids[i];
    if (id.can_id > kMaxStandardId) throw Error("profile id exceeds 11-bit range");
    if (!(id.period > 0.0)) throw Error("profile period must be positive");
    if (!(id.jitter >= 0.0 && id.jitter <= 0.2)) throw Error("profile jitter must be within [0, 0.2]");
    for (std::size_t j = 0; j < i; ++j)
      if (ids[j].can_id == id.can_id) throw Error("profile ids must be distinct");
  }
}

AttackScenario AttackScenario::make(ClassLabel kind, double start, double end) {
  AttackScenario s;
  s.kind = kind;
  s.start = start;
  s.end = end;
  switch (kind) {
    case ClassLabel::Dos:
      s.cycle = kDosCycle;
      s.target_id = 0x000;
      break;
    case ClassLabel::Fuzzy:
      s.cycle = kFuzzyCycle;
      break;
    case ClassLabel::GearSpoof:
      s.cycle = kSpoofCycle;
      s.target_id = kDefaultGearId;
      s.forged = {0x01, 0x45, 0x60, 0xFF, 0x6B, 0x00, 0x00, 0x00};
      s.noise_mask = 0b1000'0000;  // last byte random
      break;
    case ClassLabel::RpmSpoof:
      s.cycle = kSpoofCycle;
      s.target_id = kDefaultRpmId;
      s.forged = {0x05, 0x20, 0xEA, 0x0A, 0x20, 0x1A, 0x00, 0x00};
      s.noise_mask = 0b1100'0000;
      break;
    case ClassLabel::Normal:
      throw Error("an attack scenario cannot have the Normal label");
  }
  return s;
}

void AttackScenario::validate() const {
  if (kind == ClassLabel::Normal) throw Error("an attack scenario cannot have the Normal label");
  if (!(start >= 0.0) || !(start < end)) throw Error("attack window needs 0 <= start < end");
  if (!(cycle > 0.0)) throw Error("attack cycle must be positive");
  if (target_id > kMaxStandardId) throw Error("attack target id exceeds 11-bit range");
}

std::size_t AttackScenario::injected_count() const {
  // Slots start + k*cycle strictly inside [start, end); the small slack keeps
  // exact multiples such as 0.003 / 0.0003 from rounding up to an extra slot.
  const double slots = (end - start) / cycle;
  return static_cast<std::size_t>(std::ceil(slots - 1e-9));
}

std::vector<CanFrame> generate(const BusProfile& profile, std::span<const AttackScenario> scenarios,
                               double duration, std::uint64_t seed) {
  if (!(duration > 0.0)) throw Error("duration must be positive");
  profile.validate();
  for (const auto& s : scenarios) {
    s.validate();
    if (s.end > duration + 1e-12) throw Error("attack window extends past the capture duration");
    if (s.kind == ClassLabel::GearSpoof || s.kind == ClassLabel::RpmSpoof) {
      const bool present = std::any_of(profile.ids.begin(), profile.ids.end(),
                                       [&](const PeriodicId& id) { return id.can_id == s.target_id; });
      if (!present) throw Error("spoofing target id is not part of the bus profile");
    }
  }

  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> byte_dist(0, 255);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto random_byte = [&] { return static_cast<std::uint8_t>(byte_dist(rng)); };

  std::vector<Event> events;
  std::uint64_t sequence = 0;

  for (const auto& id : profile.ids) {
    std::array<std::uint8_t, kMaxPayload> counters{};
    for (std::size_t i = 0; i < kMaxPayload; ++i) counters[i] = id.payload[i].value;
    double t = unit(rng) * id.period;
    while (t < duration) {
      CanFrame f{t, id.can_id, static_cast<std::uint8_t>(kMaxPayload), std::vector<std::uint8_t>(kMaxPayload),
                 ClassLabel::Normal};
      for (std::size_t i = 0; i < kMaxPayload; ++i) {
        switch (id.payload[i].behavior) {
          case ByteBehavior::Constant:
            f.payload[i] = id.payload[i].value;
            break;
          case ByteBehavior::Counter:
            f.payload[i] = counters[i]++;
            break;
          case ByteBehavior::Noise:
            f.payload[i] = random_byte();
            break;
        }
      }
      events.push_back({t, false, sequence++, std::move(f)});
      t += id.period * (1.0 + id.jitter * (2.0 * unit(rng) - 1.0));
    }
  }

  std::uniform_int_distribution<std::uint32_t> id_dist(0, kMaxStandardId);
  for (const auto& s : scenarios) {
    const std::size_t n = s.injected_count();
    for (std::size_t k = 0; k < n; ++k) {
      const double t = s.start + static_cast<double>(k) * s.cycle;
      CanFrame f{t, 0, static_cast<std::uint8_t>(kMaxPayload), std::vector<std::uint8_t>(kMaxPayload, 0), s.kind};
      switch (s.kind) {
        case ClassLabel::Dos:
          f.can_id = s.target_id;
          break;
        case ClassLabel::Fuzzy:
          f.can_id = id_dist(rng);
          for (auto& b : f.payload) b = random_byte();
          break;
        case ClassLabel::GearSpoof:
        case ClassLabel::RpmSpoof:
          f.can_id = s.target_id;
          for (std::size_t i = 0; i < kMaxPayload; ++i)
            f.payload[i] = (s.noise_mask >> i) & 1u ? random_byte() : s.forged[i];
          break;
        case ClassLabel::Normal:
          break;
      }
      events.push_back({t, true, sequence++, std::move(f)});
    }
  }

  std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
    if (a.timestamp != b.timestamp) return a.timestamp < b.timestamp;
    if (a.injected != b.injected) return !a.injected;
    return a.sequence < b.sequence;
  });

  std::vector<CanFrame> frames;
  frames.reserve(events.size());
  for (auto& e : events) frames.push_back(std::move(e.frame));
  return frames;
}

void write_log(std::span<const CanFrame> frames, const LogFormat& format, std::ostream& sink) {
  sink << format.header << '\n';
  for (const auto& f : frames) sink << format_row(f, format) << '\n';
  sink.flush();
  if (!sink) throw Error("failed writing CAN log");
}

nlohmann::json to_json(const BusProfile& profile) {
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& id : profile.ids) {
    nlohmann::json payload = nlohmann::json::array();
    for (const auto& b : id.payload) payload.push_back({{"behavior", behavior_name(b.behavior)}, {"value", b.value}});
    ids.push_back({{"can_id", id.can_id}, {"period", id.period}, {"jitter", id.jitter}, {"payload", payload}});
  }
  return {{"ids", ids}};
}

BusProfile bus_profile_from_json(const nlohmann::json& j) {
  BusProfile p;
  for (const auto& item : j.at("ids")) {
    PeriodicId id;
    id.can_id = item.at("can_id").get<std::uint32_t>();
    id.period = item.at("period").get<double>();
    id.jitter = item.value("jitter", 0.0);
    const auto& payload = item.at("payload");
    if (payload.size() != kMaxPayload) throw Error("profile payload templates need 8 bytes");
    for (std::size_t i = 0; i < kMaxPayload; ++i) {
      id.payload[i].behavior = behavior_from_name(payload[i].at("behavior").get<std::string>());
      id.payload[i].value = payload[i].value("value", std::uint8_t{0});
    }
    p.ids.push_back(id);
  }
  p.validate();
  return p;
}

nlohmann::json to_json(const AttackScenario& s) {
  return {{"kind", std::string(label_name(s.kind))},
          {"start", s.start},
          {"end", s.end},
          {"cycle", s.cycle},
          {"target_id", s.target_id},
          {"forged", s.forged},
          {"noise_mask", s.noise_mask}};
}

AttackScenario attack_scenario_from_json(const nlohmann::json& j) {
  auto kind = label_from_name(j.at("kind").get<std::string>());
  if (!kind) throw Error("unknown attack kind");
  AttackScenario s = AttackScenario::make(*kind, j.at("start").get<double>(), j.at("end").get<double>());
  if (j.contains("cycle")) s.cycle = j.at("cycle").get<double>();
  if (j.contains("target_id")) s.target_id = j.at("target_id").get<std::uint32_t>();
  if (j.contains("forged")) s.forged = j.at("forged").get<std::array<std::uint8_t, kMaxPayload>>();
  if (j.contains("noise_mask")) s.noise_mask = j.at("noise_mask").get<std::uint8_t>();
  s.validate();
  return s;
}

nlohmann::json to_json(const SynthConfig& cfg) {
  nlohmann::json scenarios = nlohmann::json::array();
  for (const auto& s : cfg.scenarios) scenarios.push_back(to_json(s));
  return {{"duration", cfg.duration}, {"profile", to_json(cfg.profile)}, {"scenarios", scenarios}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig cfg;
  cfg.duration = j.value("duration", cfg.duration);
  if (j.contains("profile")) cfg.profile = bus_profile_from_json(j.at("profile"));
  if (j.contains("scenarios"))
    for (const auto& s : j.at("scenarios")) cfg.scenarios.push_back(attack_scenario_from_json(s));
  return cfg;
}

std::vector<AttackScenario> default_scenarios(double duration) {
  // 10% benign lead-in, then equal windows for DoS, fuzzy, gear and RPM with
  // benign gaps between them.
  const double lead = 0.1 * duration;
  const double slot = (duration - lead) / 4.0;
  const double window = 0.6 * slot;
  std::vector<AttackScenario> out;
  for (std::size_t i = 0; i < kAttackLabels.size(); ++i) {
    const double start = lead + static_cast<double>(i) * slot;
    out.push_back(AttackScenario::make(kAttackLabels[i], start, start + window));
  }
  return out;
}

}  // namespace canids
