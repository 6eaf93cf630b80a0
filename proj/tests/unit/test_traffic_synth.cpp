#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>
#include <random>
#include <sstream>

#include "canids/can_ingest.hpp"
#include "canids/traffic_synth.hpp"
#include "doctest.h"

using namespace canids;

namespace {

std::size_t count_label(const std::vector<CanFrame>& frames, ClassLabel label) {
  std::size_t n = 0;
  for (const auto& f : frames) n += f.label == label;
  return n;
}

std::string to_text(const std::vector<CanFrame>& frames) {
  std::ostringstream out;
  write_log(frames, LogFormat{}, out);
  return out.str();
}

}  // namespace

TEST_SUITE("traffic_synth") {
  TEST_CASE("DoS window of 3 ms injects ten frames on ID 0") {
    std::vector<AttackScenario> s{AttackScenario::make(ClassLabel::Dos, 0.0, 0.003)};
    auto frames = generate(BusProfile::default_profile(), s, 0.01, 1);
    std::size_t dos = 0;
    for (const auto& f : frames) {
      if (f.label != ClassLabel::Dos) continue;
      ++dos;
      CHECK(f.can_id == 0);
      CHECK(f.payload == std::vector<std::uint8_t>(8, 0));
      CHECK(f.timestamp < 0.003);
    }
    CHECK(dos == 10);
    CHECK(s[0].injected_count() == 10);
  }

  TEST_CASE("no scenarios means all Normal") {
    auto frames = generate(BusProfile::default_profile(), {}, 2.0, 2);
    REQUIRE_FALSE(frames.empty());
    CHECK(count_label(frames, ClassLabel::Normal) == frames.size());
  }

  TEST_CASE("background IDs keep their periods") {
    auto profile = BusProfile::default_profile();
    auto frames = generate(profile, {}, 10.0, 3);
    for (const auto& id : profile.ids) {
      std::size_t n = 0;
      for (const auto& f : frames) n += f.can_id == id.can_id;
      const double expect = 10.0 / id.period;
      CHECK(std::abs(double(n) - expect) <= 0.02 * expect + 2.0);
    }
  }

  TEST_CASE("fuzzy IDs are uniform over the 11-bit range") {
    std::vector<AttackScenario> s{AttackScenario::make(ClassLabel::Fuzzy, 0.0, 1.0)};
    auto frames = generate(BusProfile::default_profile(), s, 1.0, 4);
    std::vector<double> bins(16, 0.0);
    std::size_t n = 0;
    for (const auto& f : frames) {
      if (f.label != ClassLabel::Fuzzy) continue;
      ++n;
      CHECK(f.can_id <= kMaxStandardId);
      CHECK(f.payload.size() == 8);
      bins[f.can_id / 128] += 1.0;
    }
    CHECK(n == 2000);
    const double expect = double(n) / 16.0;
    double chi2 = 0.0;
    for (double b : bins) chi2 += (b - expect) * (b - expect) / expect;
    boost::math::chi_squared dist(15.0);
    CHECK(boost::math::cdf(boost::math::complement(dist, chi2)) > 0.001);
  }

  TEST_CASE("spoofing forges the target ID with a shifted payload") {
    std::vector<AttackScenario> s{AttackScenario::make(ClassLabel::GearSpoof, 0.0, 0.5),
                                  AttackScenario::make(ClassLabel::RpmSpoof, 0.5, 1.0)};
    auto frames = generate(BusProfile::default_profile(), s, 1.0, 5);
    for (const auto& f : frames) {
      if (f.label == ClassLabel::GearSpoof) {
        CHECK(f.can_id == kDefaultGearId);
        for (std::size_t i = 0; i < 8; ++i)
          if (!((s[0].noise_mask >> i) & 1u)) CHECK(f.payload[i] == s[0].forged[i]);
      }
      if (f.label == ClassLabel::RpmSpoof) CHECK(f.can_id == kDefaultRpmId);
    }
    CHECK(count_label(frames, ClassLabel::GearSpoof) == 500);
    CHECK(count_label(frames, ClassLabel::RpmSpoof) == 500);
  }

  TEST_CASE("spoofing an ID the bus does not carry is an error") {
    auto s = AttackScenario::make(ClassLabel::GearSpoof, 0.0, 0.1);
    s.target_id = 0x7AB;
    std::vector<AttackScenario> list{s};
    CHECK_THROWS_AS(generate(BusProfile::default_profile(), list, 1.0, 6), Error);
  }

  TEST_CASE("injected counts match the closed form") {
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int trial = 0; trial < 40; ++trial) {
      const auto kind = kAttackLabels[trial % 4];
      const double start = u(rng);
      const double end = start + 0.01 + u(rng);
      std::vector<AttackScenario> s{AttackScenario::make(kind, start, end)};
      auto frames = generate(BusProfile::default_profile(), s, 2.5, trial);
      const double expect = std::floor((end - start) / s[0].cycle);
      const double got = double(count_label(frames, kind));
      CHECK(std::abs(got - expect) <= 1.0);
    }
  }

  TEST_CASE("timestamps never go backwards") {
    auto frames = generate(BusProfile::default_profile(), default_scenarios(3.0), 3.0, 8);
    for (std::size_t i = 1; i < frames.size(); ++i) CHECK(frames[i - 1].timestamp <= frames[i].timestamp);
  }

  TEST_CASE("generation is byte-identical for a fixed seed") {
    auto s = default_scenarios(2.0);
    auto a = to_text(generate(BusProfile::default_profile(), s, 2.0, 9));
    auto b = to_text(generate(BusProfile::default_profile(), s, 2.0, 9));
    auto c = to_text(generate(BusProfile::default_profile(), s, 2.0, 10));
    CHECK(a == b);
    CHECK(a != c);
  }

  TEST_CASE("write then parse is the identity") {
    auto frames = generate(BusProfile::default_profile(), default_scenarios(3.0), 3.0, 11);
    std::istringstream in(to_text(frames));
    auto parsed = parse_log(in, LogFormat{});
    CHECK(parsed.rejects.empty());
    REQUIRE(parsed.frames.size() == frames.size());
    for (std::size_t i = 0; i < frames.size(); ++i) CHECK(parsed.frames[i] == frames[i]);
  }

  TEST_CASE("a ten thousand frame log parses without rejects") {
    auto frames = generate(BusProfile::default_profile(), default_scenarios(8.0), 8.0, 12);
    frames.resize(std::min<std::size_t>(frames.size(), 10'000));
    REQUIRE(frames.size() == 10'000);
    std::istringstream in(to_text(frames));
    auto parsed = parse_log(in, LogFormat{});
    CHECK(parsed.rejects.empty());
    CHECK(parsed.frames.size() == 10'000);
  }

  TEST_CASE("an empty frame list writes only the header") {
    CHECK(to_text({}) == LogFormat{}.header + "\n");
  }

  TEST_CASE("scenario files round-trip") {
    SynthConfig cfg;
    cfg.duration = 12.5;
    cfg.scenarios = default_scenarios(12.5);
    auto back = synth_config_from_json(to_json(cfg));
    CHECK(back.duration == cfg.duration);
    CHECK(back.profile == cfg.profile);
    CHECK(back.scenarios == cfg.scenarios);
  }

  TEST_CASE("default scenarios cover all four attacks inside the duration") {
    auto s = default_scenarios(20.0);
    REQUIRE(s.size() == 4);
    for (std::size_t i = 0; i < 4; ++i) {
      CHECK(s[i].kind == kAttackLabels[i]);
      CHECK(s[i].start >= 0.0);
      CHECK(s[i].end <= 20.0);
      CHECK(s[i].start < s[i].end);
    }
  }

  TEST_CASE("invalid scenarios are rejected") {
    auto s = AttackScenario::make(ClassLabel::Dos, 1.0, 0.5);
    CHECK_THROWS_AS(s.validate(), Error);
    auto n = AttackScenario::make(ClassLabel::Dos, 0.0, 0.5);
    n.kind = ClassLabel::Normal;
    CHECK_THROWS_AS(n.validate(), Error);
  }
}
