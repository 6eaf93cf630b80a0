#include "canids/param_store.hpp"

#include <fstream>

#include "canids/can_frame.hpp"

namespace canids {

const NamedArray& ParamContainer::block(const std::string& name) const {
  for (const auto& b : blocks)
    if (b.name == name) return b;
  throw Error("checkpoint has no parameter block '" + name + "'");
}

nlohmann::json to_json(const AdamState& state) {
  nlohmann::json j;
  j["lr"] = state.config.lr;
  j["beta1"] = state.config.beta1;
  j["beta2"] = state.config.beta2;
  j["epsilon"] = state.config.epsilon;
  j["step"] = state.step;
  j["names"] = state.names;
  j["first_moment"] = state.first_moment;
  j["second_moment"] = state.second_moment;
  return j;
}

AdamState adam_state_from_json(const nlohmann::json& j) {
  AdamState s;
  s.config.lr = j.at("lr").get<double>();
  s.config.beta1 = j.at("beta1").get<double>();
  s.config.beta2 = j.at("beta2").get<double>();
  s.config.epsilon = j.at("epsilon").get<double>();
  s.step = j.at("step").get<std::uint64_t>();
  s.names = j.at("names").get<std::vector<std::string>>();
  s.first_moment = j.at("first_moment").get<std::vector<std::vector<double>>>();
  s.second_moment = j.at("second_moment").get<std::vector<std::vector<double>>>();
  if (s.first_moment.size() != s.names.size() || s.second_moment.size() != s.names.size())
    throw Error("optimizer state block counts disagree");
  return s;
}

bool operator==(const AdamState& a, const AdamState& b) {
  return a.config.lr == b.config.lr && a.config.beta1 == b.config.beta1 && a.config.beta2 == b.config.beta2 &&
         a.config.epsilon == b.config.epsilon && a.step == b.step && a.names == b.names &&
         a.first_moment == b.first_moment && a.second_moment == b.second_moment;
}

nlohmann::json to_json(const ParamContainer& c) {
  nlohmann::json j;
  j["format"] = "canids-params";
  j["version"] = ParamContainer::kFormatVersion;
  j["seed"] = c.seed;
  auto& blocks = j["blocks"] = nlohmann::json::array();
  for (const auto& b : c.blocks) blocks.push_back({{"name", b.name}, {"shape", b.shape}, {"values", b.values}});
  j["optimizer"] = c.optimizer ? to_json(*c.optimizer) : nlohmann::json(nullptr);
  j["metadata"] = c.metadata;
  return j;
}

ParamContainer container_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "canids-params") throw Error("not a canids parameter container");
  const int version = j.at("version").get<int>();
  if (version != ParamContainer::kFormatVersion)
    throw Error("unsupported parameter container version " + std::to_string(version));
  ParamContainer c;
  c.seed = j.at("seed").get<std::uint64_t>();
  for (const auto& b : j.at("blocks")) {
    NamedArray a{b.at("name").get<std::string>(), b.at("shape").get<std::vector<std::size_t>>(),
                 b.at("values").get<std::vector<double>>()};
    std::size_t expected = 1;
    for (auto s : a.shape) expected *= s;
    if (expected != a.values.size()) throw Error("parameter block '" + a.name + "' size disagrees with shape");
    c.blocks.push_back(std::move(a));
  }
  if (!j.at("optimizer").is_null()) c.optimizer = adam_state_from_json(j.at("optimizer"));
  c.metadata = j.at("metadata");
  return c;
}

void save_container(const std::filesystem::path& path, const ParamContainer& c) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write checkpoint " + path.string());
  out << to_json(c).dump(1) << '\n';
  if (!out) throw Error("failed writing checkpoint " + path.string());
}

ParamContainer load_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open checkpoint " + path.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error("malformed checkpoint " + path.string() + ": " + e.what());
  }
  return container_from_json(j);
}

}  // namespace canids
