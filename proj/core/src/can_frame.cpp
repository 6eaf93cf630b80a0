#include "canids/can_frame.hpp"

#include <cmath>

namespace canids {

namespace {
constexpr std::array<std::string_view, kNumClasses> kNames = {"Normal", "Dos", "Fuzzy",
                                                              "GearSpoof", "RpmSpoof"};
}

ClassLabel label_from_index(std::size_t index) {
  if (index >= kNumClasses) throw Error("class index out of range: " + std::to_string(index));
  return static_cast<ClassLabel>(index);
}

std::string_view label_name(ClassLabel label) { return kNames[index_of(label)]; }

std::optional<ClassLabel> label_from_name(std::string_view name) {
  for (std::size_t i = 0; i < kNumClasses; ++i) {
    if (kNames[i] == name) return static_cast<ClassLabel>(i);
  }
  return std::nullopt;
}

void validate(const CanFrame& frame) {
  if (!std::isfinite(frame.timestamp) || frame.timestamp < 0.0)
    throw Error("timestamp must be a non-negative finite number");
  if (frame.can_id > kMaxStandardId) throw Error("id exceeds 11-bit range");
  if (frame.dlc > kMaxPayload) throw Error("dlc exceeds 8");
  if (frame.payload.size() != frame.dlc) throw Error("payload length differs from dlc");
}

}  // namespace canids
