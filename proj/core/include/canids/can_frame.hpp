#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace canids {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class ClassLabel : std::uint8_t { Normal = 0, Dos = 1, Fuzzy = 2, GearSpoof = 3, RpmSpoof = 4 };

inline constexpr std::size_t kNumClasses = 5;
inline constexpr std::array<ClassLabel, kNumClasses> kAllLabels = {
    ClassLabel::Normal, ClassLabel::Dos, ClassLabel::Fuzzy, ClassLabel::GearSpoof,
    ClassLabel::RpmSpoof};
inline constexpr std::array<ClassLabel, 4> kAttackLabels = {
    ClassLabel::Dos, ClassLabel::Fuzzy, ClassLabel::GearSpoof, ClassLabel::RpmSpoof};

inline constexpr std::size_t index_of(ClassLabel label) {
  return static_cast<std::size_t>(label);
}
ClassLabel label_from_index(std::size_t index);

/// Canonical name ("Normal", "Dos", ...). Used in logs, manifests and reports.
std::string_view label_name(ClassLabel label);
std::optional<ClassLabel> label_from_name(std::string_view name);

inline constexpr std::uint32_t kMaxStandardId = 0x7FF;
inline constexpr std::size_t kMaxPayload = 8;

/// One standard (11-bit) CAN data frame.
struct CanFrame {
  double timestamp = 0.0;  // seconds
  std::uint32_t can_id = 0;
  std::uint8_t dlc = 0;
  std::vector<std::uint8_t> payload;
  ClassLabel label = ClassLabel::Normal;

  friend bool operator==(const CanFrame&, const CanFrame&) = default;
};

/// Throws Error when an invariant of `frame` is violated.
void validate(const CanFrame& frame);

}  // namespace canids
