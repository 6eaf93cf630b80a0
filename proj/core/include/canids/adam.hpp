#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "canids/can_frame.hpp"

namespace canids {

/// Named view of one parameter block (a weight matrix or a bias vector).
struct ParamRef {
  std::string name;
  std::span<double> values;
};

struct GradRef {
  std::string name;
  std::span<const double> values;
};

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::string> names;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;

  /// Zeroed accumulators shaped like `params`.
  static AdamState for_params(std::span<const ParamRef> params, const AdamConfig& config = {});
};

/// One bias-corrected Adam update, descending along `grads`. Throws before
/// touching any parameter if a gradient is non-finite or shapes disagree.
void adam_step(std::span<const ParamRef> params, std::span<const GradRef> grads, AdamState& state);

}  // namespace canids
