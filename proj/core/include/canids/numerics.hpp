#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <span>
#include <vector>

namespace canids {

inline constexpr double kLogTwoPi = 1.8378770664093454835606594728112;  // ln(2*pi)

/// log(sum(exp(v))) without overflow. Returns -inf for an empty or all -inf input.
inline double log_sum_exp(std::span<const double> v) {
  if (v.empty()) return -std::numeric_limits<double>::infinity();
  const double hi = *std::max_element(v.begin(), v.end());
  if (hi == -std::numeric_limits<double>::infinity()) return hi;
  double sum = 0.0;
  for (double x : v) sum += std::exp(x - hi);
  return hi + std::log(sum);
}

/// Softmax of log-scores, shifted by the maximum for stability.
inline std::vector<double> softmax(std::span<const double> scores) {
  std::vector<double> out(scores.size());
  if (scores.empty()) return out;
  const double lse = log_sum_exp(scores);
  for (std::size_t i = 0; i < scores.size(); ++i) out[i] = std::exp(scores[i] - lse);
  return out;
}

}  // namespace canids
