#pragma once

// Test-only reference computations. Nothing here calls the gradient,
// importance-sampling or metric code it is used to check.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <random>
#include <span>
#include <vector>

#include "canids/dense_net.hpp"
#include "canids/eval_harness.hpp"
#include "canids/gen_classifier.hpp"

namespace canids::oracle {

inline constexpr double kFdStep = 1e-5;

/// Central difference of f along coordinate `value` (restored afterwards).
inline double central_difference(double& value, const std::function<double()>& f, double h = kFdStep) {
  const double saved = value;
  value = saved + h;
  const double up = f();
  value = saved - h;
  const double down = f();
  value = saved;
  return (up - down) / (2.0 * h);
}

/// ||a - n|| / max(||a||, ||n||); 0 when both vanish.
inline double relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double diff = 0.0, na = 0.0, nn = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    diff += (analytic[i] - numeric[i]) * (analytic[i] - numeric[i]);
    na += analytic[i] * analytic[i];
    nn += numeric[i] * numeric[i];
  }
  const double denom = std::sqrt(std::max(na, nn));
  if (denom == 0.0) return 0.0;
  return std::sqrt(diff) / denom;
}

/// Sign pattern of every ReLU pre-activation recorded in `tape`.
inline std::vector<bool> relu_mask(const DenseNet& net, const Tape& tape) {
  std::vector<bool> mask;
  for (std::size_t k = 0; k < net.layers().size(); ++k) {
    if (net.layers()[k].activation != Activation::ReLU) continue;
    for (double z : tape.pre[k]) mask.push_back(z > 0.0);
  }
  return mask;
}

/// ReLU patterns of all three networks along one ELBO draw. Rebuilds the
/// network inputs with plain forward calls so callers can detect when a
/// finite-difference step crosses a kink.
inline std::vector<bool> elbo_relu_mask(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                                        std::span<const double> z_noise, std::span<const double> m_noise) {
  const auto& cfg = model.config();
  std::vector<double> onehot(kNumClasses, 0.0);
  onehot[index_of(y)] = 1.0;
  std::vector<double> in_m(x.begin(), x.end());
  in_m.insert(in_m.end(), onehot.begin(), onehot.end());
  std::vector<bool> mask;
  std::vector<double> m(cfg.m_dim, 0.0);
  if (cfg.m_dim > 0) {
    auto fm = forward(model.enc_m(), in_m);
    auto mm = relu_mask(model.enc_m(), fm.tape);
    mask.insert(mask.end(), mm.begin(), mm.end());
    if (cfg.mode == Mode::FullElbo) {
      for (std::size_t i = 0; i < cfg.m_dim; ++i) {
        const double lv = std::clamp(fm.output[cfg.m_dim + i], kMinLogVar, kMaxLogVar);
        m[i] = fm.output[i] + std::exp(0.5 * lv) * m_noise[i];
      }
    }
  }
  std::vector<double> in_z = in_m;
  in_z.insert(in_z.end(), m.begin(), m.end());
  auto fz = forward(model.enc_z(), in_z);
  auto mz = relu_mask(model.enc_z(), fz.tape);
  mask.insert(mask.end(), mz.begin(), mz.end());
  std::vector<double> in_d = onehot;
  for (std::size_t i = 0; i < cfg.z_dim; ++i) {
    const double lv = std::clamp(fz.output[cfg.z_dim + i], kMinLogVar, kMaxLogVar);
    in_d.push_back(fz.output[i] + std::exp(0.5 * lv) * z_noise[i]);
  }
  in_d.insert(in_d.end(), m.begin(), m.end());
  auto fd = forward(model.dec(), in_d);
  auto md = relu_mask(model.dec(), fd.tape);
  mask.insert(mask.end(), md.begin(), md.end());
  return mask;
}

/// Finite-difference check of one parameter block along a direction that
/// mixes the analytic gradient with noise of equal norm, so the directional
/// derivative stays well away from zero. `mask` reports the ReLU pattern;
/// `kink` is set when a step crosses a ReLU boundary.
struct BlockCheck {
  double rel_error = 0.0;
  bool kink = false;
};

inline BlockCheck check_block(std::span<double> block, std::span<const double> analytic,
                              const std::function<double()>& f, const std::function<std::vector<bool>()>& mask,
                              std::mt19937_64& rng, double h = kFdStep) {
  std::normal_distribution<double> normal(0.0, 1.0);
  double g_norm = 0.0;
  for (double g : analytic) g_norm += g * g;
  g_norm = std::sqrt(g_norm);
  std::vector<double> dir(block.size());
  double r_norm = 0.0;
  for (double& d : dir) {
    d = normal(rng);
    r_norm += d * d;
  }
  r_norm = std::sqrt(r_norm);
  const double scale = g_norm > 0.0 ? g_norm / r_norm : 1.0 / r_norm;
  double a = 0.0;
  for (std::size_t i = 0; i < dir.size(); ++i) {
    dir[i] = analytic[i] + dir[i] * scale;
    a += analytic[i] * dir[i];
  }
  double d_norm = 0.0;
  for (double d : dir) d_norm += d * d;
  d_norm = std::sqrt(d_norm);
  for (double& d : dir) d /= d_norm;
  a /= d_norm;

  const std::vector<double> saved(block.begin(), block.end());
  const auto base = mask();
  BlockCheck out;
  auto shifted = [&](double sign) {
    for (std::size_t i = 0; i < block.size(); ++i) block[i] = saved[i] + sign * h * dir[i];
    const double v = f();
    if (mask() != base) out.kink = true;
    return v;
  };
  const double up = shifted(1.0);
  const double down = shifted(-1.0);
  std::copy(saved.begin(), saved.end(), block.begin());
  const double n = (up - down) / (2.0 * h);
  const double denom = std::max(std::abs(a), std::abs(n));
  out.rel_error = denom == 0.0 ? 0.0 : std::abs(a - n) / denom;
  return out;
}

inline double log_add(double a, double b) {
  if (a == -std::numeric_limits<double>::infinity()) return b;
  if (b == -std::numeric_limits<double>::infinity()) return a;
  const double hi = std::max(a, b);
  return hi + std::log(std::exp(a - hi) + std::exp(b - hi));
}

inline double log_normal_std(double v) { return -0.5 * std::log(2.0 * M_PI) - 0.5 * v * v; }

/// log p(x | y, z, m) under the decoder, written out from the density formula.
inline double decoder_log_lik(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                              std::span<const double> z, std::span<const double> m) {
  std::vector<double> in(kNumClasses, 0.0);
  in[index_of(y)] = 1.0;
  in.insert(in.end(), z.begin(), z.end());
  in.insert(in.end(), m.begin(), m.end());
  const auto out = forward(model.dec(), in).output;
  const double var = std::exp(model.config().dec_log_var);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = x[i] - out[i];
    acc += -0.5 * std::log(2.0 * M_PI * var) - 0.5 * d * d / var;
  }
  return acc;
}

/// log p(x, y) = log p(y) + log ∫∫ p(x|y,z,m) N(z) N(m) dz dm by midpoint
/// rule on [-8, 8]^2 (z_dim = m_dim = 1).
inline double quadrature_log_joint_2d(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                                      int points = 2000) {
  const double lo = -8.0, hi = 8.0;
  const double h = (hi - lo) / points;
  double acc = -std::numeric_limits<double>::infinity();
  double z[1], m[1];
  for (int i = 0; i < points; ++i) {
    z[0] = lo + (i + 0.5) * h;
    for (int j = 0; j < points; ++j) {
      m[0] = lo + (j + 0.5) * h;
      acc = log_add(acc, decoder_log_lik(model, x, y, z, m) + log_normal_std(z[0]) + log_normal_std(m[0]));
    }
  }
  return std::log(model.prior_y()[index_of(y)]) + acc + 2.0 * std::log(h);
}

/// log p(x, y) with m pinned to 0: log p(y) + log ∫ p(x|y,z,0) N(z) dz over
/// [-8, 8] (z_dim = 1).
inline double quadrature_log_joint_m0(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                                      int points = 10000) {
  const double lo = -8.0, hi = 8.0;
  const double h = (hi - lo) / points;
  std::vector<double> m(model.config().m_dim, 0.0);
  double acc = -std::numeric_limits<double>::infinity();
  double z[1];
  for (int i = 0; i < points; ++i) {
    z[0] = lo + (i + 0.5) * h;
    acc = log_add(acc, decoder_log_lik(model, x, y, z, m) + log_normal_std(z[0]));
  }
  return std::log(model.prior_y()[index_of(y)]) + acc + std::log(h);
}

/// One-vs-rest counts tallied straight from the pair list.
struct RawCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0, tn = 0;
};

inline RawCounts recount(std::span<const LabelPair> pairs, ClassLabel attack) {
  RawCounts c;
  for (const auto& [truth, predicted] : pairs) {
    if (truth == attack) {
      (predicted == attack ? c.tp : c.fn)++;
    } else if (truth == ClassLabel::Normal) {
      (predicted == attack ? c.fp : c.tn)++;
    }
  }
  return c;
}

/// A small model with deterministic, down-scaled weights for quadrature checks.
inline GenClassifier tiny_model(Mode mode, std::uint64_t seed, double weight_scale) {
  ModelConfig cfg;
  cfg.x_dim = 4;
  cfg.z_dim = 1;
  cfg.m_dim = 1;
  cfg.encoder_layers = 2;
  cfg.encoder_width = 8;
  cfg.decoder_layers = 2;
  cfg.decoder_width = 8;
  cfg.mode = mode;
  cfg.dec_log_var = 0.0;
  auto model = GenClassifier::initialize(cfg, seed);
  for (auto p : model.parameters())
    for (double& v : p.values) v *= weight_scale;
  return model;
}

}  // namespace canids::oracle
