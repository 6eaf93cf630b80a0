#include "canids/gaussian.hpp"

#include <algorithm>
#include <cmath>

#include "canids/can_frame.hpp"
#include "canids/numerics.hpp"

namespace canids {

namespace {

void require_same(std::size_t a, std::size_t b, const char* what) {
  if (a != b) throw Error(std::string("shape mismatch: ") + what);
}

}  // namespace

GaussianParams GaussianParams::standard(std::size_t dim) {
  return {std::vector<double>(dim, 0.0), std::vector<double>(dim, 0.0)};
}

GaussianParams gaussian_head(std::span<const double> raw) {
  if (raw.size() % 2 != 0) throw Error("gaussian head needs an even-width output");
  const std::size_t d = raw.size() / 2;
  GaussianParams g;
  g.mean.assign(raw.begin(), raw.begin() + static_cast<std::ptrdiff_t>(d));
  g.log_var.resize(d);
  for (std::size_t i = 0; i < d; ++i) g.log_var[i] = std::clamp(raw[d + i], kMinLogVar, kMaxLogVar);
  return g;
}

std::vector<double> gaussian_head_backward(std::span<const double> raw, std::span<const double> grad_mean,
                                           std::span<const double> grad_log_var) {
  const std::size_t d = raw.size() / 2;
  require_same(grad_mean.size(), d, "gaussian head mean gradient");
  require_same(grad_log_var.size(), d, "gaussian head log-variance gradient");
  std::vector<double> out(raw.size());
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = grad_mean[i];
    const double lv = raw[d + i];
    out[d + i] = (lv > kMinLogVar && lv < kMaxLogVar) ? grad_log_var[i] : 0.0;
  }
  return out;
}

std::vector<double> sample_reparam(const GaussianParams& g, std::span<const double> noise) {
  require_same(noise.size(), g.dim(), "reparameterization noise");
  std::vector<double> out(g.dim());
  for (std::size_t i = 0; i < g.dim(); ++i) out[i] = g.mean[i] + std::exp(0.5 * g.log_var[i]) * noise[i];
  return out;
}

GaussianGrad sample_reparam_backward(const GaussianParams& g, std::span<const double> noise,
                                     std::span<const double> grad_sample) {
  require_same(noise.size(), g.dim(), "reparameterization noise");
  require_same(grad_sample.size(), g.dim(), "reparameterization gradient");
  GaussianGrad out{std::vector<double>(grad_sample.begin(), grad_sample.end()), std::vector<double>(g.dim())};
  for (std::size_t i = 0; i < g.dim(); ++i)
    out.log_var[i] = grad_sample[i] * 0.5 * std::exp(0.5 * g.log_var[i]) * noise[i];
  return out;
}

double gaussian_log_pdf(std::span<const double> x, const GaussianParams& g) {
  require_same(x.size(), g.dim(), "gaussian log-density");
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - g.mean[i];
    acc += -0.5 * kLogTwoPi - 0.5 * g.log_var[i] - 0.5 * diff * diff * std::exp(-g.log_var[i]);
  }
  return acc;
}

double isotropic_log_pdf(std::span<const double> x, std::span<const double> mean, double log_var) {
  require_same(x.size(), mean.size(), "isotropic log-density");
  const double inv_var = std::exp(-log_var);
  double sq = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double diff = x[i] - mean[i];
    sq += diff * diff;
  }
  return -0.5 * static_cast<double>(x.size()) * (kLogTwoPi + log_var) - 0.5 * sq * inv_var;
}

// Accumulates term by term like gaussian_log_pdf so a posterior equal to the
// prior cancels exactly.
double standard_normal_log_pdf(std::span<const double> x) {
  double acc = 0.0;
  for (double v : x) acc += -0.5 * kLogTwoPi - 0.5 * v * v;
  return acc;
}

LogPdfGrad gaussian_log_pdf_grad(std::span<const double> x, const GaussianParams& g) {
  require_same(x.size(), g.dim(), "gaussian log-density");
  LogPdfGrad out{std::vector<double>(x.size()), std::vector<double>(x.size()), std::vector<double>(x.size())};
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double inv_var = std::exp(-g.log_var[i]);
    const double diff = x[i] - g.mean[i];
    out.x[i] = -diff * inv_var;
    out.mean[i] = diff * inv_var;
    out.log_var[i] = -0.5 + 0.5 * diff * diff * inv_var;
  }
  return out;
}

double kl_to_standard_normal(const GaussianParams& g) {
  double acc = 0.0;
  for (std::size_t i = 0; i < g.dim(); ++i)
    acc += 0.5 * (g.mean[i] * g.mean[i] + std::exp(g.log_var[i]) - 1.0 - g.log_var[i]);
  return acc;
}

GaussianGrad kl_to_standard_normal_grad(const GaussianParams& g) {
  GaussianGrad out{g.mean, std::vector<double>(g.dim())};
  for (std::size_t i = 0; i < g.dim(); ++i) out.log_var[i] = 0.5 * (std::exp(g.log_var[i]) - 1.0);
  return out;
}

}  // namespace canids
