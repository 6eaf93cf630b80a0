#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace canids {

inline constexpr double kMinLogVar = -10.0;
inline constexpr double kMaxLogVar = 10.0;

/// Diagonal Gaussian over one latent block.
struct GaussianParams {
  std::vector<double> mean;
  std::vector<double> log_var;

  std::size_t dim() const { return mean.size(); }
  static GaussianParams standard(std::size_t dim);
  friend bool operator==(const GaussianParams&, const GaussianParams&) = default;
};

/// Splits a 2d-wide network output into (mean, log_var), clamping log_var
/// to [kMinLogVar, kMaxLogVar].
GaussianParams gaussian_head(std::span<const double> raw);

/// Gradient w.r.t. the raw head output; zero where the clamp was active.
std::vector<double> gaussian_head_backward(std::span<const double> raw, std::span<const double> grad_mean,
                                           std::span<const double> grad_log_var);

/// mean + exp(log_var / 2) * noise
std::vector<double> sample_reparam(const GaussianParams& g, std::span<const double> noise);

struct GaussianGrad {
  std::vector<double> mean;
  std::vector<double> log_var;
};

/// Pulls d(loss)/d(sample) back to (mean, log_var) for a fixed noise draw.
GaussianGrad sample_reparam_backward(const GaussianParams& g, std::span<const double> noise,
                                     std::span<const double> grad_sample);

/// sum_i -0.5 ln(2 pi) - 0.5 log_var_i - 0.5 (x_i - mean_i)^2 / exp(log_var_i)
double gaussian_log_pdf(std::span<const double> x, const GaussianParams& g);

/// Same density with a shared scalar log-variance.
double isotropic_log_pdf(std::span<const double> x, std::span<const double> mean, double log_var);

double standard_normal_log_pdf(std::span<const double> x);

struct LogPdfGrad {
  std::vector<double> x;
  std::vector<double> mean;
  std::vector<double> log_var;
};

LogPdfGrad gaussian_log_pdf_grad(std::span<const double> x, const GaussianParams& g);

/// KL( N(mean, exp(log_var)) || N(0, I) ) in closed form.
double kl_to_standard_normal(const GaussianParams& g);
GaussianGrad kl_to_standard_normal_grad(const GaussianParams& g);

}  // namespace canids
