#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "canids/adam.hpp"
#include "canids/can_frame.hpp"
#include "canids/dense_net.hpp"
#include "canids/features.hpp"
#include "canids/gaussian.hpp"
#include "canids/param_store.hpp"

namespace canids {

/// How the perturbation latent m enters training and prediction.
///
/// PaperLiteral: m is pinned to 0 while training, the m-encoder is fitted only
/// through an auxiliary KL(q(m|x,y) || p(m)) term, and importance weights at
/// prediction omit p(m)/q(m|x,y).
/// FullElbo: m is a proper latent with its own KL term and full weights.
enum class Mode : std::uint8_t { PaperLiteral, FullElbo };

std::string_view mode_name(Mode mode);
std::optional<Mode> mode_from_name(std::string_view name);

struct ModelConfig {
  std::size_t x_dim = kFeatureDim;
  std::size_t z_dim = 8;
  std::size_t m_dim = 4;
  std::size_t encoder_layers = 10;
  std::size_t encoder_width = 26;
  std::size_t decoder_layers = 10;
  std::size_t decoder_width = 36;
  Mode mode = Mode::FullElbo;
  std::size_t samples = 16;  // importance samples per class at prediction
  double dec_log_var = -4.605170185988091;  // ln(0.01); fixed, shared by all dims
  double aux_kl_weight = 1.0;  // PaperLiteral m-encoder regularizer

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

nlohmann::json to_json(const ModelConfig& cfg);
ModelConfig model_config_from_json(const nlohmann::json& j);

using ClassVector = std::array<double, kNumClasses>;

/// Latent-variable generative classifier:
///   q(m | x, y)        enc_m, input x ++ onehot(y)
///   q(z | x, y, m)     enc_z, input x ++ onehot(y) ++ m
///   p(x | y, z, m)     dec,   input onehot(y) ++ z ++ m, fixed shared variance
/// with standard-normal priors on z and m and a categorical prior on y.
class GenClassifier {
 public:
  GenClassifier() = default;
  GenClassifier(ModelConfig config, DenseNet enc_m, DenseNet enc_z, DenseNet dec, ClassVector prior_y);

  /// Glorot-initialized networks, uniform class prior.
  static GenClassifier initialize(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const DenseNet& enc_m() const { return enc_m_; }
  const DenseNet& enc_z() const { return enc_z_; }
  const DenseNet& dec() const { return dec_; }
  DenseNet& enc_m() { return enc_m_; }
  DenseNet& enc_z() { return enc_z_; }
  DenseNet& dec() { return dec_; }

  const ClassVector& prior_y() const { return prior_y_; }
  /// Requires a strictly positive vector summing to 1.
  void set_prior_y(const ClassVector& prior);

  /// Named parameter views for the optimizer; invalidates tapes.
  std::vector<ParamRef> parameters();

  ParamContainer to_container(std::uint64_t seed, const std::optional<AdamState>& optimizer,
                              nlohmann::json metadata = nlohmann::json::object()) const;
  static GenClassifier from_container(const ParamContainer& c);

  friend bool operator==(const GenClassifier& a, const GenClassifier& b);

 private:
  ModelConfig config_;
  DenseNet enc_m_;
  DenseNet enc_z_;
  DenseNet dec_;
  ClassVector prior_y_{};
};

/// Gradient buffers shaped like a GenClassifier.
struct ModelGrad {
  DenseGrad enc_m;
  DenseGrad enc_z;
  DenseGrad dec;

  ModelGrad() = default;
  explicit ModelGrad(const GenClassifier& model);
  void zero();
  void scale(double factor);
  std::vector<GradRef> refs() const;
};

/// Single-sample terms of the evidence lower bound.
struct ElboTerms {
  double recon_log_lik = 0.0;
  double log_prior_z = 0.0;
  double log_prior_y = 0.0;
  double log_q_z = 0.0;
  double kl_m = 0.0;  // 0 in PaperLiteral mode
  double elbo = 0.0;
};

/// ElboTerms plus the PaperLiteral m-encoder regularizer; `loss` is what
/// training minimizes (-elbo + aux_kl).
struct SampleLoss {
  ElboTerms terms;
  double aux_kl = 0.0;
  double loss = 0.0;
};

/// One reparameterized ELBO draw. `z_noise` has z_dim entries; `m_noise` has
/// m_dim entries and is ignored in PaperLiteral mode (m := 0).
ElboTerms elbo_sample(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                      std::span<const double> z_noise, std::span<const double> m_noise);

/// Same draw; also accumulates d(loss)/d(params) into `grad`.
SampleLoss elbo_sample_grad(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                            std::span<const double> z_noise, std::span<const double> m_noise, ModelGrad& grad);

/// Importance-weighted estimate of log p(x, y) from `config().samples` draws
/// of m ~ q(m|x,y) and z ~ q(z|x,y,m).
double class_score(const GenClassifier& model, std::span<const double> x, ClassLabel y, std::mt19937_64& rng);
/// As above with an explicit sample count.
double class_score(const GenClassifier& model, std::span<const double> x, ClassLabel y, std::size_t samples,
                   std::mt19937_64& rng);

ClassVector class_scores(const GenClassifier& model, std::span<const double> x, std::mt19937_64& rng);

/// Softmax of log-scores. Throws Error("degenerate likelihood") when every
/// score is -inf or any is NaN.
ClassVector probabilities_from_scores(const ClassVector& scores);

/// Argmax; ties resolve to the lowest class index, i.e. toward Normal.
ClassLabel predicted_label(const ClassVector& probabilities);

ClassVector predict(const GenClassifier& model, std::span<const double> x, std::uint64_t seed);

struct Prediction {
  ClassLabel label = ClassLabel::Normal;
  ClassVector probabilities{};
};

/// Per-item seed derived from (seed, index) so results do not depend on
/// batching or evaluation order.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index);

std::vector<Prediction> classify_features(const GenClassifier& model, std::span<const LabeledFeature> data,
                                          std::uint64_t seed);
std::vector<Prediction> classify_log(const GenClassifier& model, std::span<const CanFrame> frames,
                                     const FeatureConfig& cfg, std::uint64_t seed);

// ---------------------------------------------------------------------------
// Training

enum class IterationUnit : std::uint8_t { Epochs, Batches };

std::string_view iteration_unit_name(IterationUnit unit);
std::optional<IterationUnit> iteration_unit_from_name(std::string_view name);

struct TrainConfig {
  std::size_t batch_size = 100;
  std::size_t iterations = 250;
  IterationUnit unit = IterationUnit::Epochs;
  AdamConfig adam;
  std::uint64_t seed = 0;
  /// Size of the fixed subset used for the trace's loss and accuracy.
  std::size_t trace_samples = 1000;
  /// Batches between trace rows; 0 means once per epoch.
  std::size_t trace_every = 0;

  friend bool operator==(const TrainConfig& a, const TrainConfig& b);
};

nlohmann::json to_json(const TrainConfig& cfg);
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TraceRow {
  std::uint64_t step = 0;        // optimizer steps taken
  double mean_neg_elbo = 0.0;    // over the trace subset, fixed noise
  double train_accuracy = 0.0;   // over the trace subset
};

struct TrainResult {
  GenClassifier model;
  AdamState optimizer;
  std::vector<TraceRow> trace;
};

/// Raised when the loss or a gradient turns non-finite; carries the state
/// from the last finite trace point.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, TrainResult last_good)
      : Error(what), last_good_(std::move(last_good)) {}
  const TrainResult& last_good() const { return last_good_; }

 private:
  TrainResult last_good_;
};

/// Empirical class frequencies. Classes absent from `data` get a small floor
/// so the prior stays strictly positive.
ClassVector empirical_prior(std::span<const LabeledFeature> data);

using TraceCallback = std::function<void(const TraceRow&)>;

/// Sets prior_y from `data`, then minimizes the mean negative ELBO with Adam.
TrainResult train(GenClassifier model, std::span<const LabeledFeature> data, const TrainConfig& cfg,
                  const TraceCallback& on_trace = {});

}  // namespace canids
