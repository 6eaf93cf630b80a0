#include "canids/gen_classifier.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "canids/numerics.hpp"

namespace canids {

namespace {

constexpr std::uint64_t kTraceSalt = 0x7472616365ull;  // "trace"

std::vector<std::size_t> widths(std::size_t layers, std::size_t width) {
  return std::vector<std::size_t>(layers, width);
}

void append_onehot(std::vector<double>& v, ClassLabel y) {
  for (std::size_t c = 0; c < kNumClasses; ++c) v.push_back(c == index_of(y) ? 1.0 : 0.0);
}

void check_finite(double value, const char* term) {
  if (!std::isfinite(value)) throw Error(std::string("non-finite ELBO term: ") + term);
}

// Forward state of one ELBO draw, kept for the backward pass.
struct ElboForward {
  std::vector<double> in_m, in_z, in_d;
  Tape tape_m, tape_z, tape_d;
  std::vector<double> raw_m, raw_z;
  GaussianParams q_m, q_z;
  std::vector<double> m, z, x_hat;
  SampleLoss loss;
};

void run_elbo(const GenClassifier& model, std::span<const double> x, ClassLabel y, std::span<const double> z_noise,
              std::span<const double> m_noise, ElboForward& f) {
  const auto& cfg = model.config();
  if (x.size() != cfg.x_dim) throw Error("feature vector has the wrong dimension");
  if (z_noise.size() != cfg.z_dim) throw Error("z noise has the wrong dimension");
  const bool full = cfg.mode == Mode::FullElbo;
  if (full && m_noise.size() != cfg.m_dim) throw Error("m noise has the wrong dimension");

  f.in_m.assign(x.begin(), x.end());
  append_onehot(f.in_m, y);

  if (cfg.m_dim > 0) {
    auto raw = model.enc_m().forward(f.in_m, f.tape_m);
    f.raw_m.assign(raw.begin(), raw.end());
    f.q_m = gaussian_head(f.raw_m);
    f.m = full ? sample_reparam(f.q_m, m_noise) : std::vector<double>(cfg.m_dim, 0.0);
  } else {
    f.raw_m.clear();
    f.q_m = {};
    f.m.clear();
  }

  f.in_z = f.in_m;
  f.in_z.insert(f.in_z.end(), f.m.begin(), f.m.end());
  auto raw_z = model.enc_z().forward(f.in_z, f.tape_z);
  f.raw_z.assign(raw_z.begin(), raw_z.end());
  f.q_z = gaussian_head(f.raw_z);
  f.z = sample_reparam(f.q_z, z_noise);

  f.in_d.clear();
  append_onehot(f.in_d, y);
  f.in_d.insert(f.in_d.end(), f.z.begin(), f.z.end());
  f.in_d.insert(f.in_d.end(), f.m.begin(), f.m.end());
  auto x_hat = model.dec().forward(f.in_d, f.tape_d);
  f.x_hat.assign(x_hat.begin(), x_hat.end());

  auto& t = f.loss.terms;
  t.recon_log_lik = isotropic_log_pdf(x, f.x_hat, cfg.dec_log_var);
  t.log_prior_z = standard_normal_log_pdf(f.z);
  t.log_prior_y = std::log(model.prior_y()[index_of(y)]);
  t.log_q_z = gaussian_log_pdf(f.z, f.q_z);
  t.kl_m = (full && cfg.m_dim > 0) ? kl_to_standard_normal(f.q_m) : 0.0;
  check_finite(t.recon_log_lik, "recon_log_lik");
  check_finite(t.log_prior_z, "log_prior_z");
  check_finite(t.log_prior_y, "log_prior_y");
  check_finite(t.log_q_z, "log_q_z");
  check_finite(t.kl_m, "kl_m");
  t.elbo = t.recon_log_lik + t.log_prior_z + t.log_prior_y - t.log_q_z - t.kl_m;

  f.loss.aux_kl = (!full && cfg.m_dim > 0) ? cfg.aux_kl_weight * kl_to_standard_normal(f.q_m) : 0.0;
  check_finite(f.loss.aux_kl, "aux_kl");
  f.loss.loss = -t.elbo + f.loss.aux_kl;
}

}  // namespace

std::string_view mode_name(Mode mode) { return mode == Mode::FullElbo ? "FullElbo" : "PaperLiteral"; }

std::optional<Mode> mode_from_name(std::string_view name) {
  if (name == "FullElbo") return Mode::FullElbo;
  if (name == "PaperLiteral") return Mode::PaperLiteral;
  return std::nullopt;
}

nlohmann::json to_json(const ModelConfig& cfg) {
  return {{"x_dim", cfg.x_dim},
          {"z_dim", cfg.z_dim},
          {"m_dim", cfg.m_dim},
          {"encoder_layers", cfg.encoder_layers},
          {"encoder_width", cfg.encoder_width},
          {"decoder_layers", cfg.decoder_layers},
          {"decoder_width", cfg.decoder_width},
          {"mode", std::string(mode_name(cfg.mode))},
          {"samples", cfg.samples},
          {"dec_log_var", cfg.dec_log_var},
          {"aux_kl_weight", cfg.aux_kl_weight}};
}

ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.x_dim = j.at("x_dim").get<std::size_t>();
  cfg.z_dim = j.at("z_dim").get<std::size_t>();
  cfg.m_dim = j.at("m_dim").get<std::size_t>();
  cfg.encoder_layers = j.at("encoder_layers").get<std::size_t>();
  cfg.encoder_width = j.at("encoder_width").get<std::size_t>();
  cfg.decoder_layers = j.at("decoder_layers").get<std::size_t>();
  cfg.decoder_width = j.at("decoder_width").get<std::size_t>();
  auto mode = mode_from_name(j.at("mode").get<std::string>());
  if (!mode) throw Error("unknown model mode");
  cfg.mode = *mode;
  cfg.samples = j.at("samples").get<std::size_t>();
  cfg.dec_log_var = j.at("dec_log_var").get<double>();
  cfg.aux_kl_weight = j.at("aux_kl_weight").get<double>();
  return cfg;
}

GenClassifier::GenClassifier(ModelConfig config, DenseNet enc_m, DenseNet enc_z, DenseNet dec, ClassVector prior_y)
    : config_(config), enc_m_(std::move(enc_m)), enc_z_(std::move(enc_z)), dec_(std::move(dec)) {
  const auto& c = config_;
  if (c.x_dim == 0 || c.z_dim == 0) throw Error("x_dim and z_dim must be positive");
  if (c.samples == 0) throw Error("prediction needs at least one importance sample");
  if (c.m_dim > 0) {
    if (enc_m_.input_dim() != c.x_dim + kNumClasses || enc_m_.output_dim() != 2 * c.m_dim)
      throw Error("m-encoder shape does not match the model dimensions");
  } else if (!enc_m_.empty()) {
    throw Error("m_dim is 0 but an m-encoder was supplied");
  }
  if (enc_z_.input_dim() != c.x_dim + kNumClasses + c.m_dim || enc_z_.output_dim() != 2 * c.z_dim)
    throw Error("z-encoder shape does not match the model dimensions");
  if (dec_.input_dim() != kNumClasses + c.z_dim + c.m_dim || dec_.output_dim() != c.x_dim)
    throw Error("decoder shape does not match the model dimensions");
  set_prior_y(prior_y);
}

GenClassifier GenClassifier::initialize(const ModelConfig& config, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  const auto enc_hidden = widths(config.encoder_layers, config.encoder_width);
  const auto dec_hidden = widths(config.decoder_layers, config.decoder_width);
  DenseNet enc_m;
  if (config.m_dim > 0) enc_m = DenseNet::glorot(config.x_dim + kNumClasses, enc_hidden, 2 * config.m_dim, rng);
  DenseNet enc_z = DenseNet::glorot(config.x_dim + kNumClasses + config.m_dim, enc_hidden, 2 * config.z_dim, rng);
  DenseNet dec = DenseNet::glorot(kNumClasses + config.z_dim + config.m_dim, dec_hidden, config.x_dim, rng);
  ClassVector uniform;
  uniform.fill(1.0 / static_cast<double>(kNumClasses));
  return GenClassifier(config, std::move(enc_m), std::move(enc_z), std::move(dec), uniform);
}

void GenClassifier::set_prior_y(const ClassVector& prior) {
  double sum = 0.0;
  for (double p : prior) {
    if (!(p > 0.0) || !std::isfinite(p)) throw Error("class prior entries must be positive");
    sum += p;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error("class prior must sum to 1");
  prior_y_ = prior;
}

std::vector<ParamRef> GenClassifier::parameters() {
  std::vector<ParamRef> refs;
  if (!enc_m_.empty()) enc_m_.collect("enc_m", refs);
  enc_z_.collect("enc_z", refs);
  dec_.collect("dec", refs);
  return refs;
}

ParamContainer GenClassifier::to_container(std::uint64_t seed, const std::optional<AdamState>& optimizer,
                                           nlohmann::json metadata) const {
  ParamContainer c;
  c.seed = seed;
  c.optimizer = optimizer;
  auto add_net = [&](const DenseNet& net, const std::string& prefix) {
    for (std::size_t i = 0; i < net.layers().size(); ++i) {
      const auto& l = net.layers()[i];
      c.blocks.push_back({prefix + "." + std::to_string(i) + ".weight", {l.out, l.in}, l.weight});
      c.blocks.push_back({prefix + "." + std::to_string(i) + ".bias", {l.out}, l.bias});
    }
  };
  if (!enc_m_.empty()) add_net(enc_m_, "enc_m");
  add_net(enc_z_, "enc_z");
  add_net(dec_, "dec");
  metadata["model"] = to_json(config_);
  metadata["prior_y"] = std::vector<double>(prior_y_.begin(), prior_y_.end());
  c.metadata = std::move(metadata);
  return c;
}

GenClassifier GenClassifier::from_container(const ParamContainer& c) {
  const ModelConfig cfg = model_config_from_json(c.metadata.at("model"));
  auto prior = c.metadata.at("prior_y").get<std::vector<double>>();
  if (prior.size() != kNumClasses) throw Error("checkpoint class prior has the wrong length");
  auto load_net = [&](const std::string& prefix, std::size_t hidden_layers) {
    std::vector<DenseLayer> layers;
    for (std::size_t i = 0; i <= hidden_layers; ++i) {
      const auto& w = c.block(prefix + "." + std::to_string(i) + ".weight");
      const auto& b = c.block(prefix + "." + std::to_string(i) + ".bias");
      if (w.shape.size() != 2) throw Error("weight block " + w.name + " is not a matrix");
      layers.push_back({w.shape[1], w.shape[0], w.values, b.values,
                        i < hidden_layers ? Activation::ReLU : Activation::Identity});
    }
    return DenseNet(std::move(layers));
  };
  DenseNet enc_m;
  if (cfg.m_dim > 0) enc_m = load_net("enc_m", cfg.encoder_layers);
  ClassVector py;
  std::copy(prior.begin(), prior.end(), py.begin());
  return GenClassifier(cfg, std::move(enc_m), load_net("enc_z", cfg.encoder_layers),
                       load_net("dec", cfg.decoder_layers), py);
}

bool operator==(const GenClassifier& a, const GenClassifier& b) {
  return a.config_ == b.config_ && a.enc_m_ == b.enc_m_ && a.enc_z_ == b.enc_z_ && a.dec_ == b.dec_ &&
         a.prior_y_ == b.prior_y_;
}

ModelGrad::ModelGrad(const GenClassifier& model)
    : enc_m(model.enc_m()), enc_z(model.enc_z()), dec(model.dec()) {}

void ModelGrad::zero() {
  enc_m.zero();
  enc_z.zero();
  dec.zero();
}

void ModelGrad::scale(double factor) {
  enc_m.scale(factor);
  enc_z.scale(factor);
  dec.scale(factor);
}

std::vector<GradRef> ModelGrad::refs() const {
  std::vector<GradRef> out;
  enc_m.collect("enc_m", out);
  enc_z.collect("enc_z", out);
  dec.collect("dec", out);
  return out;
}

ElboTerms elbo_sample(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                      std::span<const double> z_noise, std::span<const double> m_noise) {
  ElboForward f;
  run_elbo(model, x, y, z_noise, m_noise, f);
  return f.loss.terms;
}

SampleLoss elbo_sample_grad(const GenClassifier& model, std::span<const double> x, ClassLabel y,
                            std::span<const double> z_noise, std::span<const double> m_noise, ModelGrad& grad) {
  thread_local ElboForward f;
  run_elbo(model, x, y, z_noise, m_noise, f);
  const auto& cfg = model.config();
  const bool full = cfg.mode == Mode::FullElbo;
  const std::size_t zd = cfg.z_dim;
  const std::size_t md = cfg.m_dim;

  // loss = -recon - log p(z) - log p(y) + log q(z) + kl_m + aux_kl

  // -recon w.r.t. decoder output.
  const double inv_var = std::exp(-cfg.dec_log_var);
  std::vector<double> d_xhat(cfg.x_dim);
  for (std::size_t i = 0; i < cfg.x_dim; ++i) d_xhat[i] = -(x[i] - f.x_hat[i]) * inv_var;
  const auto d_in_d = model.dec().backward(f.tape_d, d_xhat, grad.dec);

  // Total derivative w.r.t. the sample z, then through the reparameterization.
  const auto q_z_grad = gaussian_log_pdf_grad(f.z, f.q_z);
  std::vector<double> d_z(zd);
  for (std::size_t i = 0; i < zd; ++i) d_z[i] = d_in_d[kNumClasses + i] + f.z[i] + q_z_grad.x[i];
  auto d_qz = sample_reparam_backward(f.q_z, z_noise, d_z);
  for (std::size_t i = 0; i < zd; ++i) {
    d_qz.mean[i] += q_z_grad.mean[i];
    d_qz.log_var[i] += q_z_grad.log_var[i];
  }
  const auto d_raw_z = gaussian_head_backward(f.raw_z, d_qz.mean, d_qz.log_var);
  const auto d_in_z = model.enc_z().backward(f.tape_z, d_raw_z, grad.enc_z);

  if (md > 0) {
    const auto kl_grad = kl_to_standard_normal_grad(f.q_m);
    GaussianGrad d_qm;
    if (full) {
      std::vector<double> d_m(md);
      for (std::size_t i = 0; i < md; ++i)
        d_m[i] = d_in_d[kNumClasses + zd + i] + d_in_z[cfg.x_dim + kNumClasses + i];
      d_qm = sample_reparam_backward(f.q_m, m_noise, d_m);
      for (std::size_t i = 0; i < md; ++i) {
        d_qm.mean[i] += kl_grad.mean[i];
        d_qm.log_var[i] += kl_grad.log_var[i];
      }
    } else {
      // m is held at 0; only the auxiliary regularizer reaches the m-encoder.
      d_qm.mean.resize(md);
      d_qm.log_var.resize(md);
      for (std::size_t i = 0; i < md; ++i) {
        d_qm.mean[i] = cfg.aux_kl_weight * kl_grad.mean[i];
        d_qm.log_var[i] = cfg.aux_kl_weight * kl_grad.log_var[i];
      }
    }
    const auto d_raw_m = gaussian_head_backward(f.raw_m, d_qm.mean, d_qm.log_var);
    model.enc_m().backward(f.tape_m, d_raw_m, grad.enc_m);
  }
  return f.loss;
}

double class_score(const GenClassifier& model, std::span<const double> x, ClassLabel y, std::size_t samples,
                   std::mt19937_64& rng) {
  const auto& cfg = model.config();
  if (x.size() != cfg.x_dim) throw Error("feature vector has the wrong dimension");
  if (samples == 0) throw Error("class_score needs at least one sample");
  const bool full = cfg.mode == Mode::FullElbo;
  std::normal_distribution<double> normal(0.0, 1.0);

  thread_local Tape tape_m, tape_z, tape_d;
  std::vector<double> in_m(x.begin(), x.end());
  append_onehot(in_m, y);

  GaussianParams q_m;
  if (cfg.m_dim > 0) q_m = gaussian_head(model.enc_m().forward(in_m, tape_m));

  const double log_py = std::log(model.prior_y()[index_of(y)]);
  std::vector<double> log_w(samples);
  std::vector<double> eps_m(cfg.m_dim), eps_z(cfg.z_dim), in_z, in_d;
  for (std::size_t t = 0; t < samples; ++t) {
    std::vector<double> m;
    if (cfg.m_dim > 0) {
      for (double& e : eps_m) e = normal(rng);
      m = sample_reparam(q_m, eps_m);
    }
    in_z = in_m;
    in_z.insert(in_z.end(), m.begin(), m.end());
    const auto q_z = gaussian_head(model.enc_z().forward(in_z, tape_z));
    for (double& e : eps_z) e = normal(rng);
    const auto z = sample_reparam(q_z, eps_z);

    in_d.clear();
    append_onehot(in_d, y);
    in_d.insert(in_d.end(), z.begin(), z.end());
    in_d.insert(in_d.end(), m.begin(), m.end());
    const auto x_hat = model.dec().forward(in_d, tape_d);

    double lw = standard_normal_log_pdf(z) + log_py + isotropic_log_pdf(x, x_hat, cfg.dec_log_var) -
                gaussian_log_pdf(z, q_z);
    if (full && cfg.m_dim > 0) lw += standard_normal_log_pdf(m) - gaussian_log_pdf(m, q_m);
    log_w[t] = std::isnan(lw) ? -std::numeric_limits<double>::infinity() : lw;
  }
  return log_sum_exp(log_w) - std::log(static_cast<double>(samples));
}

double class_score(const GenClassifier& model, std::span<const double> x, ClassLabel y, std::mt19937_64& rng) {
  return class_score(model, x, y, model.config().samples, rng);
}

ClassVector class_scores(const GenClassifier& model, std::span<const double> x, std::mt19937_64& rng) {
  ClassVector scores;
  for (auto label : kAllLabels) scores[index_of(label)] = class_score(model, x, label, rng);
  return scores;
}

ClassVector probabilities_from_scores(const ClassVector& scores) {
  bool any_finite = false;
  for (double s : scores) {
    if (std::isnan(s)) throw Error("degenerate likelihood");
    if (s > -std::numeric_limits<double>::infinity()) any_finite = true;
  }
  if (!any_finite) throw Error("degenerate likelihood");
  const auto p = softmax(scores);
  ClassVector out;
  std::copy(p.begin(), p.end(), out.begin());
  return out;
}

ClassLabel predicted_label(const ClassVector& probabilities) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumClasses; ++c)
    if (probabilities[c] > probabilities[best]) best = c;
  return label_from_index(best);
}

ClassVector predict(const GenClassifier& model, std::span<const double> x, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return probabilities_from_scores(class_scores(model, x, rng));
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t index) {
  // splitmix64 finalizer over a combination of both inputs
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

std::vector<Prediction> classify_features(const GenClassifier& model, std::span<const LabeledFeature> data,
                                          std::uint64_t seed) {
  std::vector<Prediction> out;
  out.reserve(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto probs = predict(model, data[i].x.span(), derive_seed(seed, i));
    out.push_back({predicted_label(probs), probs});
  }
  return out;
}

std::vector<Prediction> classify_log(const GenClassifier& model, std::span<const CanFrame> frames,
                                     const FeatureConfig& cfg, std::uint64_t seed) {
  const auto features = extract_stream(frames, cfg);
  return classify_features(model, features, seed);
}

// ---------------------------------------------------------------------------

std::string_view iteration_unit_name(IterationUnit unit) {
  return unit == IterationUnit::Epochs ? "epochs" : "batches";
}

std::optional<IterationUnit> iteration_unit_from_name(std::string_view name) {
  if (name == "epochs") return IterationUnit::Epochs;
  if (name == "batches") return IterationUnit::Batches;
  return std::nullopt;
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.batch_size == b.batch_size && a.iterations == b.iterations && a.unit == b.unit &&
         a.adam.lr == b.adam.lr && a.adam.beta1 == b.adam.beta1 && a.adam.beta2 == b.adam.beta2 &&
         a.adam.epsilon == b.adam.epsilon && a.seed == b.seed && a.trace_samples == b.trace_samples &&
         a.trace_every == b.trace_every;
}

nlohmann::json to_json(const TrainConfig& cfg) {
  return {{"batch_size", cfg.batch_size},
          {"iterations", cfg.iterations},
          {"iteration_unit", std::string(iteration_unit_name(cfg.unit))},
          {"lr", cfg.adam.lr},
          {"beta1", cfg.adam.beta1},
          {"beta2", cfg.adam.beta2},
          {"epsilon", cfg.adam.epsilon},
          {"seed", cfg.seed},
          {"trace_samples", cfg.trace_samples},
          {"trace_every", cfg.trace_every}};
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  cfg.batch_size = j.at("batch_size").get<std::size_t>();
  cfg.iterations = j.at("iterations").get<std::size_t>();
  auto unit = iteration_unit_from_name(j.at("iteration_unit").get<std::string>());
  if (!unit) throw Error("unknown iteration unit");
  cfg.unit = *unit;
  cfg.adam.lr = j.at("lr").get<double>();
  cfg.adam.beta1 = j.at("beta1").get<double>();
  cfg.adam.beta2 = j.at("beta2").get<double>();
  cfg.adam.epsilon = j.at("epsilon").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  cfg.trace_samples = j.at("trace_samples").get<std::size_t>();
  cfg.trace_every = j.at("trace_every").get<std::size_t>();
  return cfg;
}

ClassVector empirical_prior(std::span<const LabeledFeature> data) {
  if (data.empty()) throw Error("cannot estimate a class prior from no data");
  std::array<std::size_t, kNumClasses> counts{};
  for (const auto& s : data) ++counts[index_of(s.y)];
  const double n = static_cast<double>(data.size());
  ClassVector prior;
  constexpr double kFloor = 1e-6;
  bool floored = false;
  for (std::size_t c = 0; c < kNumClasses; ++c) {
    prior[c] = static_cast<double>(counts[c]) / n;
    if (prior[c] < kFloor) {
      prior[c] = kFloor;
      floored = true;
    }
  }
  if (floored) {
    const double sum = std::accumulate(prior.begin(), prior.end(), 0.0);
    for (double& p : prior) p /= sum;
  }
  return prior;
}

namespace {

TraceRow evaluate_trace(const GenClassifier& model, std::span<const LabeledFeature> data,
                        std::span<const std::size_t> subset, std::uint64_t seed, std::uint64_t step) {
  const auto& cfg = model.config();
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> eps_z(cfg.z_dim), eps_m(cfg.m_dim);
  double loss_sum = 0.0;
  std::size_t correct = 0;
  for (std::size_t k = 0; k < subset.size(); ++k) {
    const auto& sample = data[subset[k]];
    std::mt19937_64 rng(derive_seed(seed, k));
    for (double& e : eps_z) e = normal(rng);
    for (double& e : eps_m) e = normal(rng);
    loss_sum -= elbo_sample(model, sample.x.span(), sample.y, eps_z, eps_m).elbo;
    const auto probs = probabilities_from_scores(class_scores(model, sample.x.span(), rng));
    if (predicted_label(probs) == sample.y) ++correct;
  }
  const double n = static_cast<double>(subset.size());
  return {step, loss_sum / n, static_cast<double>(correct) / n};
}

}  // namespace

TrainResult train(GenClassifier model, std::span<const LabeledFeature> data, const TrainConfig& cfg,
                  const TraceCallback& on_trace) {
  if (data.empty()) throw Error("training data is empty");
  if (cfg.batch_size == 0) throw Error("batch size must be positive");
  for (const auto& s : data)
    if (s.x.values.size() != model.config().x_dim) throw Error("training features do not match the model input");

  model.set_prior_y(empirical_prior(data));

  TrainResult result{model, AdamState::for_params(model.parameters(), cfg.adam), {}};
  std::mt19937_64 rng(cfg.seed);

  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::size_t> trace_subset = order;
  {
    std::mt19937_64 pick(derive_seed(cfg.seed, kTraceSalt));
    std::shuffle(trace_subset.begin(), trace_subset.end(), pick);
    trace_subset.resize(std::min(cfg.trace_samples, trace_subset.size()));
  }
  const std::uint64_t trace_seed = derive_seed(cfg.seed, kTraceSalt + 1);

  auto emit = [&](std::uint64_t step) {
    if (trace_subset.empty()) return;
    const auto row = evaluate_trace(result.model, data, trace_subset, trace_seed, step);
    if (!std::isfinite(row.mean_neg_elbo)) throw Error("non-finite trace loss");
    result.trace.push_back(row);
    if (on_trace) on_trace(row);
  };
  emit(0);
  TrainResult last_good = result;

  const std::size_t batches_per_epoch = (data.size() + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_batches =
      cfg.unit == IterationUnit::Epochs ? cfg.iterations * batches_per_epoch : cfg.iterations;
  const std::size_t trace_every = cfg.trace_every > 0 ? cfg.trace_every : batches_per_epoch;

  ModelGrad grad(result.model);
  std::normal_distribution<double> normal(0.0, 1.0);
  const auto& mcfg = result.model.config();
  std::vector<double> eps_z(mcfg.z_dim), eps_m(mcfg.m_dim);
  std::size_t cursor = data.size();  // forces a shuffle before the first batch

  for (std::size_t b = 0; b < total_batches; ++b) {
    if (cursor >= data.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const std::size_t end = std::min(cursor + cfg.batch_size, data.size());
    grad.zero();
    try {
      double batch_loss = 0.0;
      for (std::size_t k = cursor; k < end; ++k) {
        const auto& s = data[order[k]];
        for (double& e : eps_z) e = normal(rng);
        for (double& e : eps_m) e = normal(rng);
        batch_loss += elbo_sample_grad(result.model, s.x.span(), s.y, eps_z, eps_m, grad).loss;
      }
      if (!std::isfinite(batch_loss)) throw Error("non-finite batch loss");
      grad.scale(1.0 / static_cast<double>(end - cursor));
      auto params = result.model.parameters();
      const auto grads = grad.refs();
      adam_step(params, grads, result.optimizer);
      cursor = end;
      if ((b + 1) % trace_every == 0 || b + 1 == total_batches) {
        emit(result.optimizer.step);
        last_good = result;
      }
    } catch (const Error& e) {
      throw TrainingDiverged(std::string("training diverged at step ") + std::to_string(result.optimizer.step) +
                                 ": " + e.what(),
                             std::move(last_good));
    }
  }
  return result;
}

}  // namespace canids
