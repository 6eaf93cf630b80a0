#include <cmath>
#include <filesystem>
#include <random>

#include "canids/gen_classifier.hpp"
#include "canids/numerics.hpp"
#include "canids/traffic_synth.hpp"
#include "doctest.h"
#include "oracles/oracles.hpp"

using namespace canids;

namespace {

ModelConfig small_config(Mode mode) {
  ModelConfig cfg;
  cfg.encoder_layers = 2;
  cfg.encoder_width = 6;
  cfg.decoder_layers = 2;
  cfg.decoder_width = 7;
  cfg.z_dim = 3;
  cfg.m_dim = 2;
  cfg.mode = mode;
  return cfg;
}

std::vector<double> random_x(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> x(n);
  for (double& v : x) v = u(rng);
  return x;
}

std::vector<double> noise(std::size_t n, std::mt19937_64& rng) {
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<double> v(n);
  for (double& e : v) e = normal(rng);
  return v;
}

void zero_last_layer(DenseNet& net) {
  auto& last = net.layer(net.layers().size() - 1);
  std::fill(last.weight.begin(), last.weight.end(), 0.0);
  std::fill(last.bias.begin(), last.bias.end(), 0.0);
}

std::vector<LabeledFeature> synthetic_features(double duration, std::uint64_t seed) {
  auto frames = generate(BusProfile::default_profile(), default_scenarios(duration), duration, seed);
  return extract_stream(frames, FeatureConfig{});
}

// Largest relative error over all parameter blocks for one ELBO draw;
// nullopt when a finite-difference step crossed a ReLU kink.
std::optional<double> elbo_block_error(GenClassifier& model, std::span<const double> x, ClassLabel y,
                                       std::span<const double> ez, std::span<const double> em,
                                       std::mt19937_64& rng) {
  ModelGrad grad(model);
  grad.zero();
  elbo_sample_grad(model, x, y, ez, em, grad);
  const auto grads = grad.refs();
  auto params = model.parameters();
  REQUIRE(params.size() == grads.size());
  ModelGrad scratch(model);
  auto loss = [&] { return elbo_sample_grad(model, x, y, ez, em, scratch).loss; };
  auto mask = [&] { return oracle::elbo_relu_mask(model, x, y, ez, em); };
  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    REQUIRE(params[k].name == grads[k].name);
    auto r = oracle::check_block(params[k].values, grads[k].values, loss, mask, rng);
    if (r.kink) return std::nullopt;
    worst = std::max(worst, r.rel_error);
  }
  return worst;
}

}  // namespace

TEST_SUITE("gen_classifier") {
  TEST_CASE("perfect reconstruction with prior posterior") {
    ModelConfig cfg;
    cfg.mode = Mode::PaperLiteral;
    cfg.dec_log_var = 0.0;
    auto model = GenClassifier::initialize(cfg, 3);
    std::mt19937_64 rng(1);
    const auto x = random_x(cfg.x_dim, rng);
    zero_last_layer(model.enc_z());
    zero_last_layer(model.dec());
    auto& head = model.dec().layer(cfg.decoder_layers);
    std::copy(x.begin(), x.end(), head.bias.begin());
    model.set_prior_y({0.6, 0.1, 0.1, 0.1, 0.1});

    std::vector<double> ez(cfg.z_dim, 0.0), em(cfg.m_dim, 0.0);
    auto t = elbo_sample(model, x, ClassLabel::Dos, ez, em);
    CHECK(t.recon_log_lik == doctest::Approx(20.0 * -0.5 * kLogTwoPi));
    CHECK(t.log_prior_z - t.log_q_z == 0.0);
    CHECK(t.elbo == doctest::Approx(20.0 * -0.5 * kLogTwoPi + std::log(0.1)));

    // The bracket averages to zero over noise.
    double bracket = 0.0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
      auto e = noise(cfg.z_dim, rng);
      auto s = elbo_sample(model, x, ClassLabel::Dos, e, em);
      bracket += s.log_prior_z - s.log_q_z;
    }
    CHECK(std::abs(bracket / n) < 1e-12);
  }

  TEST_CASE("m-posterior equal to the prior has zero KL") {
    auto cfg = small_config(Mode::FullElbo);
    auto model = GenClassifier::initialize(cfg, 4);
    zero_last_layer(model.enc_m());
    std::mt19937_64 rng(2);
    auto x = random_x(cfg.x_dim, rng);
    auto t = elbo_sample(model, x, ClassLabel::Fuzzy, noise(cfg.z_dim, rng), noise(cfg.m_dim, rng));
    CHECK(t.kl_m == 0.0);
  }

  TEST_CASE("PaperLiteral ELBO ignores m") {
    auto cfg = small_config(Mode::PaperLiteral);
    auto model = GenClassifier::initialize(cfg, 5);
    std::mt19937_64 rng(3);
    auto x = random_x(cfg.x_dim, rng);
    auto ez = noise(cfg.z_dim, rng);
    auto a = elbo_sample(model, x, ClassLabel::Normal, ez, noise(cfg.m_dim, rng));
    auto b = elbo_sample(model, x, ClassLabel::Normal, ez, noise(cfg.m_dim, rng));
    CHECK(a.elbo == b.elbo);
    CHECK(a.kl_m == 0.0);
  }

  TEST_CASE("m_dim 0 reproduces the PaperLiteral ELBO") {
    auto cfg = small_config(Mode::PaperLiteral);
    auto model = GenClassifier::initialize(cfg, 6);
    model.set_prior_y({0.3, 0.2, 0.2, 0.2, 0.1});
    auto drop_tail = [](const DenseNet& net, std::size_t k) {
      auto layers = net.layers();
      auto& first = layers.front();
      std::vector<double> w;
      const std::size_t in = first.in - k;
      for (std::size_t o = 0; o < first.out; ++o)
        for (std::size_t i = 0; i < in; ++i) w.push_back(first.weight[o * first.in + i]);
      first.weight = w;
      first.in = in;
      return DenseNet(layers);
    };
    auto cfg0 = cfg;
    cfg0.m_dim = 0;
    GenClassifier plain(cfg0, DenseNet{}, drop_tail(model.enc_z(), cfg.m_dim), drop_tail(model.dec(), cfg.m_dim),
                        model.prior_y());
    std::mt19937_64 rng(4);
    for (int i = 0; i < 50; ++i) {
      auto x = random_x(cfg.x_dim, rng);
      auto ez = noise(cfg.z_dim, rng);
      auto em = noise(cfg.m_dim, rng);
      const auto y = label_from_index(static_cast<std::size_t>(i) % kNumClasses);
      auto a = elbo_sample(model, x, y, ez, em);
      auto b = elbo_sample(plain, x, y, ez, {});
      CHECK(a.elbo == doctest::Approx(b.elbo).epsilon(1e-13));
      CHECK(a.recon_log_lik == doctest::Approx(b.recon_log_lik).epsilon(1e-13));
      CHECK(a.log_q_z == doctest::Approx(b.log_q_z).epsilon(1e-13));
    }
  }

  TEST_CASE("ELBO gradients match central differences in both modes") {
    std::mt19937_64 rng(5);
    for (Mode mode : {Mode::FullElbo, Mode::PaperLiteral}) {
      auto cfg = small_config(mode);
      int valid = 0;
      for (int draw = 0; valid < 25 && draw < 100; ++draw) {
        auto model = GenClassifier::initialize(cfg, 200 + draw);
        auto x = random_x(cfg.x_dim, rng);
        auto ez = noise(cfg.z_dim, rng);
        auto em = noise(cfg.m_dim, rng);
        const auto y = label_from_index(static_cast<std::size_t>(draw) % kNumClasses);
        auto err = elbo_block_error(model, x, y, ez, em, rng);
        if (!err) continue;
        ++valid;
        CHECK(*err < 1e-4);
      }
      CHECK(valid == 25);
    }
  }

  TEST_CASE("ELBO gradients match central differences at full size") {
    std::mt19937_64 rng(6);
    ModelConfig cfg;
    int valid = 0;
    for (int draw = 0; valid < 3 && draw < 20; ++draw) {
      auto model = GenClassifier::initialize(cfg, 300 + draw);
      auto x = random_x(cfg.x_dim, rng);
      auto err = elbo_block_error(model, x, ClassLabel::GearSpoof, noise(cfg.z_dim, rng), noise(cfg.m_dim, rng), rng);
      if (!err) continue;
      ++valid;
      CHECK(*err < 1e-4);
    }
    CHECK(valid == 3);
  }

  TEST_CASE("mean ELBO stays below the log joint") {
    SUBCASE("m pinned to zero, one-dimensional quadrature") {
      auto model = oracle::tiny_model(Mode::PaperLiteral, 11, 1.0);
      std::mt19937_64 rng(7);
      auto x = random_x(4, rng);
      const double log_joint = oracle::quadrature_log_joint_m0(model, x, ClassLabel::Dos);
      const int n = 10000;
      double sum = 0.0, sq = 0.0;
      std::vector<double> em(1, 0.0);
      for (int i = 0; i < n; ++i) {
        const double e = elbo_sample(model, x, ClassLabel::Dos, noise(1, rng), em).elbo;
        sum += e;
        sq += e * e;
      }
      const double mean = sum / n;
      const double se = std::sqrt((sq / n - mean * mean) / n);
      CHECK(mean <= log_joint + 3.0 * se);
      CHECK(log_joint - mean < 0.5);
    }
    SUBCASE("full latent, two-dimensional quadrature") {
      auto model = oracle::tiny_model(Mode::FullElbo, 12, 1.0);
      std::mt19937_64 rng(8);
      auto x = random_x(4, rng);
      const double log_joint = oracle::quadrature_log_joint_2d(model, x, ClassLabel::Normal, 400);
      const int n = 10000;
      double sum = 0.0, sq = 0.0;
      for (int i = 0; i < n; ++i) {
        const double e = elbo_sample(model, x, ClassLabel::Normal, noise(1, rng), noise(1, rng)).elbo;
        sum += e;
        sq += e * e;
      }
      const double mean = sum / n;
      const double se = std::sqrt((sq / n - mean * mean) / n);
      CHECK(mean <= log_joint + 3.0 * se);
    }
  }

  TEST_CASE("importance-weighted scores converge to the quadrature log joint") {
    auto model = oracle::tiny_model(Mode::FullElbo, 13, 1.0);
    model.set_prior_y({0.4, 0.15, 0.15, 0.15, 0.15});
    std::mt19937_64 rng(9);
    auto x = random_x(4, rng);
    for (auto y : kAllLabels) {
      const double exact = oracle::quadrature_log_joint_2d(model, x, y, 400);
      std::mt19937_64 srng(derive_seed(10, index_of(y)));
      const double score = class_score(model, x, y, 10000, srng);
      CHECK(std::abs(score - exact) < 0.1);
    }
  }

  TEST_CASE("softmax examples") {
    auto uniform = probabilities_from_scores({-3.0, -3.0, -3.0, -3.0, -3.0});
    for (double p : uniform) CHECK(p == doctest::Approx(0.2));
    auto p = probabilities_from_scores({std::log(2.0), 0.0, 0.0, 0.0, 0.0});
    CHECK(p[0] == doctest::Approx(2.0 / 6.0));
    for (std::size_t c = 1; c < kNumClasses; ++c) CHECK(p[c] == doctest::Approx(1.0 / 6.0));
  }

  TEST_CASE("softmax handles scores hundreds of nats apart") {
    auto p = probabilities_from_scores({-900.0, -100.0, -1e300, -std::numeric_limits<double>::infinity(), -101.0});
    double sum = 0.0;
    for (double v : p) {
      CHECK(v >= 0.0);
      sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-9);
    CHECK(predicted_label(p) == ClassLabel::Dos);
  }

  TEST_CASE("argmax is unchanged by a shared offset") {
    std::mt19937_64 rng(11);
    std::normal_distribution<double> normal(0.0, 50.0);
    for (int i = 0; i < 200; ++i) {
      ClassVector s;
      for (double& v : s) v = normal(rng);
      ClassVector shifted = s;
      const double c = normal(rng) * 10.0;
      for (double& v : shifted) v += c;
      auto a = probabilities_from_scores(s);
      auto b = probabilities_from_scores(shifted);
      CHECK(predicted_label(a) == predicted_label(b));
      double sum = 0.0;
      for (double v : a) sum += v;
      CHECK(std::abs(sum - 1.0) < 1e-9);
    }
  }

  TEST_CASE("ties resolve toward Normal") {
    CHECK(predicted_label({0.2, 0.2, 0.2, 0.2, 0.2}) == ClassLabel::Normal);
    CHECK(predicted_label({0.1, 0.3, 0.3, 0.2, 0.1}) == ClassLabel::Dos);
  }

  TEST_CASE("all scores -inf is a degenerate likelihood") {
    const double ninf = -std::numeric_limits<double>::infinity();
    CHECK_THROWS_WITH_AS(probabilities_from_scores({ninf, ninf, ninf, ninf, ninf}), "degenerate likelihood", Error);
    CHECK_THROWS_WITH_AS(probabilities_from_scores({0.0, std::nan(""), 0.0, 0.0, 0.0}), "degenerate likelihood",
                         Error);
  }

  TEST_CASE("empirical prior of the balanced subset") {
    std::vector<LabeledFeature> data(240'000);
    for (auto a : kAttackLabels) {
      LabeledFeature s;
      s.y = a;
      data.insert(data.end(), 30'000, s);
    }
    auto prior = empirical_prior(data);
    CHECK(prior[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));
    for (std::size_t c = 1; c < kNumClasses; ++c) CHECK(prior[c] == doctest::Approx(1.0 / 12.0).epsilon(1e-15));
  }

  TEST_CASE("absent classes keep a positive prior") {
    std::vector<LabeledFeature> data(10);
    auto prior = empirical_prior(data);
    double sum = 0.0;
    for (double p : prior) {
      CHECK(p > 0.0);
      sum += p;
    }
    CHECK(sum == doctest::Approx(1.0));
  }

  TEST_CASE("zero iterations only set the class prior") {
    auto cfg = small_config(Mode::FullElbo);
    auto model = GenClassifier::initialize(cfg, 14);
    auto data = synthetic_features(0.5, 1);
    TrainConfig tc;
    tc.iterations = 0;
    tc.trace_samples = 50;
    auto result = train(model, data, tc);
    CHECK(result.model.enc_m() == model.enc_m());
    CHECK(result.model.enc_z() == model.enc_z());
    CHECK(result.model.dec() == model.dec());
    CHECK(result.model.prior_y() == empirical_prior(data));
    CHECK(result.optimizer.step == 0);
    REQUIRE(result.trace.size() == 1);
    CHECK(result.trace[0].step == 0);
  }

  TEST_CASE("training is deterministic for a fixed seed") {
    auto cfg = small_config(Mode::FullElbo);
    auto data = synthetic_features(0.5, 2);
    TrainConfig tc;
    tc.iterations = 2;
    tc.seed = 77;
    tc.trace_samples = 50;
    auto a = train(GenClassifier::initialize(cfg, 15), data, tc);
    auto b = train(GenClassifier::initialize(cfg, 15), data, tc);
    CHECK(a.model == b.model);
    CHECK(a.optimizer == b.optimizer);
    REQUIRE(a.trace.size() == b.trace.size());
    for (std::size_t i = 0; i < a.trace.size(); ++i) CHECK(a.trace[i].mean_neg_elbo == b.trace[i].mean_neg_elbo);
    auto pa = classify_features(a.model, data, 5);
    auto pb = classify_features(b.model, data, 5);
    for (std::size_t i = 0; i < pa.size(); ++i) CHECK(pa[i].probabilities == pb[i].probabilities);
  }

  TEST_CASE("batch iteration unit counts optimizer steps") {
    auto data = synthetic_features(0.5, 4);
    TrainConfig tc;
    tc.iterations = 7;
    tc.unit = IterationUnit::Batches;
    tc.trace_samples = 20;
    tc.trace_every = 3;
    auto r = train(GenClassifier::initialize(small_config(Mode::PaperLiteral), 17), data, tc);
    CHECK(r.optimizer.step == 7);
    REQUIRE(r.trace.size() == 4);
    CHECK(r.trace[1].step == 3);
    CHECK(r.trace[3].step == 7);
  }

  TEST_CASE("divergence keeps the last finite state") {
    auto data = synthetic_features(0.2, 5);
    TrainConfig tc;
    tc.iterations = 50;
    tc.unit = IterationUnit::Batches;
    tc.adam.lr = 1e30;
    tc.trace_samples = 20;
    tc.trace_every = 1;
    try {
      train(GenClassifier::initialize(ModelConfig{}, 18), data, tc);
      FAIL("expected divergence");
    } catch (const TrainingDiverged& e) {
      CHECK(std::string(e.what()).find("training diverged") == 0);
      REQUIRE_FALSE(e.last_good().trace.empty());
      for (const auto& row : e.last_good().trace) CHECK(std::isfinite(row.mean_neg_elbo));
    }
  }

  TEST_CASE("desk-scale training reduces the loss and detects DoS") {
    auto data = synthetic_features(8.0, 21);
    TrainConfig tc;
    tc.iterations = 40;
    tc.seed = 1;
    tc.trace_samples = 300;
    auto r = train(GenClassifier::initialize(ModelConfig{}, 1), data, tc);
    REQUIRE(r.trace.size() == 41);
    CHECK(r.trace.back().mean_neg_elbo < 0.9 * r.trace.front().mean_neg_elbo);

    const std::vector<AttackScenario> dos{AttackScenario::make(ClassLabel::Dos, 0.0, 0.5)};
    auto frames = generate(BusProfile::default_profile(), dos, 0.5, 99);
    auto preds = classify_log(r.model, frames, FeatureConfig{}, 3);
    REQUIRE(preds.size() == frames.size());
    std::size_t injected = 0, hit = 0;
    for (std::size_t i = 0; i < frames.size(); ++i) {
      double sum = 0.0;
      for (double p : preds[i].probabilities) sum += p;
      CHECK(std::abs(sum - 1.0) < 1e-9);
      if (frames[i].label != ClassLabel::Dos) continue;
      ++injected;
      if (preds[i].label == ClassLabel::Dos) ++hit;
    }
    REQUIRE(injected > 1000);
    CHECK(double(hit) / double(injected) >= 0.99);
  }

  TEST_CASE("classifying an empty log gives nothing") {
    auto model = GenClassifier::initialize(small_config(Mode::FullElbo), 19);
    CHECK(classify_log(model, {}, FeatureConfig{}, 1).empty());
  }

  TEST_CASE("model checkpoints round-trip") {
    auto model = GenClassifier::initialize(small_config(Mode::PaperLiteral), 20);
    model.set_prior_y({0.5, 0.2, 0.1, 0.1, 0.1});
    auto state = AdamState::for_params(model.parameters());
    auto path = std::filesystem::temp_directory_path() / "canids_model_roundtrip.json";
    save_container(path, model.to_container(20, state, {{"k", 1}}));
    auto c = load_container(path);
    std::filesystem::remove(path);
    CHECK(GenClassifier::from_container(c) == model);
    CHECK(c.metadata["k"] == 1);
    CHECK(*c.optimizer == state);
  }

  TEST_CASE("configs round-trip through JSON") {
    auto cfg = small_config(Mode::PaperLiteral);
    CHECK(model_config_from_json(to_json(cfg)) == cfg);
    TrainConfig tc;
    tc.unit = IterationUnit::Batches;
    tc.adam.lr = 3e-3;
    CHECK(train_config_from_json(to_json(tc)) == tc);
    CHECK(mode_from_name("FullElbo") == Mode::FullElbo);
    CHECK_FALSE(mode_from_name("full"));
  }
}
