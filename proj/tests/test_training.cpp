#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>

#include "puzzlegan/dataio.hpp"
#include "puzzlegan/errors.hpp"
#include "puzzlegan/runtime.hpp"
#include "puzzlegan/training.hpp"
#include "test_support.hpp"

using namespace puzzlegan;

namespace {

ImageStore random_store(std::int64_t n, std::uint64_t seed) {
  torch::manual_seed(seed);
  return ImageStore(torch::rand({n, 3, 32, 32}) * 2 - 1);
}

std::string file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

// Sum of parameter values in double; enough to notice any update.
double fingerprint(const torch::nn::Module& m) {
  double total = 0.0;
  for (const auto& p : m.parameters()) total += p.detach().to(torch::kFloat64).sum().item<double>() + p.detach().to(torch::kFloat64).abs().sum().item<double>();
  return total;
}

bool same_parameters(const torch::nn::Module& a, const torch::nn::Module& b) {
  const auto pa = a.parameters();
  const auto pb = b.parameters();
  if (pa.size() != pb.size()) return false;
  for (std::size_t i = 0; i < pa.size(); ++i)
    if (!torch::equal(pa[i], pb[i])) return false;
  return true;
}

struct Tiny {
  PartLayout layout = canonical_layout("facial_parts");
  ModelSpec spec = testing::small_spec(layout, 4);
  PriorSpec prior = default_prior_spec(layout, 2);
};

}  // namespace

TEST_SUITE("training") {
  TEST_CASE("non-saturating equilibrium value") {
    const auto zero = torch::zeros({8});  // logits of sigma = 0.5
    CHECK(loss_d(LossKind::kNonSaturating, zero, zero, {}, 0.0).item<double>() == doctest::Approx(2.0 * std::log(2.0)).epsilon(1e-7));
    CHECK(loss_g(LossKind::kNonSaturating, zero).item<double>() == doctest::Approx(std::log(2.0)).epsilon(1e-7));
  }

  TEST_CASE("non-saturating losses match their definitions") {
    const auto real = torch::tensor({2.0, -1.0, 0.5}, torch::kFloat64);
    const auto fake = torch::tensor({-3.0, 0.25}, torch::kFloat64);
    auto sig = [](double x) { return 1.0 / (1.0 + std::exp(-x)); };
    const double want_d = -(std::log(sig(2.0)) + std::log(sig(-1.0)) + std::log(sig(0.5))) / 3.0 -
                          (std::log(1 - sig(-3.0)) + std::log(1 - sig(0.25))) / 2.0;
    const double want_g = -(std::log(sig(-3.0)) + std::log(sig(0.25))) / 2.0;
    CHECK(loss_d(LossKind::kNonSaturating, real, fake, {}, 0.0).item<double>() == doctest::Approx(want_d).epsilon(1e-12));
    CHECK(loss_g(LossKind::kNonSaturating, fake).item<double>() == doctest::Approx(want_g).epsilon(1e-12));
    // Stable for extreme logits.
    const auto big = torch::tensor({1000.0, -1000.0}, torch::kFloat64);
    CHECK(std::isfinite(loss_d(LossKind::kNonSaturating, big, big, {}, 0.0).item<double>()));
  }

  TEST_CASE("wgan losses") {
    const auto s = torch::tensor({0.3, -1.2, 4.0}, torch::kFloat64);
    CHECK(loss_d(LossKind::kWganGp, s, s, torch::zeros({}, torch::kFloat64), 10.0).item<double>() == 0.0);
    const auto fake = torch::tensor({1.0, 2.0}, torch::kFloat64);
    CHECK(loss_d(LossKind::kWganGp, s, fake, torch::tensor(0.5, torch::kFloat64), 10.0).item<double>() ==
          doctest::Approx(1.5 - 3.1 / 3.0 + 5.0).epsilon(1e-12));
    CHECK(loss_g(LossKind::kWganGp, fake).item<double>() == doctest::Approx(-1.5));
  }

  TEST_CASE("generator loss gradients agree with central differences") {
    // Toy generator with four parameters and a fixed smooth critic.
    const auto z = torch::tensor({-1.3, -0.2, 0.4, 0.9, 1.7}, torch::kFloat64);
    auto critic = [](const torch::Tensor& x) { return 0.7 * x + torch::sin(x) - 0.1 * x * x; };
    auto loss_at = [&](LossKind kind, const torch::Tensor& theta) {
      const auto x = theta[0] * z + theta[1] * torch::tanh(theta[2] * z) + theta[3];
      return loss_g(kind, critic(x));
    };
    for (const auto kind : {LossKind::kNonSaturating, LossKind::kWganGp}) {
      const auto theta = torch::tensor({0.8, -0.5, 1.1, 0.3}, torch::kFloat64).requires_grad_(true);
      const auto analytic = torch::autograd::grad({loss_at(kind, theta)}, {theta})[0];
      const double h = 1e-6;
      for (int i = 0; i < 4; ++i) {
        auto plus = theta.detach().clone();
        auto minus = theta.detach().clone();
        plus[i] += h;
        minus[i] -= h;
        const double numeric = (loss_at(kind, plus).item<double>() - loss_at(kind, minus).item<double>()) / (2 * h);
        const double a = analytic[i].item<double>();
        CHECK(std::abs(a - numeric) <= 1e-3 * std::max(std::abs(numeric), 1e-8));
      }
    }
  }

  TEST_CASE("gradient penalty vanishes for a linear unit-gradient critic") {
    torch::manual_seed(1);
    const auto u = torch::randn({3 * 4 * 4}, torch::kFloat64);
    const auto unit = u / u.norm();
    auto critic = [&](const torch::Tensor& x) { return torch::matmul(x.flatten(1), unit) + 2.5; };
    auto gen = at::make_generator<at::CPUGeneratorImpl>(3);
    const auto real = torch::randn({5, 3, 4, 4}, torch::kFloat64);
    const auto fake = torch::randn({5, 3, 4, 4}, torch::kFloat64);
    CHECK(std::abs(gradient_penalty(critic, real, fake, gen).item<double>()) < 1e-20);

    // Gradient norm 2 everywhere gives (2 - 1)^2 = 1.
    auto steep = [&](const torch::Tensor& x) { return torch::matmul(x.flatten(1), 2.0 * unit); };
    CHECK(gradient_penalty(steep, real, fake, gen).item<double>() == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("gradient penalty is differentiable") {
    auto w = torch::tensor({1.5, -0.5}, torch::kFloat64).requires_grad_(true);
    auto critic = [&](const torch::Tensor& x) { return torch::matmul(x.flatten(1), w); };
    auto gen = at::make_generator<at::CPUGeneratorImpl>(0);
    const auto real = torch::ones({2, 2}, torch::kFloat64);
    const auto gp = gradient_penalty(critic, real, -real, gen);
    const auto g = torch::autograd::grad({gp}, {w})[0];
    // d/dw (|w| - 1)^2 = 2 (|w| - 1) w / |w|
    const double n = std::sqrt(2.5);
    CHECK(g[0].item<double>() == doctest::Approx(2 * (n - 1) * 1.5 / n));
  }

  TEST_CASE("config json round trip and validation") {
    TrainConfig cfg;
    CHECK(cfg.loss == LossKind::kWganGp);
    CHECK(cfg.gp_weight == 10.0);
    CHECK(cfg.lr == 2e-4);
    CHECK(cfg.beta1 == 0.0);
    CHECK(cfg.beta2 == 0.99);
    CHECK(cfg.d_steps_per_g_step == 1);
    cfg.loss = LossKind::kNonSaturating;
    cfg.total_steps = 7;
    const auto back = train_config_from_json(train_config_to_json(cfg));
    CHECK(train_config_to_json(back) == train_config_to_json(cfg));
    CHECK_THROWS_AS(train_config_from_json({{"learning_rate", 1.0}}), ValidationError);
    CHECK_THROWS_AS(train_config_from_json({{"batch_size", 0}}), ValidationError);
    CHECK_THROWS_AS(train_config_from_json({{"gp_weight", -1.0}}), ValidationError);
    CHECK_THROWS_AS(train_config_from_json({{"loss", "hinge"}}), ValidationError);
  }

  TEST_CASE("zero steps returns the initial checkpoint") {
    Tiny t;
    TrainConfig cfg;
    cfg.total_steps = 0;
    cfg.seed = 4;
    auto result = train(random_store(4, 0), t.spec, t.prior, cfg);
    CHECK(result.log.records.empty());
    CHECK(result.checkpoint.step == 0);
    auto init = make_checkpoint(t.spec, t.prior, 4);
    CHECK(same_parameters(*result.checkpoint.generator, *init.generator));
    CHECK(same_parameters(*result.checkpoint.discriminator, *init.discriminator));
  }

  TEST_CASE("updates alternate between the networks") {
    Tiny t;
    TrainConfig cfg;
    cfg.total_steps = 3;
    cfg.d_steps_per_g_step = 2;
    cfg.batch_size = 4;
    double last_g = 0.0, last_d = 0.0;
    bool primed = false;
    std::vector<TrainHooks::Phase> phases;
    TrainOptions options;
    options.hooks.after_update = [&](TrainHooks::Phase phase, std::int64_t, const Checkpoint& ckpt) {
      const double g = fingerprint(*ckpt.generator);
      const double d = fingerprint(*ckpt.discriminator);
      if (primed) {
        if (phase == TrainHooks::Phase::kDiscriminator) {
          CHECK(g == last_g);
          CHECK(d != last_d);
        } else {
          CHECK(g != last_g);
          CHECK(d == last_d);
        }
      } else {
        CHECK(phase == TrainHooks::Phase::kDiscriminator);
        auto init = make_checkpoint(t.spec, t.prior, cfg.seed);
        CHECK(same_parameters(*ckpt.generator, *init.generator));
        CHECK_FALSE(same_parameters(*ckpt.discriminator, *init.discriminator));
      }
      primed = true;
      last_g = g;
      last_d = d;
      phases.push_back(phase);
    };
    const auto result = train(random_store(8, 1), t.spec, t.prior, cfg, options);
    using P = TrainHooks::Phase;
    CHECK((phases == std::vector<P>{P::kDiscriminator, P::kDiscriminator, P::kGenerator, P::kDiscriminator,
                                   P::kDiscriminator, P::kGenerator, P::kDiscriminator, P::kDiscriminator, P::kGenerator}));
    REQUIRE(result.log.records.size() == 3);
    for (const auto& r : result.log.records) {
      CHECK(std::isfinite(r.d_loss));
      CHECK(std::isfinite(r.g_loss));
      CHECK(r.gradient_penalty >= 0.0);
    }
  }

  TEST_CASE("seeded runs are bit-identical in deterministic mode") {
    configure_runtime(true);
    testing::TempDir dir("train_det");
    Tiny t;
    TrainConfig cfg;
    cfg.total_steps = 4;
    cfg.batch_size = 4;
    cfg.checkpoint_every = 2;
    cfg.seed = 9;
    const auto store = random_store(6, 2);
    for (const auto* run : {"a", "b"}) {
      TrainOptions options;
      options.out_dir = dir.file(run);
      train(store, t.spec, t.prior, cfg, options);
    }
    for (const auto* name : {"final.ckpt", "step_0000002.ckpt", "step_0000004.ckpt"}) {
      const auto a = file_bytes(dir.file(std::string("a/") + name));
      CHECK(!a.empty());
      CHECK(a == file_bytes(dir.file(std::string("b/") + name)));
    }
    std::ifstream log(dir.file("a/train_log.jsonl"));
    int lines = 0;
    for (std::string line; std::getline(log, line);) {
      const auto j = nlohmann::json::parse(line);
      CHECK(j.at("step").get<int>() == ++lines);
      CHECK(j.contains("d_loss"));
      CHECK(j.contains("gradient_penalty"));
      CHECK(j.contains("score_gap"));
      CHECK(j.contains("wall_seconds"));
    }
    CHECK(lines == 4);

    cfg.seed = 10;
    TrainOptions options;
    options.out_dir = dir.file("c");
    train(store, t.spec, t.prior, cfg, options);
    CHECK(file_bytes(dir.file("a/final.ckpt")) != file_bytes(dir.file("c/final.ckpt")));
  }

  TEST_CASE("non-finite data aborts with a diagnostic checkpoint") {
    testing::TempDir dir("train_nan");
    Tiny t;
    TrainConfig cfg;
    cfg.total_steps = 2;
    cfg.batch_size = 2;
    auto images = torch::zeros({2, 3, 32, 32});
    images[0][0][0][0] = std::numeric_limits<float>::quiet_NaN();
    TrainOptions options;
    options.out_dir = dir.path().string();
    CHECK_THROWS_AS(train(ImageStore(images), t.spec, t.prior, cfg, options), NumericalError);
    CHECK(std::filesystem::exists(dir.file("diverged.ckpt")));
  }

  TEST_CASE("bad inputs are rejected") {
    Tiny t;
    TrainConfig cfg;
    cfg.total_steps = 1;
    CHECK_THROWS_AS(train(ImageStore(), t.spec, t.prior, cfg), ValidationError);
    CHECK_THROWS_AS(train(ImageStore(torch::zeros({2, 3, 16, 16})), t.spec, t.prior, cfg), ValidationError);
  }

  TEST_CASE("a short run on a tiny dataset moves samples towards the data") {
    configure_runtime(true);
    testing::TempDir dir("train_overfit");
    write_synthetic_faces(dir.file("faces"), 16, 64, 3);
    const auto store = ingest(dir.file("faces"), 32).store;
    const auto layout = canonical_layout("facial_parts");
    const auto spec = testing::small_spec(layout, 16);
    const auto prior = default_prior_spec(layout, 8);

    // Mean over real images of the squared distance to the nearest of 64 samples.
    auto nearest_mse = [&](Generator& g) {
      std::vector<PartLatentBundle> bundles;
      for (std::uint64_t j = 0; j < 64; ++j) bundles.push_back(sample_bundle(prior, layout, 1000 + j));
      const auto samples = generate(g, bundles).flatten(1);
      const auto real = store.images().flatten(1);
      const auto d = (real.unsqueeze(1) - samples.unsqueeze(0)).pow(2).mean(2);
      return std::get<0>(d.min(1)).mean().item<double>();
    };
    auto init = make_checkpoint(spec, prior, 0);
    const double before = nearest_mse(init.generator);
    TrainConfig cfg;
    cfg.total_steps = 2000;
    auto result = train(store, spec, prior, cfg);
    const double after = nearest_mse(result.checkpoint.generator);
    MESSAGE("nearest-sample MSE " << before << " -> " << after);
    CHECK(after < before);
  }
}
