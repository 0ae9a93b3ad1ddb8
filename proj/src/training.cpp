#include "puzzlegan/training.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>

#include <ATen/CPUGeneratorImpl.h>

#include "puzzlegan/errors.hpp"

namespace fs = std::filesystem;

namespace puzzlegan {

namespace {

std::string loss_name(LossKind kind) { return kind == LossKind::kWganGp ? "wgan_gp" : "nonsaturating"; }

void set_requires_grad(torch::nn::Module& module, bool on) {
  for (auto& p : module.parameters()) p.requires_grad_(on);
}

std::string step_path(const std::string& dir, std::int64_t step) {
  char name[40];
  std::snprintf(name, sizeof(name), "step_%07lld.ckpt", static_cast<long long>(step));
  return (fs::path(dir) / name).string();
}

}  // namespace

void TrainConfig::validate() const {
  if (batch_size < 1) throw ValidationError("batch_size must be >= 1");
  if (total_steps < 0) throw ValidationError("total_steps must be >= 0");
  if (d_steps_per_g_step < 1) throw ValidationError("d_steps_per_g_step must be >= 1");
  if (!(gp_weight >= 0.0)) throw ValidationError("gp_weight must be >= 0");
  if (!(lr > 0.0)) throw ValidationError("lr must be > 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) throw ValidationError("betas must be in [0, 1)");
  if (checkpoint_every < 0) throw ValidationError("checkpoint_every must be >= 0");
  if (log_every < 1) throw ValidationError("log_every must be >= 1");
}

nlohmann::json train_config_to_json(const TrainConfig& cfg) {
  return {
      {"loss", loss_name(cfg.loss)},
      {"gp_weight", cfg.gp_weight},
      {"batch_size", cfg.batch_size},
      {"total_steps", cfg.total_steps},
      {"d_steps_per_g_step", cfg.d_steps_per_g_step},
      {"lr", cfg.lr},
      {"beta1", cfg.beta1},
      {"beta2", cfg.beta2},
      {"checkpoint_every", cfg.checkpoint_every},
      {"log_every", cfg.log_every},
      {"seed", cfg.seed},
  };
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ValidationError("training config must be a JSON object");
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "loss") {
        const auto s = value.get<std::string>();
        if (s == "wgan_gp") cfg.loss = LossKind::kWganGp;
        else if (s == "nonsaturating") cfg.loss = LossKind::kNonSaturating;
        else throw ValidationError("unknown loss '" + s + "' (expected wgan_gp or nonsaturating)");
      } else if (key == "gp_weight") cfg.gp_weight = value.get<double>();
      else if (key == "batch_size") cfg.batch_size = value.get<std::int64_t>();
      else if (key == "total_steps") cfg.total_steps = value.get<std::int64_t>();
      else if (key == "d_steps_per_g_step") cfg.d_steps_per_g_step = value.get<std::int64_t>();
      else if (key == "lr") cfg.lr = value.get<double>();
      else if (key == "beta1") cfg.beta1 = value.get<double>();
      else if (key == "beta2") cfg.beta2 = value.get<double>();
      else if (key == "checkpoint_every") cfg.checkpoint_every = value.get<std::int64_t>();
      else if (key == "log_every") cfg.log_every = value.get<std::int64_t>();
      else if (key == "seed") cfg.seed = value.get<std::uint64_t>();
      else throw ValidationError("unknown training key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("training key '" + key + "': " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

nlohmann::json to_json(const TrainRecord& r) {
  return {{"step", r.step},
          {"d_loss", r.d_loss},
          {"g_loss", r.g_loss},
          {"gradient_penalty", r.gradient_penalty},
          {"score_gap", r.score_gap},
          {"wall_seconds", r.wall_seconds}};
}

torch::Tensor loss_d(LossKind kind, const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                     const torch::Tensor& gp_term, double gp_weight) {
  if (kind == LossKind::kNonSaturating) {
    // -log s(x) = softplus(-x); -log(1 - s(x)) = softplus(x)
    return torch::softplus(-real_scores).mean() + torch::softplus(fake_scores).mean();
  }
  auto loss = fake_scores.mean() - real_scores.mean();
  if (gp_term.defined()) loss = loss + gp_weight * gp_term;
  return loss;
}

torch::Tensor loss_g(LossKind kind, const torch::Tensor& fake_scores) {
  if (kind == LossKind::kNonSaturating) return torch::softplus(-fake_scores).mean();
  return -fake_scores.mean();
}

torch::Tensor gradient_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                               const torch::Tensor& real, const torch::Tensor& fake, torch::Generator& gen) {
  if (real.sizes() != fake.sizes()) throw ValidationError("gradient penalty needs paired real/fake batches");
  std::vector<std::int64_t> eps_shape(static_cast<std::size_t>(real.dim()), 1);
  eps_shape[0] = real.size(0);
  const auto eps = torch::rand(eps_shape, gen, real.options());
  auto mixed = (eps * real.detach() + (1.0 - eps) * fake.detach()).requires_grad_(true);
  const auto scores = critic(mixed);
  const auto grads = torch::autograd::grad({scores.sum()}, {mixed}, /*grad_outputs=*/{},
                                           /*retain_graph=*/true, /*create_graph=*/true)[0];
  const auto norms = grads.flatten(1).norm(2, 1);
  return (norms - 1.0).pow(2).mean();
}

TrainResult train(const ImageStore& dataset, const ModelSpec& spec, const PriorSpec& prior, const TrainConfig& cfg,
                  const TrainOptions& options) {
  cfg.validate();
  spec.validate();
  if (dataset.count() < 1) throw ValidationError("cannot train on an empty dataset");
  if (dataset.resolution() != spec.out_resolution || dataset.channels() != spec.rgb_channels) {
    throw ValidationError("dataset images are " + std::to_string(dataset.channels()) + "x" +
                          std::to_string(dataset.resolution()) + "^2, model produces " +
                          std::to_string(spec.rgb_channels) + "x" + std::to_string(spec.out_resolution) + "^2");
  }
  const std::int64_t batch_size = std::min(cfg.batch_size, dataset.count());

  TrainResult result;
  result.checkpoint = make_checkpoint(spec, prior, cfg.seed);
  auto& ckpt = result.checkpoint;
  auto& gen_net = ckpt.generator;
  auto& disc_net = ckpt.discriminator;

  std::ofstream log_file;
  if (!options.out_dir.empty()) {
    fs::create_directories(options.out_dir);
    log_file.open((fs::path(options.out_dir) / "train_log.jsonl").string(), std::ios::trunc);
    if (!log_file) throw ValidationError("cannot write training log in " + options.out_dir);
  }

  auto rng = at::make_generator<at::CPUGeneratorImpl>(mix_seed(cfg.seed, 1));
  BatchIterator batches(dataset, batch_size, mix_seed(cfg.seed, 2));

  torch::optim::Adam opt_g(gen_net->parameters(),
                           torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).eps(1e-8));
  torch::optim::Adam opt_d(disc_net->parameters(),
                           torch::optim::AdamOptions(cfg.lr).betas({cfg.beta1, cfg.beta2}).eps(1e-8));

  const auto critic = [&](const torch::Tensor& x) { return disc_net->forward(x); };
  const auto start = std::chrono::steady_clock::now();

  auto diverge = [&](std::int64_t step, const std::string& what) {
    if (!options.out_dir.empty()) {
      ckpt.step = step;
      save_checkpoint((fs::path(options.out_dir) / "diverged.ckpt").string(), ckpt);
    }
    throw NumericalError("non-finite " + what + " at step " + std::to_string(step));
  };

  for (std::int64_t step = 1; step <= cfg.total_steps; ++step) {
    TrainRecord record;
    record.step = step;

    set_requires_grad(*disc_net, true);
    for (std::int64_t k = 0; k < cfg.d_steps_per_g_step; ++k) {
      const auto real = batches.next();
      torch::Tensor fake;
      {
        torch::NoGradGuard no_grad;
        fake = gen_net->forward(sample_latent_batch(prior, real.size(0), rng));
      }
      const auto real_scores = disc_net->forward(real);
      const auto fake_scores = disc_net->forward(fake);
      torch::Tensor gp;
      if (cfg.loss == LossKind::kWganGp && cfg.gp_weight > 0.0) gp = gradient_penalty(critic, real, fake, rng);
      const auto loss = loss_d(cfg.loss, real_scores, fake_scores, gp, cfg.gp_weight);

      record.d_loss = loss.item<double>();
      record.gradient_penalty = gp.defined() ? gp.item<double>() : 0.0;
      record.score_gap = (real_scores.mean() - fake_scores.mean()).item<double>();
      if (!std::isfinite(record.d_loss)) diverge(step, "discriminator loss");

      opt_d.zero_grad();
      loss.backward();
      opt_d.step();
      if (options.hooks.after_update) options.hooks.after_update(TrainHooks::Phase::kDiscriminator, step, ckpt);
    }

    set_requires_grad(*disc_net, false);
    {
      const auto fake = gen_net->forward(sample_latent_batch(prior, batch_size, rng));
      const auto loss = loss_g(cfg.loss, disc_net->forward(fake));
      record.g_loss = loss.item<double>();
      if (!std::isfinite(record.g_loss)) diverge(step, "generator loss");
      opt_g.zero_grad();
      loss.backward();
      opt_g.step();
    }
    set_requires_grad(*disc_net, true);
    if (options.hooks.after_update) options.hooks.after_update(TrainHooks::Phase::kGenerator, step, ckpt);

    ckpt.step = step;
    if (step % cfg.log_every == 0 || step == cfg.total_steps) {
      record.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
      result.log.records.push_back(record);
      if (log_file) log_file << to_json(record).dump() << "\n" << std::flush;
      if (options.hooks.on_record) options.hooks.on_record(record);
    }
    if (!options.out_dir.empty() && cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0) {
      save_checkpoint(step_path(options.out_dir, step), ckpt);
    }
  }

  if (!options.out_dir.empty()) save_checkpoint((fs::path(options.out_dir) / "final.ckpt").string(), ckpt);
  return result;
}

}  // namespace puzzlegan
