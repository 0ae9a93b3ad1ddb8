#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "puzzlegan/dataio.hpp"
#include "puzzlegan/model.hpp"

namespace puzzlegan {

enum class LossKind { kNonSaturating, kWganGp };

struct TrainConfig {
  LossKind loss = LossKind::kWganGp;
  double gp_weight = 10.0;
  std::int64_t batch_size = 16;
  std::int64_t total_steps = 10000;  // generator updates
  std::int64_t d_steps_per_g_step = 1;
  double lr = 2e-4;
  double beta1 = 0.0;
  double beta2 = 0.99;
  std::int64_t checkpoint_every = 0;  // 0: final checkpoint only
  std::int64_t log_every = 1;
  std::uint64_t seed = 0;

  void validate() const;
};

nlohmann::json train_config_to_json(const TrainConfig& cfg);
// Unknown keys are rejected; missing keys keep their defaults.
TrainConfig train_config_from_json(const nlohmann::json& j);

struct TrainRecord {
  std::int64_t step = 0;
  double d_loss = 0.0;
  double g_loss = 0.0;
  double gradient_penalty = 0.0;
  double score_gap = 0.0;  // mean D(real) - mean D(fake)
  double wall_seconds = 0.0;
};

struct TrainLog {
  std::vector<TrainRecord> records;
};

nlohmann::json to_json(const TrainRecord& record);

// Discriminator losses. Non-saturating: -mean log s(real) - mean log(1 - s(fake));
// WGAN-GP: mean(fake) - mean(real) + gp_weight * gp_term.
torch::Tensor loss_d(LossKind kind, const torch::Tensor& real_scores, const torch::Tensor& fake_scores,
                     const torch::Tensor& gp_term, double gp_weight);
// Generator losses. Non-saturating: -mean log s(fake); WGAN-GP: -mean(fake).
torch::Tensor loss_g(LossKind kind, const torch::Tensor& fake_scores);

// mean over the batch of (||grad_x critic(x_hat)||_2 - 1)^2 with x_hat drawn
// uniformly on the segment between paired real and fake samples. The
// result stays attached to the graph so it can be differentiated again.
torch::Tensor gradient_penalty(const std::function<torch::Tensor(const torch::Tensor&)>& critic,
                               const torch::Tensor& real, const torch::Tensor& fake, torch::Generator& gen);

struct TrainHooks {
  enum class Phase { kDiscriminator, kGenerator };
  // Called after every optimizer step.
  std::function<void(Phase, std::int64_t step, const Checkpoint&)> after_update;
  // Called for every logged record.
  std::function<void(const TrainRecord&)> on_record;
};

struct TrainOptions {
  std::string out_dir;  // checkpoints and the line-delimited log; empty keeps everything in memory
  TrainHooks hooks;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainLog log;
};

// Alternates d_steps_per_g_step discriminator updates with one generator
// update for total_steps rounds. Reproducible given cfg.seed when running
// in deterministic mode. A non-finite loss aborts with a diagnostic
// checkpoint ("diverged.ckpt") and NumericalError.
TrainResult train(const ImageStore& dataset, const ModelSpec& spec, const PriorSpec& prior, const TrainConfig& cfg,
                  const TrainOptions& options = {});

}  // namespace puzzlegan
