#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>
#include <torch/torch.h>

#include "puzzlegan/latent.hpp"
#include "puzzlegan/layout.hpp"

namespace puzzlegan {

// One spatial stage of the generator, as far as dependency structure goes.
// Pointwise stages (activations, pixel norm) never move information between
// pixels; they are listed so the plan mirrors the forward pass one to one.
struct LayerOp {
  enum class Kind { kConv, kUpsample2x, kPointwise };

  Kind kind = Kind::kPointwise;
  int kernel = 1;  // kConv only; SAME padding, stride 1

  static LayerOp conv(int k) { return {Kind::kConv, k}; }
  static LayerOp upsample() { return {Kind::kUpsample2x, 1}; }
  static LayerOp pointwise() { return {Kind::kPointwise, 1}; }
};

struct ModelSpec {
  PartLayout layout;
  std::int64_t head_channels = 128;  // c of the w x h x c first block
  std::int64_t out_resolution = 32;
  std::int64_t kernel_size = 3;
  double leaky_slope = 0.2;
  bool pixel_norm = true;
  std::int64_t rgb_channels = 3;

  // log2(out_resolution / grid_width)
  int up_blocks() const;

  // Throws ValidationError on an inconsistent spec (non-square grid,
  // resolution not grid * 2^n, even kernel, invalid layout, ...).
  void validate() const;

  // The generator's spatial stages from the assembled first block to RGB:
  // conv at grid scale, then per up block [upsample, conv, conv], then the
  // 1x1 RGB projection.
  std::vector<LayerOp> generator_plan() const;

  bool operator==(const ModelSpec&) const = default;
};

// Desk-scale defaults around the given layout.
ModelSpec default_model_spec(PartLayout layout);

// K latent tensors of shape [batch, d_i], index 0 is part 1.
using LatentBatch = std::vector<torch::Tensor>;

LatentBatch to_latent_batch(std::span<const PartLatentBundle> bundles);
LatentBatch sample_latent_batch(const PriorSpec& prior, std::int64_t batch, torch::Generator& gen);

class GeneratorImpl : public torch::nn::Module {
 public:
  GeneratorImpl(ModelSpec spec, PriorSpec prior);

  // Per-part affine heads scattered into the first block, [B, c, H, W].
  // Each head writes exactly the cells of its part, in part_cells order.
  torch::Tensor compose_head(const LatentBatch& z);

  // Images in [-1, 1], [B, rgb, R, R].
  torch::Tensor forward(const LatentBatch& z);

  const ModelSpec& spec() const { return spec_; }
  const PriorSpec& prior() const { return prior_; }
  torch::nn::Linear& head(PartId part) { return heads_.at(static_cast<std::size_t>(part - 1)); }

 private:
  torch::Tensor act(torch::Tensor x) const;

  ModelSpec spec_;
  PriorSpec prior_;
  std::vector<std::int64_t> cells_per_part_;
  std::vector<torch::nn::Linear> heads_;
  torch::Tensor scatter_index_;  // row-major cell -> row in the concatenated head output
  torch::nn::Conv2d grid_conv_{nullptr};
  std::vector<torch::nn::Conv2d> block_convs_;  // two per up block
  torch::nn::Conv2d to_rgb_{nullptr};
};
TORCH_MODULE(Generator);

class DiscriminatorImpl : public torch::nn::Module {
 public:
  explicit DiscriminatorImpl(ModelSpec spec);

  // Flattened activations feeding the final linear layer, [B, c * H * W].
  torch::Tensor features(const torch::Tensor& images);

  // Unbounded real score per image, [B].
  torch::Tensor forward(const torch::Tensor& images);

  const ModelSpec& spec() const { return spec_; }

 private:
  ModelSpec spec_;
  torch::nn::Conv2d from_rgb_{nullptr};
  std::vector<torch::nn::Conv2d> block_convs_;  // two per down block
  torch::nn::Conv2d grid_conv_{nullptr};
  torch::nn::Linear score_{nullptr};
};
TORCH_MODULE(Discriminator);

// He-style normal weights (gain for the leaky slope), zero biases.
void init_parameters(torch::nn::Module& module, double leaky_slope);

torch::Tensor compose_head(Generator& generator, const PartLatentBundle& bundle);

// Single image [rgb, R, R]; throws NumericalError on non-finite output.
torch::Tensor generate(Generator& generator, const PartLatentBundle& bundle);
// Batched rendering [B, rgb, R, R]; throws NumericalError on non-finite output.
torch::Tensor generate(Generator& generator, std::span<const PartLatentBundle> bundles);

// Scores for [B, rgb, R, R] (or a single [rgb, R, R]) image batch.
torch::Tensor discriminate(Discriminator& discriminator, const torch::Tensor& images);

struct Checkpoint {
  ModelSpec spec;
  PriorSpec prior;
  Generator generator{nullptr};
  Discriminator discriminator{nullptr};
  std::int64_t step = 0;
};

Checkpoint make_checkpoint(const ModelSpec& spec, const PriorSpec& prior, std::uint64_t seed);

// Versioned archive: header with spec, layout and prior, then every named
// parameter tensor as raw float32. Loading rebuilds the modules from the
// stored spec and rejects missing, extra or mis-shaped tensors.
void save_checkpoint(const std::string& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::string& path);

nlohmann::json model_spec_to_json(const ModelSpec& spec);
// Rejects unknown keys; missing keys keep their defaults.
ModelSpec model_spec_from_json(const nlohmann::json& j, PartLayout layout);
nlohmann::json prior_spec_to_json(const PriorSpec& prior);
PriorSpec prior_spec_from_json(const nlohmann::json& j);

}  // namespace puzzlegan
