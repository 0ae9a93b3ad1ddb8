#include "puzzlegan/model.hpp"

#include <bit>
#include <cmath>
#include <fstream>
#include <map>

#include "binary_io.hpp"
#include "puzzlegan/errors.hpp"

namespace puzzlegan {

namespace {

constexpr std::string_view kCheckpointMagic = "PZGCKPT";
constexpr std::uint32_t kCheckpointVersion = 1;

torch::nn::Conv2d same_conv(std::int64_t in, std::int64_t out, std::int64_t k) {
  return torch::nn::Conv2d(torch::nn::Conv2dOptions(in, out, k).stride(1).padding(k / 2));
}

// Normalizes each pixel's feature vector to unit RMS across channels.
torch::Tensor pixel_norm(const torch::Tensor& x) {
  return x * torch::rsqrt(x.pow(2).mean(1, /*keepdim=*/true) + 1e-8);
}

std::int64_t grid_size(const ModelSpec& spec) { return spec.layout.grid_width(); }

}  // namespace

int ModelSpec::up_blocks() const {
  const auto g = layout.grid_width();
  if (g < 1 || out_resolution < g || out_resolution % g != 0) return -1;
  const auto ratio = static_cast<std::uint64_t>(out_resolution / g);
  if (!std::has_single_bit(ratio)) return -1;
  return std::countr_zero(ratio);
}

void ModelSpec::validate() const {
  const auto report = validate_layout(layout);
  if (!report.ok()) {
    throw ValidationError("model layout is invalid: " + report.violations.front().message);
  }
  if (layout.grid_height() != layout.grid_width()) {
    throw ValidationError("only square grids are supported (got " + std::to_string(layout.grid_height()) +
                          "x" + std::to_string(layout.grid_width()) + ")");
  }
  if (layout.num_parts() > 64) throw ValidationError("at most 64 parts are supported");
  if (head_channels < 1) throw ValidationError("head_channels must be >= 1");
  if (kernel_size < 1 || kernel_size % 2 == 0) throw ValidationError("kernel_size must be odd and positive");
  if (rgb_channels < 1) throw ValidationError("rgb_channels must be >= 1");
  if (!(leaky_slope >= 0.0 && leaky_slope < 1.0)) throw ValidationError("leaky_slope must be in [0, 1)");
  if (up_blocks() < 0) {
    throw ValidationError("out_resolution " + std::to_string(out_resolution) +
                          " is not grid_width * 2^n for grid_width " + std::to_string(layout.grid_width()));
  }
}

std::vector<LayerOp> ModelSpec::generator_plan() const {
  const int k = static_cast<int>(kernel_size);
  std::vector<LayerOp> plan{LayerOp::pointwise(), LayerOp::conv(k), LayerOp::pointwise()};
  for (int b = 0; b < up_blocks(); ++b) {
    plan.push_back(LayerOp::upsample());
    plan.push_back(LayerOp::conv(k));
    plan.push_back(LayerOp::pointwise());
    plan.push_back(LayerOp::conv(k));
    plan.push_back(LayerOp::pointwise());
  }
  plan.push_back(LayerOp::conv(1));
  plan.push_back(LayerOp::pointwise());
  return plan;
}

ModelSpec default_model_spec(PartLayout layout) {
  ModelSpec spec;
  spec.layout = std::move(layout);
  return spec;
}

LatentBatch to_latent_batch(std::span<const PartLatentBundle> bundles) {
  if (bundles.empty()) throw ValidationError("empty bundle batch");
  const int k = bundles.front().num_parts();
  LatentBatch batch;
  for (int i = 0; i < k; ++i) {
    const auto d = static_cast<std::int64_t>(bundles.front().vectors[i].size());
    auto t = torch::empty({static_cast<std::int64_t>(bundles.size()), d});
    auto acc = t.accessor<float, 2>();
    for (std::size_t b = 0; b < bundles.size(); ++b) {
      const auto& v = bundles[b].vectors.at(i);
      if (bundles[b].num_parts() != k || static_cast<std::int64_t>(v.size()) != d) {
        throw ValidationError("bundles in a batch must share part count and dimensions");
      }
      for (std::int64_t j = 0; j < d; ++j) acc[static_cast<std::int64_t>(b)][j] = v[j];
    }
    batch.push_back(std::move(t));
  }
  return batch;
}

LatentBatch sample_latent_batch(const PriorSpec& prior, std::int64_t batch, torch::Generator& gen) {
  LatentBatch z;
  for (const auto d : prior.dims) z.push_back(torch::randn({batch, d}, gen));
  return z;
}

void init_parameters(torch::nn::Module& module, double leaky_slope) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters()) {
    if (item.key().ends_with("bias")) {
      item.value().zero_();
    } else {
      torch::nn::init::kaiming_normal_(item.value(), leaky_slope, torch::kFanIn, torch::kLeakyReLU);
    }
  }
}

GeneratorImpl::GeneratorImpl(ModelSpec spec, PriorSpec prior)
    : spec_(std::move(spec)), prior_(std::move(prior)) {
  spec_.validate();
  check_prior_spec(prior_, spec_.layout);
  const auto c = spec_.head_channels;
  const auto g = grid_size(spec_);

  // Concatenated head outputs are ordered part by part, cells in part_cells
  // order; scatter_index_ maps each row-major grid cell back into that order.
  std::vector<std::int64_t> index(static_cast<std::size_t>(g * g), -1);
  std::int64_t offset = 0;
  for (PartId p = 1; p <= spec_.layout.num_parts(); ++p) {
    const auto cells = part_cells(spec_.layout, p);
    cells_per_part_.push_back(static_cast<std::int64_t>(cells.size()));
    for (const auto& cell : cells) index[static_cast<std::size_t>(cell.row * g + cell.col)] = offset++;
    heads_.push_back(register_module(
        "head" + std::to_string(p),
        torch::nn::Linear(prior_.dims[p - 1], static_cast<std::int64_t>(cells.size()) * c)));
  }
  scatter_index_ = register_buffer("scatter_index", torch::tensor(index, torch::kLong));

  grid_conv_ = register_module("grid_conv", same_conv(c, c, spec_.kernel_size));
  for (int b = 0; b < spec_.up_blocks(); ++b) {
    for (int j = 0; j < 2; ++j) {
      block_convs_.push_back(register_module("up" + std::to_string(b) + "_conv" + std::to_string(j),
                                             same_conv(c, c, spec_.kernel_size)));
    }
  }
  to_rgb_ = register_module("to_rgb", same_conv(c, spec_.rgb_channels, 1));
  init_parameters(*this, spec_.leaky_slope);
}

torch::Tensor GeneratorImpl::act(torch::Tensor x) const {
  x = torch::leaky_relu(x, spec_.leaky_slope);
  return spec_.pixel_norm ? pixel_norm(x) : x;
}

torch::Tensor GeneratorImpl::compose_head(const LatentBatch& z) {
  const auto k = static_cast<std::size_t>(spec_.layout.num_parts());
  if (z.size() != k) {
    throw ValidationError("latent batch has " + std::to_string(z.size()) + " parts, model expects " +
                          std::to_string(k));
  }
  const auto batch = z.front().size(0);
  const auto c = spec_.head_channels;
  const auto g = grid_size(spec_);
  std::vector<torch::Tensor> volumes;
  volumes.reserve(k);
  for (std::size_t i = 0; i < k; ++i) {
    if (z[i].dim() != 2 || z[i].size(0) != batch || z[i].size(1) != prior_.dims[i]) {
      throw ValidationError("latent for part " + std::to_string(i + 1) + " has shape " +
                            c10::str(z[i].sizes()) + ", expected [" + std::to_string(batch) + ", " +
                            std::to_string(prior_.dims[i]) + "]");
    }
    volumes.push_back(heads_[i]->forward(z[i]).view({batch, cells_per_part_[i], c}));
  }
  auto cells = torch::cat(volumes, 1).index_select(1, scatter_index_);  // [B, H*W, c]
  return cells.permute({0, 2, 1}).reshape({batch, c, g, g});
}

torch::Tensor GeneratorImpl::forward(const LatentBatch& z) {
  auto x = act(compose_head(z));
  x = act(grid_conv_->forward(x));
  for (int b = 0; b < spec_.up_blocks(); ++b) {
    x = torch::upsample_nearest2d(x, std::vector<std::int64_t>{x.size(2) * 2, x.size(3) * 2});
    x = act(block_convs_[2 * b]->forward(x));
    x = act(block_convs_[2 * b + 1]->forward(x));
  }
  return torch::tanh(to_rgb_->forward(x));
}

DiscriminatorImpl::DiscriminatorImpl(ModelSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  const auto c = spec_.head_channels;
  const auto g = grid_size(spec_);
  from_rgb_ = register_module("from_rgb", same_conv(spec_.rgb_channels, c, 1));
  for (int b = 0; b < spec_.up_blocks(); ++b) {
    for (int j = 0; j < 2; ++j) {
      block_convs_.push_back(register_module("down" + std::to_string(b) + "_conv" + std::to_string(j),
                                             same_conv(c, c, spec_.kernel_size)));
    }
  }
  grid_conv_ = register_module("grid_conv", same_conv(c, c, spec_.kernel_size));
  score_ = register_module("score", torch::nn::Linear(c * g * g, 1));
  init_parameters(*this, spec_.leaky_slope);
}

torch::Tensor DiscriminatorImpl::features(const torch::Tensor& images) {
  const auto r = spec_.out_resolution;
  if (images.dim() != 4 || images.size(1) != spec_.rgb_channels || images.size(2) != r ||
      images.size(3) != r) {
    throw ValidationError("discriminator input has shape " + c10::str(images.sizes()) + ", expected [B, " +
                          std::to_string(spec_.rgb_channels) + ", " + std::to_string(r) + ", " +
                          std::to_string(r) + "]");
  }
  const double slope = spec_.leaky_slope;
  auto x = torch::leaky_relu(from_rgb_->forward(images), slope);
  for (int b = 0; b < spec_.up_blocks(); ++b) {
    x = torch::leaky_relu(block_convs_[2 * b]->forward(x), slope);
    x = torch::leaky_relu(block_convs_[2 * b + 1]->forward(x), slope);
    x = torch::avg_pool2d(x, 2);
  }
  x = torch::leaky_relu(grid_conv_->forward(x), slope);
  return x.flatten(1);
}

torch::Tensor DiscriminatorImpl::forward(const torch::Tensor& images) {
  return score_->forward(features(images)).squeeze(1);
}

torch::Tensor compose_head(Generator& generator, const PartLatentBundle& bundle) {
  torch::NoGradGuard no_grad;
  return generator->compose_head(to_latent_batch(std::span(&bundle, 1))).squeeze(0);
}

torch::Tensor generate(Generator& generator, std::span<const PartLatentBundle> bundles) {
  torch::NoGradGuard no_grad;
  const auto expected = layout_fingerprint(generator->spec().layout);
  for (const auto& b : bundles) {
    if (b.layout_id != expected) throw ValidationError("bundle was sampled for a different layout");
  }
  auto images = generator->forward(to_latent_batch(bundles));
  if (!torch::isfinite(images).all().item<bool>()) {
    throw NumericalError("generator produced non-finite pixels");
  }
  return images;
}

torch::Tensor generate(Generator& generator, const PartLatentBundle& bundle) {
  return generate(generator, std::span(&bundle, 1)).squeeze(0);
}

torch::Tensor discriminate(Discriminator& discriminator, const torch::Tensor& images) {
  torch::NoGradGuard no_grad;
  return discriminator->forward(images.dim() == 3 ? images.unsqueeze(0) : images);
}

Checkpoint make_checkpoint(const ModelSpec& spec, const PriorSpec& prior, std::uint64_t seed) {
  torch::manual_seed(seed);
  Checkpoint ckpt;
  ckpt.spec = spec;
  ckpt.prior = prior;
  ckpt.generator = Generator(spec, prior);
  ckpt.discriminator = Discriminator(spec);
  return ckpt;
}

nlohmann::json model_spec_to_json(const ModelSpec& spec) {
  return {
      {"head_channels", spec.head_channels}, {"out_resolution", spec.out_resolution},
      {"kernel_size", spec.kernel_size},     {"leaky_slope", spec.leaky_slope},
      {"pixel_norm", spec.pixel_norm},       {"rgb_channels", spec.rgb_channels},
  };
}

ModelSpec model_spec_from_json(const nlohmann::json& j, PartLayout layout) {
  if (!j.is_object()) throw ValidationError("model spec must be a JSON object");
  ModelSpec spec;
  spec.layout = std::move(layout);
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "head_channels") spec.head_channels = value.get<std::int64_t>();
      else if (key == "out_resolution") spec.out_resolution = value.get<std::int64_t>();
      else if (key == "kernel_size") spec.kernel_size = value.get<std::int64_t>();
      else if (key == "leaky_slope") spec.leaky_slope = value.get<double>();
      else if (key == "pixel_norm") spec.pixel_norm = value.get<bool>();
      else if (key == "rgb_channels") spec.rgb_channels = value.get<std::int64_t>();
      else throw ValidationError("unknown model key '" + key + "'");
    } catch (const nlohmann::json::exception& e) {
      throw ValidationError("model key '" + key + "': " + e.what());
    }
  }
  spec.validate();
  return spec;
}

nlohmann::json prior_spec_to_json(const PriorSpec& prior) {
  return {{"dims", prior.dims}, {"distribution", "standard_normal"}};
}

PriorSpec prior_spec_from_json(const nlohmann::json& j) {
  PriorSpec prior;
  for (const auto& [key, value] : j.items()) {
    if (key == "dims") {
      prior.dims = value.get<std::vector<std::int64_t>>();
    } else if (key == "distribution") {
      if (value.get<std::string>() != "standard_normal") {
        throw ValidationError("unsupported prior distribution '" + value.get<std::string>() + "'");
      }
    } else {
      throw ValidationError("unknown prior key '" + key + "'");
    }
  }
  return prior;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write checkpoint " + path);

  const nlohmann::json header = {
      {"model", model_spec_to_json(ckpt.spec)},
      {"layout", serialize_layout(ckpt.spec.layout)},
      {"prior", prior_spec_to_json(ckpt.prior)},
      {"step", ckpt.step},
  };
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  detail::put<std::uint32_t>(out, kCheckpointVersion);
  detail::put_string(out, header.dump());

  std::vector<std::pair<std::string, torch::Tensor>> tensors;
  for (const auto& item : ckpt.generator->named_parameters()) tensors.emplace_back("generator." + item.key(), item.value());
  for (const auto& item : ckpt.discriminator->named_parameters())
    tensors.emplace_back("discriminator." + item.key(), item.value());

  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    const auto data = t.detach().to(torch::kFloat32).contiguous();
    detail::put_string(out, name);
    detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(data.dim()));
    for (const auto s : data.sizes()) detail::put<std::int64_t>(out, s);
    detail::put_span<float>(out, std::span(data.data_ptr<float>(), static_cast<std::size_t>(data.numel())));
  }
  if (!out) throw ValidationError("failed writing checkpoint " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open checkpoint " + path);
  detail::expect_magic(in, kCheckpointMagic, "checkpoint");
  const auto version = detail::get<std::uint32_t>(in, "checkpoint header");
  if (version != kCheckpointVersion) throw ValidationError("unsupported checkpoint version " + std::to_string(version));

  nlohmann::json header;
  try {
    header = nlohmann::json::parse(detail::get_string(in, "checkpoint header"));
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("corrupt checkpoint header: ") + e.what());
  }
  const auto layout = parse_layout(header.at("layout").get<std::string>());
  Checkpoint ckpt;
  ckpt.spec = model_spec_from_json(header.at("model"), layout);
  ckpt.prior = prior_spec_from_json(header.at("prior"));
  ckpt.step = header.at("step").get<std::int64_t>();
  ckpt.generator = Generator(ckpt.spec, ckpt.prior);
  ckpt.discriminator = Discriminator(ckpt.spec);

  std::map<std::string, torch::Tensor> params;
  for (const auto& item : ckpt.generator->named_parameters()) params.emplace("generator." + item.key(), item.value());
  for (const auto& item : ckpt.discriminator->named_parameters())
    params.emplace("discriminator." + item.key(), item.value());

  const auto count = detail::get<std::uint32_t>(in, "checkpoint tensor table");
  if (count != params.size()) {
    throw ValidationError("checkpoint holds " + std::to_string(count) + " tensors, spec needs " +
                          std::to_string(params.size()));
  }
  torch::NoGradGuard no_grad;
  std::map<std::string, bool> seen;
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name = detail::get_string(in, "checkpoint tensor name", 4096);
    const auto it = params.find(name);
    if (it == params.end()) throw ValidationError("checkpoint has unexpected tensor '" + name + "'");
    if (seen[name]) throw ValidationError("checkpoint repeats tensor '" + name + "'");
    seen[name] = true;
    const auto ndim = detail::get<std::uint32_t>(in, "checkpoint tensor shape");
    if (ndim > 8) throw ValidationError("corrupt checkpoint tensor '" + name + "'");
    std::vector<std::int64_t> shape(ndim);
    for (auto& s : shape) s = detail::get<std::int64_t>(in, "checkpoint tensor shape");
    if (it->second.sizes() != c10::IntArrayRef(shape)) {
      throw ValidationError("checkpoint tensor '" + name + "' has shape " + c10::str(c10::IntArrayRef(shape)) +
                            ", spec expects " + c10::str(it->second.sizes()));
    }
    auto buffer = torch::empty(shape, torch::kFloat32);
    detail::get_span<float>(in, std::span(buffer.data_ptr<float>(), static_cast<std::size_t>(buffer.numel())),
                            "checkpoint tensor data");
    it->second.copy_(buffer);
  }
  return ckpt;
}

}  // namespace puzzlegan
