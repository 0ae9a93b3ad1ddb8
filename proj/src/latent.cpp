#include "puzzlegan/latent.hpp"

#include <cmath>
#include <fstream>
#include <numeric>
#include <random>

#include "binary_io.hpp"
#include "puzzlegan/errors.hpp"

namespace puzzlegan {

namespace {

constexpr std::string_view kBundleMagic = "PZGBNDL";
constexpr std::uint32_t kBundleVersion = 1;

std::vector<float> draw(PriorFamily family, std::int64_t dim, std::mt19937_64& rng) {
  std::vector<float> v(static_cast<std::size_t>(dim));
  switch (family) {
    case PriorFamily::kStandardNormal: {
      std::normal_distribution<float> normal(0.0f, 1.0f);
      for (auto& x : v) x = normal(rng);
      break;
    }
  }
  return v;
}

}  // namespace

std::int64_t PriorSpec::total_dim() const {
  return std::accumulate(dims.begin(), dims.end(), std::int64_t{0});
}

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

PriorSpec default_prior_spec(const PartLayout& layout, int scale) {
  if (scale < 1) throw ValidationError("latent scale must be >= 1, got " + std::to_string(scale));
  PriorSpec spec;
  for (PartId p = 1; p <= layout.num_parts(); ++p) {
    spec.dims.push_back(static_cast<std::int64_t>(scale) *
                        static_cast<std::int64_t>(part_cells(layout, p).size()));
  }
  return spec;
}

void check_prior_spec(const PriorSpec& spec, const PartLayout& layout) {
  if (static_cast<int>(spec.dims.size()) != layout.num_parts()) {
    throw ValidationError("prior has " + std::to_string(spec.dims.size()) + " parts, layout has " +
                          std::to_string(layout.num_parts()));
  }
  for (std::size_t i = 0; i < spec.dims.size(); ++i) {
    if (spec.dims[i] < 1) {
      throw ValidationError("prior dimension of part " + std::to_string(i + 1) + " must be >= 1");
    }
  }
}

PartLatentBundle sample_bundle(const PriorSpec& spec, const PartLayout& layout, std::uint64_t seed) {
  check_prior_spec(spec, layout);
  std::mt19937_64 rng(seed);
  PartLatentBundle bundle;
  bundle.layout_id = layout_fingerprint(layout);
  bundle.seed = seed;
  for (const auto d : spec.dims) bundle.vectors.push_back(draw(spec.distribution, d, rng));
  return bundle;
}

PartLatentBundle resample_part(const PartLatentBundle& bundle, const PriorSpec& spec, PartId part,
                               std::uint64_t seed) {
  if (part < 1 || part > bundle.num_parts()) {
    throw ValidationError("part id " + std::to_string(part) + " out of range 1.." +
                          std::to_string(bundle.num_parts()));
  }
  std::mt19937_64 rng(seed);
  PartLatentBundle out = bundle;
  out.vectors[part - 1] = draw(spec.distribution, spec.dims.at(part - 1), rng);
  return out;
}

PartLatentBundle mix(const PartLatentBundle& target, const PartLatentBundle& reference,
                     const std::set<PartId>& parts) {
  if (target.layout_id != reference.layout_id || target.num_parts() != reference.num_parts()) {
    throw ValidationError("cannot mix bundles sampled for different layouts");
  }
  for (int i = 0; i < target.num_parts(); ++i) {
    if (target.vectors[i].size() != reference.vectors[i].size()) {
      throw ValidationError("cannot mix bundles with different prior dimensions (part " +
                            std::to_string(i + 1) + ")");
    }
  }
  for (const PartId p : parts) {
    if (p < 1 || p > target.num_parts()) {
      throw ValidationError("part id " + std::to_string(p) + " out of range 1.." +
                            std::to_string(target.num_parts()));
    }
  }
  PartLatentBundle out = target;
  for (const PartId p : parts) out.vectors[p - 1] = reference.vectors[p - 1];
  // Seed provenance follows the target unless every part came from the reference.
  if (static_cast<int>(parts.size()) == target.num_parts()) out.seed = reference.seed;
  return out;
}

bool is_finite(const PartLatentBundle& bundle) {
  for (const auto& v : bundle.vectors)
    for (const float x : v)
      if (!std::isfinite(x)) return false;
  return true;
}

void write_bundle(std::ostream& out, const PartLatentBundle& bundle) {
  out.write(kBundleMagic.data(), static_cast<std::streamsize>(kBundleMagic.size()));
  detail::put<std::uint32_t>(out, kBundleVersion);
  detail::put<std::uint64_t>(out, bundle.layout_id);
  detail::put<std::uint8_t>(out, bundle.seed.has_value() ? 1 : 0);
  detail::put<std::uint64_t>(out, bundle.seed.value_or(0));
  detail::put<std::uint32_t>(out, static_cast<std::uint32_t>(bundle.vectors.size()));
  for (const auto& v : bundle.vectors) {
    detail::put<std::uint64_t>(out, v.size());
    detail::put_span<float>(out, v);
  }
}

PartLatentBundle read_bundle(std::istream& in) {
  detail::expect_magic(in, kBundleMagic, "bundle file");
  const auto version = detail::get<std::uint32_t>(in, "bundle header");
  if (version != kBundleVersion) {
    throw ValidationError("unsupported bundle version " + std::to_string(version));
  }
  PartLatentBundle bundle;
  bundle.layout_id = detail::get<std::uint64_t>(in, "bundle header");
  const auto has_seed = detail::get<std::uint8_t>(in, "bundle header");
  const auto seed = detail::get<std::uint64_t>(in, "bundle header");
  if (has_seed) bundle.seed = seed;
  const auto k = detail::get<std::uint32_t>(in, "bundle header");
  bundle.vectors.resize(k);
  for (auto& v : bundle.vectors) {
    const auto d = detail::get<std::uint64_t>(in, "bundle vector");
    if (d > (1u << 26)) throw ValidationError("corrupt bundle: vector too long");
    v.resize(d);
    detail::get_span<float>(in, v, "bundle vector");
  }
  return bundle;
}

void write_bundle_file(const std::string& path, const PartLatentBundle& bundle) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write bundle file " + path);
  write_bundle(out, bundle);
}

PartLatentBundle read_bundle_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open bundle file " + path);
  return read_bundle(in);
}

}  // namespace puzzlegan
