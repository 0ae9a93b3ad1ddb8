#pragma once

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "puzzlegan/layout.hpp"

namespace puzzlegan {

enum class PriorFamily { kStandardNormal };

struct PriorSpec {
  std::vector<std::int64_t> dims;  // d_i per part, index 0 is part 1
  PriorFamily distribution = PriorFamily::kStandardNormal;

  std::int64_t total_dim() const;
  bool operator==(const PriorSpec&) const = default;
};

// One latent sample: a vector z_i per part.
struct PartLatentBundle {
  std::vector<std::vector<float>> vectors;
  std::uint64_t layout_id = 0;
  std::optional<std::uint64_t> seed;

  int num_parts() const { return static_cast<int>(vectors.size()); }
  const std::vector<float>& part(PartId id) const { return vectors.at(static_cast<std::size_t>(id - 1)); }

  bool operator==(const PartLatentBundle&) const = default;
};

// Latent capacity proportional to area: d_i = scale * |cells_i|.
PriorSpec default_prior_spec(const PartLayout& layout, int scale);

// Throws ValidationError when the spec does not fit the layout.
void check_prior_spec(const PriorSpec& spec, const PartLayout& layout);

// Draws each part vector i.i.d. from the prior. Deterministic in `seed`.
PartLatentBundle sample_bundle(const PriorSpec& spec, const PartLayout& layout, std::uint64_t seed);

// Redraws the vector of one part only, leaving the others untouched.
PartLatentBundle resample_part(const PartLatentBundle& bundle, const PriorSpec& spec, PartId part,
                               std::uint64_t seed);

// Takes z_i from `reference` for i in `parts`, from `target` otherwise.
PartLatentBundle mix(const PartLatentBundle& target, const PartLatentBundle& reference,
                     const std::set<PartId>& parts);

bool is_finite(const PartLatentBundle& bundle);

// Binary bundle file: magic, version, layout id, seed, dims and raw float32
// values. Round trips bit-exactly.
void write_bundle(std::ostream& out, const PartLatentBundle& bundle);
PartLatentBundle read_bundle(std::istream& in);
void write_bundle_file(const std::string& path, const PartLatentBundle& bundle);
PartLatentBundle read_bundle_file(const std::string& path);

// SplitMix64 finalizer; used to derive independent seeds from (seed, index).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t index);

}  // namespace puzzlegan
