#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "puzzlegan/latent.hpp"
#include "puzzlegan/layout.hpp"
#include "puzzlegan/model.hpp"

namespace puzzlegan {

// Bit (i - 1) set means part i can reach the pixel.
using PartSet = std::uint64_t;

constexpr PartSet part_bit(PartId part) { return PartSet{1} << (part - 1); }
constexpr bool contains(PartSet set, PartId part) { return (set & part_bit(part)) != 0; }
int part_count(PartSet set);

struct PixelMask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> bits;  // row-major, 0 or 1

  PixelMask() = default;
  PixelMask(int h, int w) : height(h), width(w), bits(static_cast<std::size_t>(h) * w, 0) {}

  bool at(int r, int c) const { return bits[static_cast<std::size_t>(r) * width + c] != 0; }
  std::int64_t count() const;
  bool operator==(const PixelMask&) const = default;
};

// Per-pixel set of latent parts with a dependency path to that pixel.
class InfluenceMap {
 public:
  InfluenceMap() = default;
  InfluenceMap(int height, int width, int num_parts);

  // Singleton sets from a (valid) layout at grid resolution.
  static InfluenceMap from_layout(const PartLayout& layout);

  int height() const { return height_; }
  int width() const { return width_; }
  int resolution() const { return width_; }
  int num_parts() const { return num_parts_; }
  PartSet at(int r, int c) const { return sets_[static_cast<std::size_t>(r) * width_ + c]; }
  PartSet& at(int r, int c) { return sets_[static_cast<std::size_t>(r) * width_ + c]; }
  const std::vector<PartSet>& sets() const { return sets_; }

  // Pixels whose set contains `part`.
  PixelMask support(PartId part) const;

  bool operator==(const InfluenceMap&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  int num_parts_ = 0;
  std::vector<PartSet> sets_;
};

// Pushes a map through one generator stage: SAME conv takes the union over
// the (edge-truncated) k x k window, 2x nearest upsampling copies the
// source pixel, pointwise stages leave sets unchanged.
InfluenceMap propagate(const InfluenceMap& map, const LayerOp& op);

// Exact dependency support of the generator described by `spec`, at
// spec.out_resolution.
InfluenceMap symbolic_influence(const ModelSpec& spec);
InfluenceMap symbolic_influence(const ModelSpec& spec, const PartLayout& layout);

struct EmpiricalInfluenceOptions {
  int probes = 20;
  double threshold = 1e-6;
  std::uint64_t seed = 0;
};

// Resamples z_part `probes` times and marks pixels whose value moved by more
// than `threshold` (max over color channels) in any probe.
PixelMask empirical_influence(Generator& generator, const PartLatentBundle& bundle, PartId part,
                              const EmpiricalInfluenceOptions& options = {});

struct RegionMasks {
  PartId part = 0;
  PixelMask inside;        // influenced by this part only
  PixelMask interlocking;  // this part and at least one other
  PixelMask outside;       // not influenced by this part
};

RegionMasks classify_regions(const InfluenceMap& map, PartId part);

// Region taxonomy anchored on the part's own cells: inside = pixels whose
// nearest-upsampled source cell belongs to the part, interlocking = other
// pixels the part can reach, outside = pixels it cannot reach.
RegionMasks classify_regions_by_cells(const InfluenceMap& map, const PartLayout& layout, PartId part);

// Per-pixel number of influencing parts, row-major.
std::vector<double> part_count_image(const InfluenceMap& map);

// One line per pixel row; each entry is the sorted part list, e.g. "1,3,5".
std::string dump_influence(const InfluenceMap& map);

void write_mask_png(const std::string& path, const PixelMask& mask);

}  // namespace puzzlegan
