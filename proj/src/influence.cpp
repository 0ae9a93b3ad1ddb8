#include "puzzlegan/influence.hpp"

#include <algorithm>
#include <bit>
#include <sstream>

#include "puzzlegan/errors.hpp"
#include "puzzlegan/imaging.hpp"

namespace puzzlegan {

int part_count(PartSet set) { return std::popcount(set); }

std::int64_t PixelMask::count() const {
  return std::count_if(bits.begin(), bits.end(), [](std::uint8_t b) { return b != 0; });
}

InfluenceMap::InfluenceMap(int height, int width, int num_parts)
    : height_(height), width_(width), num_parts_(num_parts), sets_(static_cast<std::size_t>(height) * width, 0) {
  if (num_parts < 1 || num_parts > 64) throw ValidationError("influence maps support 1..64 parts");
}

InfluenceMap InfluenceMap::from_layout(const PartLayout& layout) {
  const auto report = validate_layout(layout);
  if (!report.ok()) throw ValidationError("invalid layout: " + report.violations.front().message);
  InfluenceMap map(layout.grid_height(), layout.grid_width(), layout.num_parts());
  const auto grid = layout.grid();
  for (std::size_t i = 0; i < grid.size(); ++i) map.sets_[i] = part_bit(grid[i]);
  return map;
}

PixelMask InfluenceMap::support(PartId part) const {
  PixelMask mask(height_, width_);
  for (std::size_t i = 0; i < sets_.size(); ++i) mask.bits[i] = contains(sets_[i], part) ? 1 : 0;
  return mask;
}

InfluenceMap propagate(const InfluenceMap& map, const LayerOp& op) {
  switch (op.kind) {
    case LayerOp::Kind::kPointwise:
      return map;
    case LayerOp::Kind::kUpsample2x: {
      InfluenceMap out(map.height() * 2, map.width() * 2, map.num_parts());
      for (int r = 0; r < out.height(); ++r)
        for (int c = 0; c < out.width(); ++c) out.at(r, c) = map.at(r / 2, c / 2);
      return out;
    }
    case LayerOp::Kind::kConv: {
      if (op.kernel < 1 || op.kernel % 2 == 0) throw ValidationError("conv kernel must be odd");
      const int radius = op.kernel / 2;
      // Separable: a square window union is a row-window union of column-window unions.
      InfluenceMap rows(map.height(), map.width(), map.num_parts());
      for (int r = 0; r < map.height(); ++r) {
        for (int c = 0; c < map.width(); ++c) {
          PartSet acc = 0;
          for (int cc = std::max(0, c - radius); cc <= std::min(map.width() - 1, c + radius); ++cc) acc |= map.at(r, cc);
          rows.at(r, c) = acc;
        }
      }
      InfluenceMap out(map.height(), map.width(), map.num_parts());
      for (int r = 0; r < map.height(); ++r) {
        for (int c = 0; c < map.width(); ++c) {
          PartSet acc = 0;
          for (int rr = std::max(0, r - radius); rr <= std::min(map.height() - 1, r + radius); ++rr) acc |= rows.at(rr, c);
          out.at(r, c) = acc;
        }
      }
      return out;
    }
  }
  throw ValidationError("unsupported layer type in influence propagation");
}

InfluenceMap symbolic_influence(const ModelSpec& spec, const PartLayout& layout) {
  spec.validate();
  if (layout.grid_height() != spec.layout.grid_height() || layout.grid_width() != spec.layout.grid_width()) {
    throw ValidationError("layout grid does not match the model's first block");
  }
  auto map = InfluenceMap::from_layout(layout);
  for (const auto& op : spec.generator_plan()) map = propagate(map, op);
  return map;
}

InfluenceMap symbolic_influence(const ModelSpec& spec) { return symbolic_influence(spec, spec.layout); }

PixelMask empirical_influence(Generator& generator, const PartLatentBundle& bundle, PartId part,
                              const EmpiricalInfluenceOptions& options) {
  if (options.probes < 1) throw ValidationError("empirical influence needs at least one probe");
  const auto& prior = generator->prior();
  const auto base = generate(generator, bundle);
  const auto res = static_cast<int>(base.size(1));
  auto moved = torch::zeros({base.size(1), base.size(2)});
  for (int probe = 0; probe < options.probes; ++probe) {
    const auto probed = resample_part(bundle, prior, part, mix_seed(options.seed, static_cast<std::uint64_t>(probe)));
    const auto delta = (generate(generator, probed) - base).abs().amax(0);
    moved = torch::maximum(moved, delta);
  }
  PixelMask mask(res, res);
  auto acc = moved.accessor<float, 2>();
  for (int r = 0; r < res; ++r)
    for (int c = 0; c < res; ++c) mask.bits[static_cast<std::size_t>(r) * res + c] = acc[r][c] > options.threshold ? 1 : 0;
  return mask;
}

RegionMasks classify_regions(const InfluenceMap& map, PartId part) {
  if (part < 1 || part > map.num_parts()) {
    throw ValidationError("part id " + std::to_string(part) + " out of range 1.." + std::to_string(map.num_parts()));
  }
  RegionMasks masks{part, PixelMask(map.height(), map.width()), PixelMask(map.height(), map.width()),
                    PixelMask(map.height(), map.width())};
  for (std::size_t i = 0; i < map.sets().size(); ++i) {
    const PartSet s = map.sets()[i];
    if (!contains(s, part)) {
      masks.outside.bits[i] = 1;
    } else if (s == part_bit(part)) {
      masks.inside.bits[i] = 1;
    } else {
      masks.interlocking.bits[i] = 1;
    }
  }
  return masks;
}

RegionMasks classify_regions_by_cells(const InfluenceMap& map, const PartLayout& layout, PartId part) {
  if (part < 1 || part > map.num_parts() || map.num_parts() != layout.num_parts()) {
    throw ValidationError("part id " + std::to_string(part) + " out of range for this map/layout");
  }
  if (map.height() % layout.grid_height() != 0 || map.width() % layout.grid_width() != 0) {
    throw ValidationError("map resolution is not a multiple of the layout grid");
  }
  const int sy = map.height() / layout.grid_height();
  const int sx = map.width() / layout.grid_width();
  const auto grid = layout.grid();
  RegionMasks masks{part, PixelMask(map.height(), map.width()), PixelMask(map.height(), map.width()),
                    PixelMask(map.height(), map.width())};
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      const auto i = static_cast<std::size_t>(r) * map.width() + c;
      const bool own = grid[static_cast<std::size_t>(r / sy) * layout.grid_width() + c / sx] == part;
      if (!contains(map.at(r, c), part)) {
        masks.outside.bits[i] = 1;
      } else if (own) {
        masks.inside.bits[i] = 1;
      } else {
        masks.interlocking.bits[i] = 1;
      }
    }
  }
  return masks;
}

std::vector<double> part_count_image(const InfluenceMap& map) {
  std::vector<double> counts;
  counts.reserve(map.sets().size());
  for (const PartSet s : map.sets()) counts.push_back(part_count(s));
  return counts;
}

std::string dump_influence(const InfluenceMap& map) {
  std::ostringstream out;
  out << "# influence " << map.height() << "x" << map.width() << " parts " << map.num_parts() << "\n";
  for (int r = 0; r < map.height(); ++r) {
    for (int c = 0; c < map.width(); ++c) {
      if (c) out << ' ';
      bool first = true;
      for (PartId p = 1; p <= map.num_parts(); ++p) {
        if (!contains(map.at(r, c), p)) continue;
        if (!first) out << ',';
        out << p;
        first = false;
      }
    }
    out << "\n";
  }
  return out.str();
}

void write_mask_png(const std::string& path, const PixelMask& mask) {
  std::vector<double> values(mask.bits.begin(), mask.bits.end());
  write_gray_png(path, values, mask.height, mask.width, 1.0);
}

}  // namespace puzzlegan
