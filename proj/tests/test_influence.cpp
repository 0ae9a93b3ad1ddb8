#include <doctest.h>

#include <random>
#include <set>

#include "puzzlegan/influence.hpp"
#include "puzzlegan/model.hpp"
#include "test_support.hpp"

using namespace puzzlegan;

namespace {

// Walks the generator plan backwards from one output pixel, enumerating
// every input position each stage reads, down to the first block.
PartSet brute_force_pixel(const ModelSpec& spec, int y, int x) {
  const auto plan = spec.generator_plan();
  int size = static_cast<int>(spec.out_resolution);
  std::set<std::pair<int, int>> frontier{{y, x}};
  for (auto it = plan.rbegin(); it != plan.rend(); ++it) {
    std::set<std::pair<int, int>> next;
    for (const auto& [r, c] : frontier) {
      switch (it->kind) {
        case LayerOp::Kind::kPointwise:
          next.insert({r, c});
          break;
        case LayerOp::Kind::kUpsample2x:
          next.insert({r / 2, c / 2});
          break;
        case LayerOp::Kind::kConv: {
          const int h = it->kernel / 2;
          for (int dr = -h; dr <= h; ++dr)
            for (int dc = -h; dc <= h; ++dc)
              if (r + dr >= 0 && r + dr < size && c + dc >= 0 && c + dc < size) next.insert({r + dr, c + dc});
          break;
        }
      }
    }
    if (it->kind == LayerOp::Kind::kUpsample2x) size /= 2;
    frontier = std::move(next);
  }
  PartSet set = 0;
  for (const auto& [r, c] : frontier) set |= part_bit(spec.layout.part_at({r, c}));
  return set;
}

InfluenceMap brute_force(const ModelSpec& spec) {
  const int n = static_cast<int>(spec.out_resolution);
  InfluenceMap map(n, n, spec.layout.num_parts());
  for (int y = 0; y < n; ++y)
    for (int x = 0; x < n; ++x) map.at(y, x) = brute_force_pixel(spec, y, x);
  return map;
}

PartSet set_of(std::initializer_list<PartId> parts) {
  PartSet s = 0;
  for (const auto p : parts) s |= part_bit(p);
  return s;
}

}  // namespace

TEST_SUITE("influence") {
  TEST_CASE("one conv on the facial block shows one, four and two prior cells") {
    const auto after = propagate(InfluenceMap::from_layout(canonical_layout("facial_parts")), LayerOp::conv(3));
    CHECK(after.at(0, 0) == set_of({1}));
    CHECK(after.at(3, 1) == set_of({1, 2, 3, 5}));
    CHECK(after.at(6, 1) == set_of({1, 5}));
    CHECK(after.at(3, 3) == set_of({2, 3, 4, 5}));
  }

  TEST_CASE("pointwise and 1x1 stages are identities") {
    const auto base = InfluenceMap::from_layout(canonical_layout("facial_parts"));
    CHECK(propagate(base, LayerOp::conv(1)) == base);
    CHECK(propagate(base, LayerOp::pointwise()) == base);
    const auto up = propagate(base, LayerOp::upsample());
    CHECK(up.height() == 16);
    for (int y = 0; y < 16; ++y)
      for (int x = 0; x < 16; ++x) CHECK(up.at(y, x) == base.at(y / 2, x / 2));
  }

  TEST_CASE("desk spec matches the brute-force dependency oracle") {
    for (const auto* kind : {"facial_parts", "face_swap"}) {
      const auto spec = default_model_spec(canonical_layout(kind));
      CHECK(symbolic_influence(spec) == brute_force(spec));
    }
    auto spec = default_model_spec(canonical_layout("facial_parts"));
    spec.kernel_size = 5;
    spec.out_resolution = 16;
    CHECK(symbolic_influence(spec) == brute_force(spec));
  }

  TEST_CASE("1x1 kernels leave the upsampled layout map") {
    auto spec = default_model_spec(canonical_layout("facial_parts"));
    spec.kernel_size = 1;
    const auto map = symbolic_influence(spec);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(map.at(y, x) == part_bit(spec.layout.part_at({y / 4, x / 4})));

    const auto regions = classify_regions(map, 3);
    CHECK(regions.inside.count() == 4 * 16);
    CHECK(regions.interlocking.count() == 0);
    CHECK(regions.outside.count() == 1024 - 64);
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(regions.inside.at(y, x) == (spec.layout.part_at({y / 4, x / 4}) == 3));
  }

  TEST_CASE("conv propagation never shrinks a set") {
    std::mt19937_64 rng(5);
    std::uniform_int_distribution<std::uint64_t> bits(1, 31);
    for (int trial = 0; trial < 20; ++trial) {
      InfluenceMap map(9, 7, 5);
      for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 7; ++x) map.at(y, x) = bits(rng);
      for (const int k : {1, 3, 5}) {
        const auto after = propagate(map, LayerOp::conv(k));
        for (int y = 0; y < 9; ++y)
          for (int x = 0; x < 7; ++x) CHECK((after.at(y, x) & map.at(y, x)) == map.at(y, x));
      }
    }
  }

  TEST_CASE("map invariants on the desk spec") {
    const auto spec = default_model_spec(canonical_layout("facial_parts"));
    const auto map = symbolic_influence(spec);
    CHECK(map.resolution() == 32);
    for (const auto s : map.sets()) CHECK(s != 0);
    // The canonical layout is left-right symmetric, and so is the map.
    for (int y = 0; y < 32; ++y)
      for (int x = 0; x < 32; ++x) CHECK(map.at(y, x) == map.at(y, 31 - x));

    PixelMask covered(32, 32);
    for (PartId p = 1; p <= 5; ++p) {
      const auto r = classify_regions(map, p);
      for (std::size_t i = 0; i < r.inside.bits.size(); ++i) {
        CHECK(r.inside.bits[i] + r.interlocking.bits[i] + r.outside.bits[i] == 1);
        covered.bits[i] |= r.inside.bits[i] | r.interlocking.bits[i];
      }
      const auto cells = classify_regions_by_cells(map, spec.layout, p);
      for (std::size_t i = 0; i < cells.inside.bits.size(); ++i)
        CHECK(cells.inside.bits[i] + cells.interlocking.bits[i] + cells.outside.bits[i] == 1);
      CHECK(cells.outside == r.outside);
    }
    CHECK(covered.count() == 1024);
  }

  TEST_CASE("region sizes on the desk spec") {
    // Seven 3x3 convs spread each cell's reach by 2.5 cells, so no output
    // pixel of the desk generator depends on a single part: the strict
    // inside region is empty for every part.
    const auto spec = default_model_spec(canonical_layout("facial_parts"));
    const auto map = symbolic_influence(spec);
    const std::int64_t want_interlocking[] = {1024, 704, 768, 728, 832};
    for (PartId p = 1; p <= 5; ++p) {
      const auto r = classify_regions(map, p);
      CHECK(r.inside.count() == 0);
      CHECK(r.interlocking.count() == want_interlocking[p - 1]);
      CHECK(r.outside.count() == 1024 - want_interlocking[p - 1]);
      const auto cells = classify_regions_by_cells(map, spec.layout, p);
      CHECK(cells.inside.count() == 16 * static_cast<std::int64_t>(part_cells(spec.layout, p).size()));
    }
    const auto counts = part_count_image(map);
    std::map<int, int> hist;
    for (const double c : counts) ++hist[static_cast<int>(c)];
    CHECK((hist == std::map<int, int>{{2, 88}, {3, 312}, {4, 176}, {5, 448}}));
  }

  TEST_CASE("text dump lists sorted part ids") {
    InfluenceMap map(1, 2, 5);
    map.at(0, 0) = set_of({5, 1, 3});
    map.at(0, 1) = set_of({2});
    CHECK(dump_influence(map).find("1,3,5 2") != std::string::npos);
  }

  TEST_CASE("empirical influence agrees with the symbolic map") {
    const auto layout = canonical_layout("facial_parts");
    const auto spec = testing::small_spec(layout, 8);
    const auto prior = default_prior_spec(layout, 8);
    auto ckpt = make_checkpoint(spec, prior, 21);
    const auto map = symbolic_influence(spec);
    const auto bundle = sample_bundle(prior, layout, 4);
    for (PartId p = 1; p <= 5; ++p) {
      const auto empirical = empirical_influence(ckpt.generator, bundle, p);
      const auto symbolic = map.support(p);
      std::int64_t agree = 0, extra = 0;
      for (std::size_t i = 0; i < symbolic.bits.size(); ++i) {
        agree += empirical.bits[i] == symbolic.bits[i];
        extra += empirical.bits[i] && !symbolic.bits[i];
      }
      CHECK(extra == 0);
      CHECK(static_cast<double>(agree) >= 0.99 * 1024);
    }
  }

  TEST_CASE("empirical influence edge cases") {
    const auto layout = canonical_layout("face_swap");
    const auto spec = testing::small_spec(layout, 4);
    const auto prior = default_prior_spec(layout, 2);
    auto ckpt = make_checkpoint(spec, prior, 2);
    const auto bundle = sample_bundle(prior, layout, 0);
    {
      torch::NoGradGuard guard;
      ckpt.generator->head(1)->weight.zero_();
    }
    CHECK(empirical_influence(ckpt.generator, bundle, 1).count() == 0);
    CHECK(empirical_influence(ckpt.generator, bundle, 2).count() > 0);

    std::vector<PartId> ones(64, 1);
    const auto single = PartLayout::from_grid(8, 8, 1, ones);
    const PriorSpec single_prior{{16}};
    auto single_ckpt = make_checkpoint(testing::small_spec(single, 4), single_prior, 3);
    CHECK(empirical_influence(single_ckpt.generator, sample_bundle(single_prior, single, 1), 1).count() == 1024);
  }
}
