#include <doctest.h>

#include <cmath>
#include <sstream>

#include "puzzlegan/errors.hpp"
#include "puzzlegan/metrics.hpp"
#include "test_support.hpp"

using namespace puzzlegan;

namespace {

FeatureSummary univariate(double mean, double variance) {
  FeatureSummary s;
  s.mean = Eigen::VectorXd::Constant(1, mean);
  s.covariance = Eigen::MatrixXd::Constant(1, 1, variance);
  s.count = 100;
  s.extractor = "test";
  return s;
}

FeatureSummary random_summary(int dim, int n, unsigned seed) {
  std::srand(seed);
  const Eigen::MatrixXd rows = Eigen::MatrixXd::Random(n, dim) + Eigen::MatrixXd::Random(n, dim).cwiseAbs2();
  return summarize_features(rows, "test");
}

struct Untrained {
  PartLayout layout = canonical_layout("facial_parts");
  ModelSpec spec = testing::small_spec(layout, 8);
  Checkpoint ckpt = make_checkpoint(spec, default_prior_spec(layout, 8), 13);
};

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("zero-swap control gives an all-zero heatmap") {
    Untrained u;
    SwapOptions opts;
    opts.samples = 12;
    opts.batch_size = 5;
    opts.zero_swap_control = true;
    const auto heat = swap_mse(u.ckpt.generator, 3, opts);
    CHECK(heat.sample_count == 12);
    for (const double v : heat.values) CHECK(v == 0.0);
  }

  TEST_CASE("heatmap support lies inside the symbolic support") {
    Untrained u;
    const auto map = symbolic_influence(u.spec);
    SwapOptions opts;
    opts.samples = 8;
    opts.batch_size = 3;
    for (PartId p = 1; p <= 5; ++p) {
      const auto heat = swap_mse(u.ckpt.generator, p, opts);
      const auto support = map.support(p);
      std::int64_t lit = 0;
      for (std::size_t i = 0; i < heat.values.size(); ++i) {
        CHECK(heat.values[i] >= 0.0);
        if (heat.values[i] > 0.0) {
          ++lit;
          CHECK(support.bits[i] == 1);
        }
      }
      CHECK(lit > 0);
    }
  }

  TEST_CASE("outside region of an untrained generator is exactly zero") {
    Untrained u;
    const auto map = symbolic_influence(u.spec);
    SwapOptions opts;
    opts.samples = 10;
    for (PartId p = 2; p <= 5; ++p) {
      const auto stats = region_stats(swap_differences(u.ckpt.generator, p, opts), classify_regions(map, p));
      REQUIRE(stats.outside.has_value());
      CHECK(stats.outside->max == 0.0);
      CHECK_FALSE(stats.inside.has_value());
      REQUIRE(stats.interlocking.has_value());
      CHECK(stats.interlocking->median > 0.0);
    }
  }

  TEST_CASE("heatmap is the per-pixel mean of channel-averaged squares") {
    Untrained u;
    SwapOptions opts;
    opts.samples = 3;
    opts.seed = 8;
    const auto diffs = swap_differences(u.ckpt.generator, 4, opts);
    const auto& prior = u.ckpt.prior;
    std::vector<double> want(1024, 0.0);
    for (std::uint64_t j = 0; j < 3; ++j) {
      const auto a = sample_bundle(prior, u.layout, mix_seed(8, 2 * j));
      const auto b = resample_part(a, prior, 4, mix_seed(8, 2 * j + 1));
      const std::vector<PartLatentBundle> pair{a, b};
      const auto imgs = generate(u.ckpt.generator, pair);
      const auto sq = (imgs[0] - imgs[1]).pow(2).mean(0);
      for (int i = 0; i < 1024; ++i) want[static_cast<std::size_t>(i)] += sq.flatten()[i].item<float>() / 3.0;
    }
    const auto heat = mean_heatmap(diffs);
    for (std::size_t i = 0; i < want.size(); ++i) CHECK(heat.values[i] == doctest::Approx(want[i]).epsilon(1e-5));
  }

  TEST_CASE("summary statistics use linear interpolation") {
    const auto s = summarize({4.0, 1.0, 3.0, 2.0});
    CHECK(s.count == 4);
    CHECK(s.min == 1.0);
    CHECK(s.max == 4.0);
    CHECK(s.mean == 2.5);
    CHECK(s.median == 2.5);
    CHECK(s.q1 == doctest::Approx(1.75));
    CHECK(s.q3 == doctest::Approx(3.25));
    CHECK(summarize({7.0}).median == 7.0);
    CHECK_THROWS_AS(summarize({}), ValidationError);
  }

  TEST_CASE("region statistics from hand-made differences") {
    SwapDifferences diffs;
    diffs.part = 1;
    diffs.resolution = 2;
    diffs.per_image = {{0.5f, 0.5f, 0.5f, 0.5f}, {1.0f, 3.0f, 2.0f, 0.0f}};
    RegionMasks masks;
    masks.part = 1;
    masks.inside = PixelMask(2, 2);
    masks.interlocking = PixelMask(2, 2);
    masks.outside = PixelMask(2, 2);
    masks.inside.bits = {1, 1, 0, 0};
    masks.interlocking.bits = {0, 0, 1, 0};
    masks.outside.bits = {0, 0, 0, 1};
    const auto stats = region_stats(diffs, masks);
    CHECK(stats.sample_count == 2);
    CHECK(stats.inside->mean == doctest::Approx((0.5 + 2.0) / 2));
    CHECK(stats.interlocking->max == doctest::Approx(2.0));
    CHECK(stats.outside->min == 0.0);

    // A constant difference image has the same mean in every region.
    diffs.per_image = {{0.25f, 0.25f, 0.25f, 0.25f}};
    const auto flat = region_stats(diffs, masks);
    CHECK(flat.inside->mean == flat.interlocking->mean);
    CHECK(flat.interlocking->mean == flat.outside->mean);

    masks.inside.bits = {0, 0, 0, 0};
    masks.interlocking.bits = {1, 1, 1, 0};
    CHECK_FALSE(region_stats(diffs, masks).inside.has_value());
    masks.outside.bits = {0, 0, 0, 0};
    CHECK_THROWS_AS(region_stats(diffs, masks), ValidationError);
    CHECK(format_region_stats(flat).find("inside") != std::string::npos);
  }

  TEST_CASE("frechet distance identities") {
    const auto a = random_summary(6, 40, 1);
    const auto b = random_summary(6, 40, 2);
    CHECK(std::abs(frechet_distance(a, a)) <= 1e-6);
    CHECK(frechet_distance(univariate(0, 1), univariate(1, 4)) == doctest::Approx(2.0).epsilon(1e-9));
    CHECK(std::abs(frechet_distance(univariate(0, 1), univariate(1, 4)) - 2.0) <= 1e-6);
    CHECK(std::abs(frechet_distance(a, b) - frechet_distance(b, a)) <= 1e-6);
    CHECK(frechet_distance(a, b) > 0.0);
  }

  TEST_CASE("frechet distance matches the closed form for commuting covariances") {
    // Diagonal covariances: tr((S_a S_b)^(1/2)) = sum sqrt(a_i b_i).
    FeatureSummary a, b;
    a.mean = Eigen::Vector3d(1, 2, 3);
    b.mean = Eigen::Vector3d(0, 2, 5);
    a.covariance = Eigen::Vector3d(1, 4, 9).asDiagonal();
    b.covariance = Eigen::Vector3d(4, 1, 0.25).asDiagonal();
    a.extractor = b.extractor = "test";
    a.count = b.count = 10;
    const double want = 1 + 4 + (1 + 4 - 4) + (4 + 1 - 4) + (9 + 0.25 - 3);
    CHECK(frechet_distance(a, b) == doctest::Approx(want).epsilon(1e-10));
  }

  TEST_CASE("frechet distance errors") {
    CHECK_THROWS_AS(frechet_distance(univariate(0, 1), random_summary(2, 10, 1)), ValidationError);
    auto other = univariate(0, 1);
    other.extractor = "other";
    CHECK_THROWS_AS(frechet_distance(univariate(0, 1), other), ValidationError);
    CHECK_THROWS_AS(frechet_distance(univariate(0, -1), univariate(0, 1)), NumericalError);
    FrechetReport report;
    auto tiny = univariate(0, -1e-12);
    CHECK(frechet_distance(tiny, univariate(0, 1), &report) >= 0.0);
    CHECK(report.clipped);
  }

  TEST_CASE("constant colour sets give gap squared times dimension") {
    const double gap = 0.3;
    std::vector<torch::Tensor> a, b;
    for (int i = 0; i < 10; ++i) {
      const double level = -0.6 + 0.1 * i;
      a.push_back(torch::full({3, 32, 32}, level));
      b.push_back(torch::full({3, 32, 32}, level + gap));
    }
    const auto fa = extract_features(torch::stack(a), FeatureExtractor::kPixelDownsample);
    const auto fb = extract_features(torch::stack(b), FeatureExtractor::kPixelDownsample);
    CHECK(fa.dimension() == 192);
    CHECK(frechet_distance(fa, fb) == doctest::Approx(gap * gap * 192).epsilon(1e-6));

    const auto dup = extract_features(torch::stack({a[0], a[0], a[0]}), FeatureExtractor::kPixelDownsample);
    CHECK(dup.covariance.cwiseAbs().maxCoeff() == 0.0);
    CHECK_THROWS_AS(extract_features(a[0].unsqueeze(0), FeatureExtractor::kPixelDownsample), ValidationError);
  }

  TEST_CASE("discriminator features") {
    Untrained u;
    torch::manual_seed(2);
    const auto images = torch::rand({4, 3, 32, 32}) * 2 - 1;
    const auto f = extract_features(images, FeatureExtractor::kDiscriminatorPenultimate, &u.ckpt.discriminator);
    CHECK(f.dimension() == 8 * 8 * 8);
    CHECK(f.extractor == "discriminator_penultimate");
    CHECK_THROWS_AS(extract_features(images, FeatureExtractor::kDiscriminatorPenultimate), ValidationError);
    CHECK(extractor_from_name(extractor_name(FeatureExtractor::kPixelDownsample)) == FeatureExtractor::kPixelDownsample);
    CHECK_THROWS_AS(extractor_from_name("inception"), ValidationError);
  }

  TEST_CASE("few samples trigger a warning") {
    std::string warned;
    summarize_features(Eigen::MatrixXd::Random(3, 5), "test", [&](const std::string& m) { warned = m; });
    CHECK_FALSE(warned.empty());
  }

  TEST_CASE("feature summaries round trip bit-exactly") {
    const auto a = random_summary(5, 30, 4);
    std::stringstream ss;
    write_feature_summary(ss, a);
    CHECK(read_feature_summary(ss) == a);
    std::stringstream bad("PZGFEAT");
    CHECK_THROWS_AS(read_feature_summary(bad), ValidationError);
  }
}
