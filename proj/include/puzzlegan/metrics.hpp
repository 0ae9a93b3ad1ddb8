#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <torch/torch.h>

#include "puzzlegan/influence.hpp"
#include "puzzlegan/model.hpp"

namespace puzzlegan {

struct SwapOptions {
  std::int64_t samples = 500;
  std::uint64_t seed = 0;
  std::int64_t batch_size = 50;
  // Render the untouched bundle twice instead of resampling the part.
  bool zero_swap_control = false;
};

// Per-image squared differences between generated images and their
// counterparts with one part prior resampled, averaged over color channels.
struct SwapDifferences {
  PartId part = 0;
  int resolution = 0;
  std::vector<std::vector<float>> per_image;  // [sample][row-major pixel]
};

struct MseHeatmap {
  PartId part = 0;
  int resolution = 0;
  std::vector<double> values;  // row-major mean over samples
  std::int64_t sample_count = 0;
};

SwapDifferences swap_differences(Generator& generator, PartId part, const SwapOptions& options = {});
MseHeatmap mean_heatmap(const SwapDifferences& diffs);
MseHeatmap swap_mse(Generator& generator, PartId part, const SwapOptions& options = {});

struct SummaryStats {
  std::int64_t count = 0;
  double mean = 0.0;
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

// Quartiles use linear interpolation between order statistics.
SummaryStats summarize(std::vector<double> values);

// Statistics of per-image region-mean MSE; a region with no pixels has no
// statistic rather than a zero.
struct RegionStats {
  PartId part = 0;
  std::int64_t sample_count = 0;
  std::optional<SummaryStats> inside;
  std::optional<SummaryStats> interlocking;
  std::optional<SummaryStats> outside;
};

RegionStats region_stats(const SwapDifferences& diffs, const RegionMasks& masks);

// Plain-text table, one row per region.
std::string format_region_stats(const RegionStats& stats);

struct FeatureSummary {
  Eigen::VectorXd mean;
  Eigen::MatrixXd covariance;  // unbiased (n - 1)
  std::int64_t count = 0;
  std::string extractor;

  Eigen::Index dimension() const { return mean.size(); }
  bool operator==(const FeatureSummary& other) const;
};

enum class FeatureExtractor { kPixelDownsample, kDiscriminatorPenultimate };

std::string extractor_name(FeatureExtractor extractor);
FeatureExtractor extractor_from_name(const std::string& name);

// Mean and covariance of feature rows [n, dim]; `warn` fires when n <= dim.
FeatureSummary summarize_features(const Eigen::MatrixXd& rows, const std::string& extractor,
                                  const std::function<void(const std::string&)>& warn = {});

// pixel_downsample: 8x8 area-averaged RGB (192 values). discriminator_penultimate:
// the discriminator's flattened input to its score layer.
FeatureSummary extract_features(const torch::Tensor& images, FeatureExtractor extractor,
                                Discriminator* discriminator = nullptr,
                                const std::function<void(const std::string&)>& warn = {});

struct FrechetReport {
  double most_negative_eigenvalue = 0.0;  // before clipping, over both square roots
  bool clipped = false;
};

// ||mu_a - mu_b||^2 + tr(S_a + S_b - 2 (S_a S_b)^{1/2}). The trace of the
// square root is taken from sqrt(S_a) S_b sqrt(S_a), which is symmetric
// PSD and similar to S_a S_b. Eigenvalues down to -1e-8 (relative to the
// largest magnitude, floor 1) are clipped to 0; anything more negative
// throws NumericalError.
double frechet_distance(const FeatureSummary& a, const FeatureSummary& b, FrechetReport* report = nullptr);

void write_feature_summary(std::ostream& out, const FeatureSummary& summary);
FeatureSummary read_feature_summary(std::istream& in);

}  // namespace puzzlegan
