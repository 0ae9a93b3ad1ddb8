#include "puzzlegan/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numeric>
#include <sstream>

#include <Eigen/Eigenvalues>

#include "binary_io.hpp"
#include "puzzlegan/errors.hpp"

namespace puzzlegan {

namespace {

constexpr std::string_view kFeatureMagic = "PZGFEAT";
constexpr std::uint32_t kFeatureVersion = 1;
constexpr double kEigenTolerance = 1e-8;

struct SymmetricRoot {
  Eigen::MatrixXd root;
  double trace_root = 0.0;
  double most_negative = 0.0;
};

SymmetricRoot symmetric_sqrt(const Eigen::MatrixXd& m) {
  const Eigen::MatrixXd sym = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
  if (eig.info() != Eigen::Success) throw NumericalError("eigendecomposition failed in Frechet distance");
  Eigen::VectorXd values = eig.eigenvalues();
  const double scale = std::max(1.0, values.cwiseAbs().maxCoeff());
  SymmetricRoot out;
  out.most_negative = std::min(0.0, values.minCoeff());
  if (out.most_negative < -kEigenTolerance * scale) {
    std::ostringstream msg;
    msg << "covariance product is not positive semi-definite (eigenvalue " << out.most_negative << ")";
    throw NumericalError(msg.str());
  }
  values = values.cwiseMax(0.0).cwiseSqrt();
  out.trace_root = values.sum();
  out.root = eig.eigenvectors() * values.asDiagonal() * eig.eigenvectors().transpose();
  return out;
}

std::optional<SummaryStats> masked_stats(const SwapDifferences& diffs, const PixelMask& mask) {
  const auto n = mask.count();
  if (n == 0) return std::nullopt;
  std::vector<double> means;
  means.reserve(diffs.per_image.size());
  for (const auto& image : diffs.per_image) {
    double sum = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i)
      if (mask.bits[i]) sum += image[i];
    means.push_back(sum / static_cast<double>(n));
  }
  return summarize(std::move(means));
}

}  // namespace

SwapDifferences swap_differences(Generator& generator, PartId part, const SwapOptions& options) {
  const auto& layout = generator->spec().layout;
  const auto& prior = generator->prior();
  if (part < 1 || part > layout.num_parts()) {
    throw ValidationError("part id " + std::to_string(part) + " out of range 1.." + std::to_string(layout.num_parts()));
  }
  if (options.samples < 1) throw ValidationError("swap MSE needs at least one sample");
  if (options.batch_size < 1) throw ValidationError("batch_size must be >= 1");

  SwapDifferences diffs;
  diffs.part = part;
  diffs.resolution = static_cast<int>(generator->spec().out_resolution);
  diffs.per_image.reserve(static_cast<std::size_t>(options.samples));

  for (std::int64_t start = 0; start < options.samples; start += options.batch_size) {
    const auto stop = std::min(options.samples, start + options.batch_size);
    std::vector<PartLatentBundle> originals;
    std::vector<PartLatentBundle> edited;
    for (std::int64_t j = start; j < stop; ++j) {
      const auto u = static_cast<std::uint64_t>(j);
      originals.push_back(sample_bundle(prior, layout, mix_seed(options.seed, 2 * u)));
      edited.push_back(options.zero_swap_control ? originals.back()
                                                 : resample_part(originals.back(), prior, part, mix_seed(options.seed, 2 * u + 1)));
    }
    // Both batches share positions and size, so untouched pixels go through
    // identical arithmetic.
    const auto a = generate(generator, originals);
    const auto b = generate(generator, edited);
    const auto sq = (a - b).pow(2).mean(1).contiguous();  // [B, R, R]
    for (std::int64_t i = 0; i < sq.size(0); ++i) {
      const auto img = sq[i].contiguous();
      const float* p = img.data_ptr<float>();
      diffs.per_image.emplace_back(p, p + img.numel());
    }
  }
  return diffs;
}

MseHeatmap mean_heatmap(const SwapDifferences& diffs) {
  if (diffs.per_image.empty()) throw ValidationError("no swap samples to average");
  MseHeatmap heat;
  heat.part = diffs.part;
  heat.resolution = diffs.resolution;
  heat.sample_count = static_cast<std::int64_t>(diffs.per_image.size());
  heat.values.assign(diffs.per_image.front().size(), 0.0);
  for (const auto& image : diffs.per_image)
    for (std::size_t i = 0; i < image.size(); ++i) heat.values[i] += image[i];
  for (auto& v : heat.values) v /= static_cast<double>(heat.sample_count);
  return heat;
}

MseHeatmap swap_mse(Generator& generator, PartId part, const SwapOptions& options) {
  return mean_heatmap(swap_differences(generator, part, options));
}

SummaryStats summarize(std::vector<double> values) {
  if (values.empty()) throw ValidationError("cannot summarize an empty sample");
  std::sort(values.begin(), values.end());
  auto quantile = [&](double q) {
    const double pos = q * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
  };
  SummaryStats s;
  s.count = static_cast<std::int64_t>(values.size());
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  s.min = values.front();
  s.q1 = quantile(0.25);
  s.median = quantile(0.5);
  s.q3 = quantile(0.75);
  s.max = values.back();
  return s;
}

RegionStats region_stats(const SwapDifferences& diffs, const RegionMasks& masks) {
  const auto pixels = static_cast<std::size_t>(masks.inside.height) * masks.inside.width;
  for (std::size_t i = 0; i < pixels; ++i) {
    if (masks.inside.bits[i] + masks.interlocking.bits[i] + masks.outside.bits[i] != 1) {
      throw ValidationError("region masks do not partition the image");
    }
  }
  if (!diffs.per_image.empty() && diffs.per_image.front().size() != pixels) {
    throw ValidationError("region masks do not match the swap image resolution");
  }
  RegionStats stats;
  stats.part = masks.part;
  stats.sample_count = static_cast<std::int64_t>(diffs.per_image.size());
  stats.inside = masked_stats(diffs, masks.inside);
  stats.interlocking = masked_stats(diffs, masks.interlocking);
  stats.outside = masked_stats(diffs, masks.outside);
  return stats;
}

std::string format_region_stats(const RegionStats& stats) {
  std::ostringstream out;
  out << "part " << stats.part << "  samples " << stats.sample_count << "\n";
  out << std::left << std::setw(14) << "region" << std::right;
  for (const char* h : {"mean", "min", "q1", "median", "q3", "max"}) out << std::setw(13) << h;
  out << "\n";
  auto row = [&](const char* name, const std::optional<SummaryStats>& s) {
    out << std::left << std::setw(14) << name << std::right;
    if (!s) {
      out << std::setw(13) << "(empty)" << "\n";
      return;
    }
    out << std::scientific << std::setprecision(4);
    for (const double v : {s->mean, s->min, s->q1, s->median, s->q3, s->max}) out << std::setw(13) << v;
    out << std::defaultfloat << "\n";
  };
  row("inside", stats.inside);
  row("interlocking", stats.interlocking);
  row("outside", stats.outside);
  return out.str();
}

bool FeatureSummary::operator==(const FeatureSummary& other) const {
  return count == other.count && extractor == other.extractor && mean.size() == other.mean.size() &&
         covariance.rows() == other.covariance.rows() && covariance.cols() == other.covariance.cols() &&
         mean == other.mean && covariance == other.covariance;
}

std::string extractor_name(FeatureExtractor extractor) {
  switch (extractor) {
    case FeatureExtractor::kPixelDownsample: return "pixel_downsample";
    case FeatureExtractor::kDiscriminatorPenultimate: return "discriminator_penultimate";
  }
  return "unknown";
}

FeatureExtractor extractor_from_name(const std::string& name) {
  if (name == "pixel_downsample") return FeatureExtractor::kPixelDownsample;
  if (name == "discriminator_penultimate") return FeatureExtractor::kDiscriminatorPenultimate;
  throw ValidationError("unknown feature extractor '" + name +
                        "' (expected pixel_downsample or discriminator_penultimate; external embeddings go "
                        "through summarize_features)");
}

FeatureSummary summarize_features(const Eigen::MatrixXd& rows, const std::string& extractor,
                                  const std::function<void(const std::string&)>& warn) {
  if (rows.rows() < 2) throw ValidationError("feature summaries need at least 2 samples");
  if (warn && rows.rows() <= rows.cols()) {
    warn("only " + std::to_string(rows.rows()) + " samples for " + std::to_string(rows.cols()) +
         " feature dimensions; covariance is rank deficient");
  }
  FeatureSummary s;
  s.count = rows.rows();
  s.extractor = extractor;
  s.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - s.mean.transpose();
  s.covariance = (centered.transpose() * centered) / static_cast<double>(rows.rows() - 1);
  return s;
}

FeatureSummary extract_features(const torch::Tensor& images, FeatureExtractor extractor, Discriminator* discriminator,
                                const std::function<void(const std::string&)>& warn) {
  if (images.dim() != 4 || images.size(0) < 2) throw ValidationError("feature extraction needs at least 2 images");
  torch::NoGradGuard no_grad;
  torch::Tensor features;
  switch (extractor) {
    case FeatureExtractor::kPixelDownsample:
      features = torch::adaptive_avg_pool2d(images.to(torch::kFloat32), {8, 8}).flatten(1);
      break;
    case FeatureExtractor::kDiscriminatorPenultimate:
      if (discriminator == nullptr || !*discriminator) {
        throw ValidationError("discriminator_penultimate features need a discriminator");
      }
      features = (*discriminator)->features(images);
      break;
  }
  features = features.to(torch::kFloat64).contiguous();
  // torch is row-major; map as a row-major Eigen view before copying.
  using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const Eigen::Map<const RowMajor> view(features.data_ptr<double>(), features.size(0), features.size(1));
  return summarize_features(view, extractor_name(extractor), warn);
}

double frechet_distance(const FeatureSummary& a, const FeatureSummary& b, FrechetReport* report) {
  if (a.extractor != b.extractor) {
    throw ValidationError("cannot compare summaries from extractors '" + a.extractor + "' and '" + b.extractor + "'");
  }
  if (a.dimension() != b.dimension() || a.covariance.rows() != a.dimension() || b.covariance.rows() != b.dimension()) {
    throw ValidationError("feature summaries have mismatched dimensions");
  }
  const auto root_a = symmetric_sqrt(a.covariance);
  const Eigen::MatrixXd product = root_a.root * b.covariance * root_a.root;
  const auto root_product = symmetric_sqrt(product);
  // b's covariance must itself be PSD; its eigenvalues also enter the check.
  const auto root_b = symmetric_sqrt(b.covariance);

  if (report) {
    report->most_negative_eigenvalue =
        std::min({root_a.most_negative, root_b.most_negative, root_product.most_negative});
    report->clipped = report->most_negative_eigenvalue < 0.0;
  }
  const double mean_term = (a.mean - b.mean).squaredNorm();
  const double d = mean_term + a.covariance.trace() + b.covariance.trace() - 2.0 * root_product.trace_root;
  return std::max(0.0, d);
}

void write_feature_summary(std::ostream& out, const FeatureSummary& s) {
  out.write(kFeatureMagic.data(), static_cast<std::streamsize>(kFeatureMagic.size()));
  detail::put<std::uint32_t>(out, kFeatureVersion);
  detail::put_string(out, s.extractor);
  detail::put<std::int64_t>(out, s.count);
  detail::put<std::int64_t>(out, s.dimension());
  detail::put_span<double>(out, std::span(s.mean.data(), static_cast<std::size_t>(s.mean.size())));
  detail::put_span<double>(out, std::span(s.covariance.data(), static_cast<std::size_t>(s.covariance.size())));
}

FeatureSummary read_feature_summary(std::istream& in) {
  detail::expect_magic(in, kFeatureMagic, "feature summary");
  const auto version = detail::get<std::uint32_t>(in, "feature summary header");
  if (version != kFeatureVersion) throw ValidationError("unsupported feature summary version " + std::to_string(version));
  FeatureSummary s;
  s.extractor = detail::get_string(in, "feature summary extractor", 4096);
  s.count = detail::get<std::int64_t>(in, "feature summary header");
  const auto dim = detail::get<std::int64_t>(in, "feature summary header");
  if (dim < 0 || dim > (1 << 16)) throw ValidationError("corrupt feature summary dimension");
  s.mean.resize(dim);
  s.covariance.resize(dim, dim);
  detail::get_span<double>(in, std::span(s.mean.data(), static_cast<std::size_t>(dim)), "feature summary mean");
  detail::get_span<double>(in, std::span(s.covariance.data(), static_cast<std::size_t>(dim * dim)),
                           "feature summary covariance");
  return s;
}

}  // namespace puzzlegan
