#include "puzzlegan/dataio.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include <json.hpp>
#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "binary_io.hpp"
#include "puzzlegan/errors.hpp"
#include "puzzlegan/imaging.hpp"

namespace fs = std::filesystem;

namespace puzzlegan {

namespace {

constexpr std::string_view kStoreMagic = "PZGSTOR";
constexpr std::uint32_t kStoreVersion = 1;
constexpr std::uint32_t kDtypeFloat32 = 1;

// Center crop to square, resize, RGB [-1, 1] as [3, R, R].
torch::Tensor preprocess(const cv::Mat& bgr, int resolution) {
  const int side = std::min(bgr.rows, bgr.cols);
  const cv::Rect crop((bgr.cols - side) / 2, (bgr.rows - side) / 2, side, side);
  cv::Mat square = bgr(crop);
  cv::Mat resized;
  if (side == resolution) {
    resized = square.clone();
  } else {
    cv::resize(square, resized, cv::Size(resolution, resolution), 0, 0,
               side > resolution ? cv::INTER_AREA : cv::INTER_LINEAR);
  }
  cv::Mat rgb;
  cv::cvtColor(resized, rgb, cv::COLOR_BGR2RGB);
  auto hwc = torch::from_blob(rgb.data, {resolution, resolution, 3}, torch::kUInt8).clone();
  return hwc.permute({2, 0, 1}).to(torch::kFloat32).div(127.5).sub(1.0).contiguous();
}

}  // namespace

ImageStore::ImageStore(torch::Tensor images) : images_(std::move(images)) {
  if (images_.dim() != 4 || images_.size(2) != images_.size(3)) {
    throw ValidationError("image store expects [N, C, R, R], got " + c10::str(images_.sizes()));
  }
  images_ = images_.to(torch::kFloat32).contiguous();
}

torch::Tensor ImageStore::image(std::int64_t i) const {
  if (i < 0 || i >= count()) throw ValidationError("image index " + std::to_string(i) + " out of range");
  return images_[i];
}

torch::Tensor ImageStore::gather(std::span<const std::int64_t> indices) const {
  auto idx = torch::tensor(std::vector<std::int64_t>(indices.begin(), indices.end()), torch::kLong);
  return images_.index_select(0, idx);
}

IngestResult ingest(const std::string& folder, std::int64_t target_resolution, const IngestOptions& options) {
  if (target_resolution < 1) throw ValidationError("target resolution must be positive");
  if (!fs::is_directory(folder)) throw ValidationError("dataset folder " + folder + " does not exist");

  std::vector<fs::path> paths;
  for (const auto& entry : fs::directory_iterator(folder)) {
    if (entry.is_regular_file()) paths.push_back(entry.path());
  }
  std::sort(paths.begin(), paths.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename().string() < b.filename().string(); });

  IngestResult result;
  auto& manifest = result.manifest;
  manifest.root = folder;
  manifest.resolution = target_resolution;
  manifest.alignment_note = options.alignment_note;
  manifest.split_seed = options.split_seed;

  std::vector<torch::Tensor> images;
  for (const auto& path : paths) {
    cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
    if (bgr.empty()) {
      manifest.skipped.push_back(path.filename().string());
      if (options.warn) options.warn("skipping undecodable file " + path.string());
      continue;
    }
    images.push_back(preprocess(bgr, static_cast<int>(target_resolution)));
    manifest.files.push_back(path.filename().string());
  }
  if (images.empty()) throw ValidationError("no usable images in " + folder);

  result.store = ImageStore(torch::stack(images));
  manifest.count = result.store.count();
  return result;
}

void save_store(const std::string& path, const ImageStore& store) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ValidationError("cannot write store " + path);
  out.write(kStoreMagic.data(), static_cast<std::streamsize>(kStoreMagic.size()));
  detail::put<std::uint32_t>(out, kStoreVersion);
  detail::put<std::int64_t>(out, store.count());
  detail::put<std::int64_t>(out, store.resolution());
  detail::put<std::int64_t>(out, store.channels());
  detail::put<std::uint32_t>(out, kDtypeFloat32);
  if (store.count() > 0) {
    const auto& t = store.images();
    detail::put_span<float>(out, std::span(t.data_ptr<float>(), static_cast<std::size_t>(t.numel())));
  }
  if (!out) throw ValidationError("failed writing store " + path);
}

ImageStore load_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ValidationError("cannot open store " + path);
  detail::expect_magic(in, kStoreMagic, "image store");
  const auto version = detail::get<std::uint32_t>(in, "store header");
  if (version != kStoreVersion) throw ValidationError("unsupported store version " + std::to_string(version));
  const auto count = detail::get<std::int64_t>(in, "store header");
  const auto resolution = detail::get<std::int64_t>(in, "store header");
  const auto channels = detail::get<std::int64_t>(in, "store header");
  const auto dtype = detail::get<std::uint32_t>(in, "store header");
  if (dtype != kDtypeFloat32) throw ValidationError("unsupported store dtype " + std::to_string(dtype));
  if (count < 1 || resolution < 1 || channels < 1 || count * channels * resolution * resolution > (1ll << 34)) {
    throw ValidationError("corrupt store header in " + path);
  }
  auto images = torch::empty({count, channels, resolution, resolution}, torch::kFloat32);
  detail::get_span<float>(in, std::span(images.data_ptr<float>(), static_cast<std::size_t>(images.numel())),
                          "store records");
  return ImageStore(images);
}

void write_manifest(const std::string& path, const DatasetManifest& m) {
  const nlohmann::json j = {
      {"root", m.root},
      {"count", m.count},
      {"resolution", m.resolution},
      {"alignment_note", m.alignment_note},
      {"normalization", m.normalization},
      {"split_seed", m.split_seed},
      {"files", m.files},
      {"skipped", m.skipped},
  };
  std::ofstream out(path);
  if (!out) throw ValidationError("cannot write manifest " + path);
  out << j.dump(2) << "\n";
}

DatasetManifest read_manifest(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open manifest " + path);
  try {
    const auto j = nlohmann::json::parse(in);
    DatasetManifest m;
    m.root = j.at("root").get<std::string>();
    m.count = j.at("count").get<std::int64_t>();
    m.resolution = j.at("resolution").get<std::int64_t>();
    m.alignment_note = j.at("alignment_note").get<std::string>();
    m.normalization = j.at("normalization").get<std::string>();
    m.split_seed = j.at("split_seed").get<std::uint64_t>();
    m.files = j.at("files").get<std::vector<std::string>>();
    m.skipped = j.at("skipped").get<std::vector<std::string>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError("bad manifest " + path + ": " + e.what());
  }
}

std::uint64_t store_hash(const ImageStore& store) {
  std::uint64_t h = 1469598103934665603ull;
  auto mix_in = [&](const unsigned char* p, std::size_t n) {
    for (std::size_t i = 0; i < n; ++i) {
      h ^= p[i];
      h *= 1099511628211ull;
    }
  };
  const std::array<std::int64_t, 3> dims{store.count(), store.channels(), store.resolution()};
  mix_in(reinterpret_cast<const unsigned char*>(dims.data()), sizeof(dims));
  if (store.count() > 0) {
    const auto& t = store.images();
    mix_in(reinterpret_cast<const unsigned char*>(t.data_ptr<float>()), static_cast<std::size_t>(t.numel()) * sizeof(float));
  }
  return h;
}

void export_store_images(const ImageStore& store, const std::string& folder) {
  fs::create_directories(folder);
  for (std::int64_t i = 0; i < store.count(); ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "%06lld.png", static_cast<long long>(i));
    write_png((fs::path(folder) / name).string(), store.image(i));
  }
}

BatchIterator::BatchIterator(const ImageStore& store, std::int64_t batch_size, std::uint64_t seed)
    : store_(&store), batch_size_(batch_size), rng_(seed) {
  if (store.count() < 1) throw ValidationError("cannot iterate an empty dataset");
  if (batch_size < 1 || batch_size > store.count()) {
    throw ValidationError("batch size " + std::to_string(batch_size) + " must be in 1.." +
                          std::to_string(store.count()));
  }
  order_.resize(static_cast<std::size_t>(store.count()));
  reshuffle();
}

void BatchIterator::reshuffle() {
  std::iota(order_.begin(), order_.end(), std::int64_t{0});
  std::shuffle(order_.begin(), order_.end(), rng_);
  cursor_ = 0;
}

std::vector<std::int64_t> BatchIterator::next_indices() {
  if (cursor_ >= order_.size()) {
    reshuffle();
    ++epoch_;
  }
  const auto end = std::min(order_.size(), cursor_ + static_cast<std::size_t>(batch_size_));
  std::vector<std::int64_t> batch(order_.begin() + static_cast<std::ptrdiff_t>(cursor_),
                                  order_.begin() + static_cast<std::ptrdiff_t>(end));
  cursor_ = end;
  return batch;
}

torch::Tensor BatchIterator::next() { return store_->gather(next_indices()); }

namespace {

cv::Scalar rgb(double r, double g, double b) { return cv::Scalar(b, g, r); }

cv::Scalar jitter(const cv::Scalar& c, double amount, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-amount, amount);
  return cv::Scalar(std::clamp(c[0] + u(rng), 0.0, 255.0), std::clamp(c[1] + u(rng), 0.0, 255.0),
                    std::clamp(c[2] + u(rng), 0.0, 255.0));
}

template <typename T>
const T& pick(const std::vector<T>& options, std::mt19937_64& rng) {
  std::uniform_int_distribution<std::size_t> u(0, options.size() - 1);
  return options[u(rng)];
}

// All geometry is in units of the image side so faces line up with an
// 8x8 grid: face spans roughly rows 2-6 and columns 2-5.
cv::Mat render_synthetic_face(std::mt19937_64& rng, int res) {
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uni = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  const double s = res;
  auto pt = [&](double x, double y) { return cv::Point(static_cast<int>(std::lround(x * s * 16)), static_cast<int>(std::lround(y * s * 16))); };
  auto sz = [&](double ax, double ay) { return cv::Size(static_cast<int>(std::lround(ax * s * 16)), static_cast<int>(std::lround(ay * s * 16))); };
  constexpr int kShift = 4;  // sub-pixel drawing
  const auto aa = cv::LINE_AA;

  const double dx = uni(-0.015, 0.015);
  const double dy = uni(-0.015, 0.015);

  const cv::Scalar background = rgb(uni(0, 255), uni(0, 255), uni(0, 255));
  const std::vector<cv::Scalar> hair_palette{rgb(25, 20, 18), rgb(90, 55, 30), rgb(200, 165, 90), rgb(150, 60, 30), rgb(170, 170, 170)};
  const cv::Scalar hair = jitter(pick(hair_palette, rng), 20, rng);
  const std::vector<cv::Scalar> skin_palette{rgb(240, 205, 180), rgb(210, 160, 120), rgb(160, 110, 75), rgb(100, 65, 45)};
  const cv::Scalar skin = jitter(pick(skin_palette, rng), 15, rng);
  const std::vector<cv::Scalar> iris_palette{rgb(60, 40, 25), rgb(60, 110, 170), rgb(70, 120, 60), rgb(20, 20, 20)};
  const cv::Scalar iris = jitter(pick(iris_palette, rng), 15, rng);
  const cv::Scalar lips = jitter(rgb(170, 70, 70), 35, rng);

  cv::Mat img(res, res, CV_8UC3, background);
  // Vertical background shading.
  const double shade = uni(-40, 40);
  for (int r = 0; r < res; ++r) {
    const double f = shade * (static_cast<double>(r) / res - 0.5);
    for (int c = 0; c < res; ++c) {
      auto& px = img.at<cv::Vec3b>(r, c);
      for (int ch = 0; ch < 3; ++ch) px[ch] = cv::saturate_cast<std::uint8_t>(px[ch] + f);
    }
  }

  const double cx = 0.5 + dx;
  const double face_w = uni(0.20, 0.27);
  const double face_h = uni(0.28, 0.34);
  const double face_cy = 0.56 + dy;

  // Hair mass behind the head; long hair falls past the jaw.
  const double hair_w = face_w + uni(0.06, 0.14);
  cv::ellipse(img, pt(cx, 0.42 + dy), sz(hair_w, uni(0.30, 0.38)), 0, 0, 360, hair, cv::FILLED, aa, kShift);
  if (u01(rng) < 0.5) {
    const double bottom = uni(0.75, 0.98);
    cv::rectangle(img, pt(cx - hair_w, 0.42 + dy), pt(cx + hair_w, bottom), hair, cv::FILLED, aa, kShift);
  }

  cv::ellipse(img, pt(cx, face_cy), sz(face_w, face_h), 0, 0, 360, skin, cv::FILLED, aa, kShift);

  // Hairline: fringe depth and tilt vary.
  const double fringe = uni(0.26, 0.36);
  const double tilt = uni(-0.04, 0.04);
  std::vector<cv::Point> fringe_poly{pt(cx - face_w - 0.02, 0.22 + dy), pt(cx + face_w + 0.02, 0.22 + dy),
                                     pt(cx + face_w + 0.02, fringe + tilt + dy), pt(cx, fringe + dy - uni(0.0, 0.05)),
                                     pt(cx - face_w - 0.02, fringe - tilt + dy)};
  cv::fillPoly(img, std::vector<std::vector<cv::Point>>{fringe_poly}, hair, aa, kShift);

  // Eyes and brows.
  const double eye_y = 0.44 + dy + uni(-0.01, 0.01);
  const double eye_dx = uni(0.09, 0.12);
  const double eye_w = uni(0.035, 0.05);
  const double eye_h = uni(0.018, 0.03);
  const double brow_lift = uni(0.035, 0.055);
  const int brow_thick = std::max(1, static_cast<int>(std::lround(uni(0.012, 0.03) * s)));
  for (const double side : {-1.0, 1.0}) {
    const double ex = cx + side * eye_dx;
    cv::ellipse(img, pt(ex, eye_y), sz(eye_w, eye_h), 0, 0, 360, rgb(245, 245, 240), cv::FILLED, aa, kShift);
    cv::circle(img, pt(ex, eye_y), static_cast<int>(std::lround(eye_h * 0.9 * s * 16)), iris, cv::FILLED, aa, kShift);
    cv::line(img, pt(ex - eye_w, eye_y - brow_lift), pt(ex + eye_w, eye_y - brow_lift - side * tilt * 0.3), hair,
             brow_thick, aa, kShift);
  }

  // Nose and mouth.
  const cv::Scalar nose = skin * 0.8;
  const double nose_len = uni(0.05, 0.09);
  cv::line(img, pt(cx, 0.50 + dy), pt(cx + uni(-0.01, 0.01), 0.50 + nose_len + dy), nose,
           std::max(1, static_cast<int>(std::lround(0.02 * s))), aa, kShift);
  const double mouth_y = 0.67 + dy + uni(-0.015, 0.015);
  cv::ellipse(img, pt(cx, mouth_y), sz(uni(0.05, 0.10), uni(0.012, 0.03)), 0, 0, 360, lips, cv::FILLED, aa, kShift);

  // Jaw outline.
  cv::ellipse(img, pt(cx, face_cy), sz(face_w, face_h), 0, 20, 160, skin * 0.7,
              std::max(1, static_cast<int>(std::lround(0.012 * s))), aa, kShift);
  return img;
}

}  // namespace

void write_synthetic_faces(const std::string& folder, std::int64_t count, int resolution, std::uint64_t seed) {
  if (count < 1 || resolution < 8) throw ValidationError("synthetic faces need count >= 1 and resolution >= 8");
  fs::create_directories(folder);
  std::mt19937_64 rng(seed);
  for (std::int64_t i = 0; i < count; ++i) {
    const cv::Mat img = render_synthetic_face(rng, resolution);
    char name[32];
    std::snprintf(name, sizeof(name), "face_%06lld.png", static_cast<long long>(i));
    const auto path = (fs::path(folder) / name).string();
    if (!cv::imwrite(path, img)) throw ValidationError("cannot write " + path);
  }
}

}  // namespace puzzlegan
