#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <torch/torch.h>

namespace puzzlegan {

struct DatasetManifest {
  std::string root;
  std::int64_t count = 0;
  std::int64_t resolution = 0;
  std::string alignment_note;
  std::string normalization = "[-1,1]";
  std::uint64_t split_seed = 0;
  std::vector<std::string> files;    // ingested, in store order
  std::vector<std::string> skipped;  // unreadable or undecodable
};

// Fixed-order, random-access set of preprocessed RGB images in [-1, 1].
class ImageStore {
 public:
  ImageStore() = default;
  // `images` is [N, 3, R, R] float32.
  explicit ImageStore(torch::Tensor images);

  std::int64_t count() const { return images_.defined() ? images_.size(0) : 0; }
  std::int64_t resolution() const { return images_.defined() ? images_.size(2) : 0; }
  std::int64_t channels() const { return images_.defined() ? images_.size(1) : 0; }

  // [3, R, R] view of image i.
  torch::Tensor image(std::int64_t i) const;
  // Copy of the listed images, [B, 3, R, R].
  torch::Tensor gather(std::span<const std::int64_t> indices) const;
  const torch::Tensor& images() const { return images_; }

 private:
  torch::Tensor images_;
};

struct IngestOptions {
  std::string alignment_note =
      "assumed aligned: concepts must sit at roughly the same position in every image";
  std::uint64_t split_seed = 0;
  std::function<void(const std::string&)> warn;  // receives skipped-file messages
};

struct IngestResult {
  DatasetManifest manifest;
  ImageStore store;
};

// Reads every decodable image in `folder` (sorted by file name), center
// crops to square, resizes to target_resolution and maps [0, 255] to
// [-1, 1]. Throws ValidationError if nothing usable is found.
IngestResult ingest(const std::string& folder, std::int64_t target_resolution, const IngestOptions& options = {});

// Store container: magic, version, count, resolution, channels, dtype code,
// then count fixed-stride float32 records.
void save_store(const std::string& path, const ImageStore& store);
ImageStore load_store(const std::string& path);

void write_manifest(const std::string& path, const DatasetManifest& manifest);
DatasetManifest read_manifest(const std::string& path);

// FNV-1a over the raw store bytes.
std::uint64_t store_hash(const ImageStore& store);

// Writes each image as a lossless PNG named 000000.png, 000001.png, ...
void export_store_images(const ImageStore& store, const std::string& folder);

// Seeded shuffled epochs over a store. Every epoch visits each image once;
// the final batch of an epoch may be short.
class BatchIterator {
 public:
  BatchIterator(const ImageStore& store, std::int64_t batch_size, std::uint64_t seed);

  std::vector<std::int64_t> next_indices();
  torch::Tensor next();
  std::int64_t epoch() const { return epoch_; }

 private:
  void reshuffle();

  const ImageStore* store_;
  std::int64_t batch_size_;
  std::mt19937_64 rng_;
  std::vector<std::int64_t> order_;
  std::size_t cursor_ = 0;
  std::int64_t epoch_ = 0;
};

// Procedurally drawn, aligned, face-like RGB images (background, hair,
// hairline, eyes, nose, mouth and face outline vary independently), used
// as a stand-in dataset. Files are written as PNG, deterministic in seed.
void write_synthetic_faces(const std::string& folder, std::int64_t count, int resolution, std::uint64_t seed);

}  // namespace puzzlegan
