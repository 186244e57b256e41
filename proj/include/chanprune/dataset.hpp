#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "chanprune/tensor.hpp"

namespace chanprune {

enum class Split { train, test };

/// Per-channel normalisation constants applied as (x - mean) / std.
struct Normalization {
  std::vector<double> mean;
  std::vector<double> std;
};

/// Commonly used CIFAR-10 training-set constants.
Normalization cifar10_normalization();

/// Images are stored in single precision to keep a full CIFAR-10 split in a
/// few hundred MB; batches are widened to double.
struct Dataset {
  std::string name;
  Split split = Split::train;
  std::size_t channels = 3;
  std::size_t height = 32;
  std::size_t width = 32;
  std::size_t num_classes = 10;
  std::vector<float> images;  // [N, C, H, W]
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
  std::size_t sample_size() const { return channels * height * width; }
  /// First `n` samples (all when n >= size()).
  Dataset head(std::size_t n) const;
  Dataset select(std::span<const std::size_t> indices) const;
};

struct CifarLoadOptions {
  std::optional<std::size_t> train_limit;  // read only the first records
  std::optional<std::size_t> test_limit;
  std::optional<Normalization> normalization;  // defaults to cifar10_normalization()
};

struct CifarSplits {
  Dataset train;
  Dataset test;
};

inline constexpr std::size_t kCifarRecordBytes = 1 + 3 * 32 * 32;
inline constexpr std::size_t kCifarRecordsPerFile = 10000;

/// Reads data_batch_1..5.bin and test_batch.bin (the binary distribution).
/// Throws IngestionError naming the file that is missing or short.
CifarSplits load_cifar10(const std::string& dir, const CifarLoadOptions& options = {});

/// Parses one binary batch file into [0,1] pixels (no normalisation).
Dataset read_cifar10_file(const std::string& path, Split split, std::optional<std::size_t> limit = {});
/// Writes records in the binary batch layout: label byte, then 1024 R, 1024 G, 1024 B.
void write_cifar10_file(const std::string& path, std::span<const std::uint8_t> pixels, std::span<const int> labels);

/// Writes a complete synthetic dataset in the CIFAR-10 binary layout
/// (5 train files + test file, 10000 records each) for offline use.
void write_cifar10_standin(const std::string& dir, std::uint64_t seed);

Normalization channel_statistics(const Dataset& ds);
void normalize(Dataset& ds, const Normalization& norm);

struct BlobOptions {
  double noise = 0.0;   // per-pixel Gaussian noise std; signal amplitude is 1
  double jitter = 0.0;  // max blob centre shift in pixels
  double color_jitter = 0.0;  // std of per-sample colour perturbation on each blob
  std::size_t distractors = 0;  // extra blobs copied from other classes' prototypes
  std::size_t height = 32;
  std::size_t width = 32;
  Split split = Split::train;  // selects the sample stream; prototypes depend on the seed only
};

/// Class-conditional coloured Gaussian blobs, balanced across classes and
/// fully determined by `seed` and the split. Train and test splits of one
/// seed share class prototypes. Requires n % classes == 0.
Dataset synth_blobs(std::size_t classes, std::size_t n, std::uint64_t seed, const BlobOptions& options = {});

void save_dataset(const Dataset& ds, const std::string& path);
Dataset load_dataset(const std::string& path);

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

/// Deterministic mini-batch view. With drop_last, count() == floor(N / M);
/// otherwise a trailing partial batch is included. Augmentation (pad-4
/// random crop + horizontal flip) draws from a per-batch stream so any batch
/// can be materialised independently.
class Batches {
 public:
  Batches(const Dataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed, bool augment = false,
          bool drop_last = true);

  std::size_t count() const { return count_; }
  std::size_t batch_size() const { return batch_size_; }
  Batch get(std::size_t index) const;
  std::span<const std::size_t> order() const { return order_; }

 private:
  const Dataset* ds_;
  std::size_t batch_size_;
  std::size_t count_;
  std::uint64_t seed_;
  bool augment_;
  std::vector<std::size_t> order_;
};

}  // namespace chanprune
