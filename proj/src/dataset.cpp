#include "chanprune/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "chanprune/errors.hpp"
#include "chanprune/random.hpp"
#include "chanprune/serialize.hpp"

namespace chanprune {

Normalization cifar10_normalization() { return {{0.4914, 0.4822, 0.4465}, {0.2470, 0.2435, 0.2616}}; }

Dataset Dataset::head(std::size_t n) const {
  n = std::min(n, size());
  Dataset out = *this;
  out.labels.resize(n);
  out.images.resize(n * sample_size());
  return out;
}

Dataset Dataset::select(std::span<const std::size_t> indices) const {
  Dataset out;
  out.name = name;
  out.split = split;
  out.channels = channels;
  out.height = height;
  out.width = width;
  out.num_classes = num_classes;
  const std::size_t s = sample_size();
  out.images.reserve(indices.size() * s);
  for (std::size_t i : indices) {
    if (i >= size()) throw ConfigError("dataset index " + std::to_string(i) + " out of range");
    out.images.insert(out.images.end(), images.begin() + static_cast<long>(i * s),
                      images.begin() + static_cast<long>((i + 1) * s));
    out.labels.push_back(labels[i]);
  }
  return out;
}

Dataset read_cifar10_file(const std::string& path, Split split, std::optional<std::size_t> limit) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IngestionError("missing CIFAR-10 file '" + path + "'");
  const std::size_t records = std::min(limit.value_or(kCifarRecordsPerFile), kCifarRecordsPerFile);
  std::vector<unsigned char> raw(records * kCifarRecordBytes);
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (static_cast<std::size_t>(in.gcount()) != raw.size())
    throw IngestionError("short CIFAR-10 file '" + path + "': expected " + std::to_string(raw.size()) +
                         " bytes, got " + std::to_string(in.gcount()));
  Dataset ds;
  ds.name = "cifar10";
  ds.split = split;
  ds.images.resize(records * 3072);
  ds.labels.resize(records);
  for (std::size_t r = 0; r < records; ++r) {
    const unsigned char* rec = raw.data() + r * kCifarRecordBytes;
    if (rec[0] > 9) throw IngestionError("CIFAR-10 file '" + path + "': label byte out of range");
    ds.labels[r] = rec[0];
    for (std::size_t i = 0; i < 3072; ++i) ds.images[r * 3072 + i] = static_cast<float>(rec[1 + i] / 255.0);
  }
  return ds;
}

void write_cifar10_file(const std::string& path, std::span<const std::uint8_t> pixels, std::span<const int> labels) {
  if (pixels.size() != labels.size() * 3072) throw ConfigError("pixel buffer does not match label count");
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IngestionError("cannot write '" + path + "'");
  for (std::size_t r = 0; r < labels.size(); ++r) {
    out.put(static_cast<char>(labels[r]));
    out.write(reinterpret_cast<const char*>(pixels.data() + r * 3072), 3072);
  }
  if (!out) throw IngestionError("short write to '" + path + "'");
}

CifarSplits load_cifar10(const std::string& dir, const CifarLoadOptions& options) {
  namespace fs = std::filesystem;
  CifarSplits out;
  std::size_t want = options.train_limit.value_or(5 * kCifarRecordsPerFile);
  for (int f = 1; f <= 5 && want > 0; ++f) {
    const std::size_t take = std::min(want, kCifarRecordsPerFile);
    Dataset part = read_cifar10_file((fs::path(dir) / ("data_batch_" + std::to_string(f) + ".bin")).string(),
                                     Split::train, take);
    if (f == 1)
      out.train = std::move(part);
    else {
      out.train.images.insert(out.train.images.end(), part.images.begin(), part.images.end());
      out.train.labels.insert(out.train.labels.end(), part.labels.begin(), part.labels.end());
    }
    want -= take;
  }
  out.test = read_cifar10_file((fs::path(dir) / "test_batch.bin").string(), Split::test, options.test_limit);
  const Normalization norm = options.normalization.value_or(cifar10_normalization());
  normalize(out.train, norm);
  normalize(out.test, norm);
  return out;
}

Normalization channel_statistics(const Dataset& ds) {
  Normalization n;
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t c = 0; c < ds.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (std::size_t i = 0; i < ds.size(); ++i) {
      const float* p = ds.images.data() + i * ds.sample_size() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) {
        sum += p[k];
        sq += static_cast<double>(p[k]) * p[k];
      }
    }
    const double count = static_cast<double>(ds.size() * plane);
    const double mean = sum / count;
    n.mean.push_back(mean);
    n.std.push_back(std::sqrt(std::max(sq / count - mean * mean, 1e-12)));
  }
  return n;
}

void normalize(Dataset& ds, const Normalization& norm) {
  if (norm.mean.size() != ds.channels || norm.std.size() != ds.channels)
    throw ConfigError("normalisation constants do not match channel count");
  const std::size_t plane = ds.height * ds.width;
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t c = 0; c < ds.channels; ++c) {
      float* p = ds.images.data() + i * ds.sample_size() + c * plane;
      for (std::size_t k = 0; k < plane; ++k) p[k] = static_cast<float>((p[k] - norm.mean[c]) / norm.std[c]);
    }
}

namespace {

struct Blob {
  double cy, cx, sigma;
  std::vector<double> color;
};

std::vector<std::vector<Blob>> make_prototypes(std::size_t classes, std::size_t channels, const BlobOptions& o,
                                               std::uint64_t seed) {
  std::mt19937_64 rng(derive_seed(seed, "prototypes"));
  std::uniform_real_distribution<double> cy(o.height * 0.25, o.height * 0.75), cx(o.width * 0.25, o.width * 0.75);
  std::uniform_real_distribution<double> sigma(o.height / 10.0, o.height / 5.0), color(-1.0, 1.0);
  std::vector<std::vector<Blob>> protos(classes);
  for (auto& p : protos)
    for (int b = 0; b < 2; ++b) {
      Blob blob{cy(rng), cx(rng), sigma(rng), {}};
      for (std::size_t c = 0; c < channels; ++c) blob.color.push_back(color(rng));
      p.push_back(std::move(blob));
    }
  return protos;
}

// Renders one sample of `label` into `out` (signal amplitude ~1 plus noise).
void render_blob(const std::vector<std::vector<Blob>>& protos, std::size_t label, const BlobOptions& o,
                 std::size_t channels, std::mt19937_64& rng, float* out) {
  std::uniform_real_distribution<double> shift(-o.jitter, o.jitter), amp(0.8, 1.2);
  std::normal_distribution<double> noise(0.0, 1.0);
  const std::size_t plane = o.height * o.width;
  std::fill(out, out + channels * plane, 0.0f);
  std::vector<Blob> blobs = protos[label];
  for (std::size_t d = 0; d < o.distractors && protos.size() > 1; ++d) {
    std::uniform_int_distribution<std::size_t> other(0, protos.size() - 2), which(0, protos[0].size() - 1);
    std::size_t c = other(rng);
    if (c >= label) ++c;
    blobs.push_back(protos[c][which(rng)]);
  }
  for (auto& b : blobs) {
    const double dy = o.jitter > 0 ? shift(rng) : 0.0, dx = o.jitter > 0 ? shift(rng) : 0.0, a = amp(rng);
    if (o.color_jitter > 0)
      for (double& v : b.color) v += o.color_jitter * noise(rng);
    for (std::size_t y = 0; y < o.height; ++y)
      for (std::size_t x = 0; x < o.width; ++x) {
        const double ry = static_cast<double>(y) - b.cy - dy, rx = static_cast<double>(x) - b.cx - dx;
        const double g = a * std::exp(-(ry * ry + rx * rx) / (2.0 * b.sigma * b.sigma));
        for (std::size_t c = 0; c < channels; ++c) out[c * plane + y * o.width + x] += static_cast<float>(g * b.color[c]);
      }
  }
  if (o.noise > 0)
    for (std::size_t i = 0; i < channels * plane; ++i) out[i] += static_cast<float>(o.noise * noise(rng));
}

}  // namespace

Dataset synth_blobs(std::size_t classes, std::size_t n, std::uint64_t seed, const BlobOptions& options) {
  if (classes == 0 || n % classes != 0)
    throw ConfigError("synth_blobs: n=" + std::to_string(n) + " is not divisible by classes=" + std::to_string(classes));
  Dataset ds;
  ds.name = "blobs";
  ds.split = options.split;
  ds.height = options.height;
  ds.width = options.width;
  ds.num_classes = classes;
  ds.images.resize(n * ds.sample_size());
  ds.labels.resize(n);
  const auto protos = make_prototypes(classes, ds.channels, options, seed);
  std::mt19937_64 rng(derive_seed(seed, options.split == Split::train ? "train-samples" : "test-samples"));
  for (std::size_t i = 0; i < n; ++i) {
    ds.labels[i] = static_cast<int>(i % classes);
    render_blob(protos, i % classes, options, ds.channels, rng, ds.images.data() + i * ds.sample_size());
  }
  return ds;
}

void write_cifar10_standin(const std::string& dir, std::uint64_t seed) {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  // Noisy, jittered blobs plus one blob borrowed from another class:
  // resnet8 lands around 75-85% on 10k images, so pruning damage is visible.
  BlobOptions o;
  o.noise = 1.0;
  o.jitter = 5.0;
  o.color_jitter = 0.15;
  o.distractors = 1;
  const auto protos = make_prototypes(10, 3, o, seed);
  for (int f = 0; f <= 5; ++f) {
    std::mt19937_64 rng(derive_seed(seed, static_cast<std::uint64_t>(f)));
    std::vector<int> labels(kCifarRecordsPerFile);
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = static_cast<int>(i % 10);
    std::shuffle(labels.begin(), labels.end(), rng);
    std::vector<std::uint8_t> pixels(labels.size() * 3072);
    std::vector<float> sample(3072);
    for (std::size_t i = 0; i < labels.size(); ++i) {
      render_blob(protos, static_cast<std::size_t>(labels[i]), o, 3, rng, sample.data());
      for (std::size_t k = 0; k < 3072; ++k)
        pixels[i * 3072 + k] = static_cast<std::uint8_t>(std::clamp(std::lround(127.5 + 40.0 * sample[k]), 0L, 255L));
    }
    const std::string name = f == 0 ? "test_batch.bin" : "data_batch_" + std::to_string(f) + ".bin";
    write_cifar10_file((fs::path(dir) / name).string(), pixels, labels);
  }
}

void save_dataset(const Dataset& ds, const std::string& path) {
  Container c;
  c.header["format"] = "chanprune-dataset/1";
  c.header["name"] = ds.name;
  c.header["split"] = ds.split == Split::train ? "train" : "test";
  c.header["num_classes"] = ds.num_classes;
  c.header["manifest"] = nlohmann::ordered_json::array();
  c.header["manifest"].push_back({{"role", "images"}, {"shape", {ds.size(), ds.channels, ds.height, ds.width}}});
  c.header["manifest"].push_back({{"role", "labels"}, {"shape", {ds.size()}}});
  c.arrays.emplace_back(ds.images.begin(), ds.images.end());
  c.arrays.emplace_back(ds.labels.begin(), ds.labels.end());
  write_container(path, c);
}

Dataset load_dataset(const std::string& path) {
  const Container c = read_container(path);
  try {
    if (c.header.value("format", "") != "chanprune-dataset/1" || c.arrays.size() != 2)
      throw IngestionError(path + ": not a chanprune dataset");
    Dataset ds;
    ds.name = c.header.at("name").get<std::string>();
    ds.split = c.header.at("split") == "test" ? Split::test : Split::train;
    ds.num_classes = c.header.at("num_classes").get<std::size_t>();
    const auto shape = c.header.at("manifest")[0].at("shape").get<Shape>();
    if (shape.size() != 4) throw IngestionError(path + ": bad image shape");
    ds.channels = shape[1];
    ds.height = shape[2];
    ds.width = shape[3];
    ds.images.assign(c.arrays[0].begin(), c.arrays[0].end());
    for (double v : c.arrays[1]) ds.labels.push_back(static_cast<int>(v));
    if (ds.images.size() != ds.size() * ds.sample_size()) throw IngestionError(path + ": image data truncated");
    return ds;
  } catch (const nlohmann::json::exception& e) {
    throw IngestionError(path + ": malformed header: " + e.what());
  }
}

Batches::Batches(const Dataset& ds, std::size_t batch_size, bool shuffle, std::uint64_t seed, bool augment,
                 bool drop_last)
    : ds_(&ds), batch_size_(batch_size), seed_(seed), augment_(augment) {
  if (batch_size == 0 || batch_size > ds.size())
    throw ConfigError("batch size " + std::to_string(batch_size) + " must be in [1, " + std::to_string(ds.size()) +
                      "]");
  count_ = drop_last ? ds.size() / batch_size : (ds.size() + batch_size - 1) / batch_size;
  order_.resize(ds.size());
  std::iota(order_.begin(), order_.end(), 0);
  if (shuffle) {
    std::mt19937_64 rng(derive_seed(seed, "shuffle"));
    std::shuffle(order_.begin(), order_.end(), rng);
  }
}

Batch Batches::get(std::size_t index) const {
  if (index >= count_) throw ConfigError("batch index out of range");
  const Dataset& ds = *ds_;
  const std::size_t first = index * batch_size_;
  const std::size_t m = std::min(batch_size_, ds.size() - first);
  const std::size_t C = ds.channels, H = ds.height, W = ds.width, s = ds.sample_size();
  Batch b{Tensor({m, C, H, W}), std::vector<int>(m)};
  std::mt19937_64 rng(derive_seed(seed_, index));
  std::uniform_int_distribution<int> offset(0, 8), coin(0, 1);
  for (std::size_t j = 0; j < m; ++j) {
    const std::size_t src = order_[first + j];
    b.labels[j] = ds.labels[src];
    const float* in = ds.images.data() + src * s;
    double* out = b.images.values.data() + j * s;
    if (!augment_) {
      std::copy(in, in + s, out);
      continue;
    }
    const long dy = offset(rng) - 4, dx = offset(rng) - 4;
    const bool flip = coin(rng) == 1;
    for (std::size_t c = 0; c < C; ++c)
      for (std::size_t y = 0; y < H; ++y)
        for (std::size_t x = 0; x < W; ++x) {
          const long sy = static_cast<long>(y) + dy;
          const long sx0 = static_cast<long>(flip ? W - 1 - x : x) + dx;
          const bool inside = sy >= 0 && sy < static_cast<long>(H) && sx0 >= 0 && sx0 < static_cast<long>(W);
          out[(c * H + y) * W + x] = inside ? in[(c * H + static_cast<std::size_t>(sy)) * W + static_cast<std::size_t>(sx0)] : 0.0;
        }
  }
  return b;
}

}  // namespace chanprune
