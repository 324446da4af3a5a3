#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "canet/hash.hpp"
#include "canet/tensor.hpp"

namespace canet {

// Binary-batches record layout: 1 label byte + 3*32*32 pixel bytes (R,G,B planes).
inline constexpr std::size_t kCifarImageBytes = 3072;
inline constexpr std::size_t kCifarRecordBytes = 3073;
inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarChannels = 3;

enum class Split { Train, Test };

inline const char* to_string(Split split) { return split == Split::Train ? "train" : "test"; }

inline std::vector<std::string> cifar10_filenames(Split split) {
  if (split == Split::Test) return {"test_batch.bin"};
  return {"data_batch_1.bin", "data_batch_2.bin", "data_batch_3.bin", "data_batch_4.bin",
          "data_batch_5.bin"};
}

struct Cifar10Set {
  Tensor<float> images;     // (N,3,32,32), values in [0,1] before normalization
  std::vector<int> labels;  // class indices in 0..9
  Split split = Split::Train;
  std::uint64_t source_checksum = 0;  // fnv1a64 over the source files in filename order

  std::size_t size() const { return labels.size(); }
};

namespace detail {

inline std::vector<unsigned char> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw std::runtime_error("load_cifar10_bin: cannot open " + path);
  }
  auto size = static_cast<std::size_t>(in.tellg());
  std::vector<unsigned char> bytes(size);
  in.seekg(0);
  if (size > 0 && !in.read(reinterpret_cast<char*>(bytes.data()), static_cast<long>(size))) {
    throw std::runtime_error("load_cifar10_bin: short read on " + path);
  }
  return bytes;
}

}  // namespace detail

// Loads the split from a directory holding binary batch files. Any positive
// whole number of 3,073-byte records per file is accepted so that reduced
// fixtures in the same layout load through the identical path; counts for the
// canonical dataset (50,000 train / 10,000 test) are asserted by callers that
// require them.
inline Cifar10Set load_cifar10_bin(const std::string& dir, Split split) {
  Cifar10Set set;
  set.split = split;
  std::uint64_t checksum = kFnv1a64Offset;
  std::vector<unsigned char> all_pixels;
  for (const auto& name : cifar10_filenames(split)) {
    const std::string path = dir + "/" + name;
    auto bytes = detail::read_file_bytes(path);
    checksum = fnv1a64(bytes.data(), bytes.size(), checksum);
    if (bytes.empty() || bytes.size() % kCifarRecordBytes != 0) {
      throw std::runtime_error("load_cifar10_bin: " + path + " holds " +
                               std::to_string(bytes.size()) +
                               " bytes, not a positive multiple of 3073");
    }
    const std::size_t records = bytes.size() / kCifarRecordBytes;
    for (std::size_t r = 0; r < records; ++r) {
      const std::size_t offset = r * kCifarRecordBytes;
      const unsigned char label = bytes[offset];
      if (label > 9) {
        throw std::runtime_error("load_cifar10_bin: " + path + ": invalid label " +
                                 std::to_string(static_cast<int>(label)) + " at offset " +
                                 std::to_string(offset));
      }
      set.labels.push_back(static_cast<int>(label));
      all_pixels.insert(all_pixels.end(), bytes.begin() + static_cast<long>(offset) + 1,
                        bytes.begin() + static_cast<long>(offset + kCifarRecordBytes));
    }
  }
  const std::size_t n = set.labels.size();
  set.images = Tensor<float>({n, kCifarChannels, kCifarSide, kCifarSide});
  float* dst = set.images.data();
  for (std::size_t i = 0; i < all_pixels.size(); ++i) {
    dst[i] = static_cast<float>(all_pixels[i]) / 255.0f;
  }
  set.source_checksum = checksum;
  return set;
}

// Re-encodes one loaded record; inverts the /255 scaling exactly.
inline std::vector<unsigned char> encode_record(const Cifar10Set& set, std::size_t index) {
  if (index >= set.size()) {
    throw std::invalid_argument("encode_record: index " + std::to_string(index) +
                                " out of range for " + std::to_string(set.size()) + " records");
  }
  std::vector<unsigned char> record(kCifarRecordBytes);
  record[0] = static_cast<unsigned char>(set.labels[index]);
  const float* src = set.images.data() + index * kCifarImageBytes;
  for (std::size_t i = 0; i < kCifarImageBytes; ++i) {
    record[i + 1] = static_cast<unsigned char>(std::lround(src[i] * 255.0f));
  }
  return record;
}

inline void write_cifar10_file(const std::string& path, const std::vector<int>& labels,
                               const std::vector<unsigned char>& pixels) {
  if (pixels.size() != labels.size() * kCifarImageBytes) {
    throw std::invalid_argument("write_cifar10_file: pixel buffer does not match label count");
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("write_cifar10_file: cannot open " + path);
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || labels[r] > 9) {
      throw std::invalid_argument("write_cifar10_file: label out of range");
    }
    const auto label = static_cast<unsigned char>(labels[r]);
    out.write(reinterpret_cast<const char*>(&label), 1);
    out.write(reinterpret_cast<const char*>(pixels.data() + r * kCifarImageBytes),
              static_cast<long>(kCifarImageBytes));
  }
  if (!out) throw std::runtime_error("write_cifar10_file: short write on " + path);
}

// Generates a reduced stand-in corpus in the binary-batches layout: balanced
// round-robin labels and class-separable channel statistics, so small models
// can reach well above chance within a few epochs.
inline void make_synthetic_cifar10(const std::string& dir, std::size_t records_per_train_file,
                                   std::size_t records_per_test_file, std::uint64_t seed) {
  std::filesystem::create_directories(dir);
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  std::uniform_int_distribution<int> noise(-40, 40);
  auto emit = [&](const std::string& name, std::size_t records, std::size_t label_phase) {
    std::vector<int> labels(records);
    std::vector<unsigned char> pixels(records * kCifarImageBytes);
    for (std::size_t r = 0; r < records; ++r) {
      const int label = static_cast<int>((label_phase + r) % 10);
      labels[r] = label;
      // Distinct per-class channel means, spread over [40, 220].
      const int base[3] = {40 + 20 * label, 220 - 20 * label, 40 + 20 * ((label * 3) % 10)};
      for (std::size_t c = 0; c < kCifarChannels; ++c) {
        for (std::size_t p = 0; p < kCifarSide * kCifarSide; ++p) {
          const int v = std::clamp(base[c] + noise(rng), 0, 255);
          pixels[r * kCifarImageBytes + c * kCifarSide * kCifarSide + p] =
              static_cast<unsigned char>(v);
        }
      }
    }
    write_cifar10_file(dir + "/" + name, labels, pixels);
  };
  std::size_t phase = 0;
  for (const auto& name : cifar10_filenames(Split::Train)) {
    emit(name, records_per_train_file, phase);
    phase += records_per_train_file;
  }
  emit(cifar10_filenames(Split::Test)[0], records_per_test_file, 0);
}

struct NormStats {
  std::array<double, 3> mean{};
  std::array<double, 3> std{};
  std::uint64_t source_checksum = 0;
};

inline NormStats compute_norm_stats(const Cifar10Set& train) {
  if (train.size() == 0) {
    throw std::invalid_argument("compute_norm_stats: empty dataset");
  }
  NormStats stats;
  stats.source_checksum = train.source_checksum;
  const std::size_t n = train.size();
  const std::size_t plane = kCifarSide * kCifarSide;
  for (std::size_t c = 0; c < kCifarChannels; ++c) {
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const float* px = train.images.data() + (i * kCifarChannels + c) * plane;
      for (std::size_t p = 0; p < plane; ++p) {
        sum += px[p];
        sum_sq += static_cast<double>(px[p]) * px[p];
      }
    }
    const double count = static_cast<double>(n * plane);
    const double mean = sum / count;
    const double var = std::max(0.0, sum_sq / count - mean * mean);
    stats.mean[c] = mean;
    stats.std[c] = std::sqrt(var);
    if (stats.std[c] < 1e-8) {
      throw std::runtime_error("compute_norm_stats: degenerate std on channel " +
                               std::to_string(c));
    }
  }
  return stats;
}

inline nlohmann::json norm_stats_to_json(const NormStats& stats) {
  return nlohmann::json{{"mean", stats.mean},
                        {"std", stats.std},
                        {"source_checksum", hex64(stats.source_checksum)}};
}

inline NormStats norm_stats_from_json(const nlohmann::json& j) {
  NormStats stats;
  const auto& mean = j.at("mean");
  const auto& std_dev = j.at("std");
  if (mean.size() != 3 || std_dev.size() != 3) {
    throw std::runtime_error("norm stats: expected 3 channel entries");
  }
  for (std::size_t c = 0; c < 3; ++c) {
    stats.mean[c] = mean[c].get<double>();
    stats.std[c] = std_dev[c].get<double>();
  }
  stats.source_checksum =
      std::stoull(j.at("source_checksum").get<std::string>(), nullptr, 16);
  return stats;
}

inline void save_norm_stats(const std::string& path, const NormStats& stats) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("save_norm_stats: cannot open " + path);
  out << norm_stats_to_json(stats).dump(2) << "\n";
}

inline NormStats load_norm_stats(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("load_norm_stats: cannot open " + path);
  nlohmann::json j;
  in >> j;
  return norm_stats_from_json(j);
}

struct AugmentConfig {
  int pad = 4;
  float flip_prob = 0.5f;
  std::array<float, 3> mean{0.0f, 0.0f, 0.0f};
  std::array<float, 3> std{1.0f, 1.0f, 1.0f};

  void validate() const {
    if (pad < 0) throw std::invalid_argument("AugmentConfig: pad must be >= 0");
    if (!(flip_prob >= 0.0f && flip_prob <= 1.0f)) {
      throw std::invalid_argument("AugmentConfig: flip_prob must be in [0, 1]");
    }
    for (float s : std) {
      if (!(s > 0.0f)) throw std::invalid_argument("AugmentConfig: std must be > 0");
    }
  }
};

inline Tensor<float> hflip(const Tensor<float>& image) {
  check_rank(image, 3, "hflip");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t x = 0; x < w; ++x)
        out.data()[(ch * h + y) * w + x] = image.data()[(ch * h + y) * w + (w - 1 - x)];
  return out;
}

inline Tensor<float> normalize(const Tensor<float>& image, const std::array<float, 3>& mean,
                               const std::array<float, 3>& std_dev) {
  check_rank(image, 3, "normalize");
  if (image.dim(0) != 3) {
    throw std::invalid_argument("normalize: expected 3 channels, got " + image.shape_str());
  }
  Tensor<float> out(image.shape());
  const std::size_t plane = image.dim(1) * image.dim(2);
  for (std::size_t c = 0; c < 3; ++c) {
    const float m = mean[c], inv = 1.0f / std_dev[c];
    const float* src = image.data() + c * plane;
    float* dst = out.data() + c * plane;
    for (std::size_t p = 0; p < plane; ++p) dst[p] = (src[p] - m) * inv;
  }
  return out;
}

// Deterministic core of the train-split pipeline: zero-pad by cfg.pad, take
// the 32x32 (H x W) window at (dy, dx) of the padded canvas, optionally flip,
// then normalize. Offsets range over [0, 2*pad]; (pad, pad) is the identity
// crop.
inline Tensor<float> augment_with(const Tensor<float>& image, const AugmentConfig& cfg, int dy,
                                  int dx, bool flip) {
  check_rank(image, 3, "augment");
  cfg.validate();
  if (dy < 0 || dy > 2 * cfg.pad || dx < 0 || dx > 2 * cfg.pad) {
    throw std::invalid_argument("augment: crop offset outside the padded canvas");
  }
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor<float> out(image.shape());
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < h; ++y) {
      const long sy = static_cast<long>(y) + dy - cfg.pad;
      for (std::size_t x = 0; x < w; ++x) {
        const long sx = static_cast<long>(x) + dx - cfg.pad;
        float v = 0.0f;
        if (sy >= 0 && sy < static_cast<long>(h) && sx >= 0 && sx < static_cast<long>(w)) {
          v = image.data()[(ch * h + static_cast<std::size_t>(sy)) * w +
                           static_cast<std::size_t>(sx)];
        }
        out.data()[(ch * h + y) * w + x] = v;
      }
    }
  }
  if (flip) out = hflip(out);
  return normalize(out, cfg.mean, cfg.std);
}

// Draws crop offsets then the flip decision; the rng stream shape is fixed
// (two offset draws and one flip draw per call) so replays are bit-identical.
inline Tensor<float> augment(const Tensor<float>& image, const AugmentConfig& cfg,
                             std::mt19937& rng) {
  cfg.validate();
  std::uniform_int_distribution<int> offset(0, 2 * cfg.pad);
  const int dy = offset(rng);
  const int dx = offset(rng);
  std::bernoulli_distribution coin(cfg.flip_prob);
  const bool flip = coin(rng);
  return augment_with(image, cfg, dy, dx, flip);
}

struct Batch {
  Tensor<float> images;  // (B,3,32,32), normalized
  std::vector<int> labels;
};

// Epoch-deterministic shuffled batches. The train split runs the full
// pad/crop/flip/normalize pipeline; the test split is normalized only. The
// final partial batch is kept.
class BatchStream {
 public:
  BatchStream(const Cifar10Set& set, std::size_t batch_size, std::uint64_t shuffle_seed,
              std::size_t epoch, const AugmentConfig& cfg)
      : set_(&set), batch_size_(batch_size), cfg_(cfg) {
    if (batch_size_ < 1) throw std::invalid_argument("BatchStream: batch_size must be >= 1");
    cfg_.validate();
    order_.resize(set.size());
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    std::seed_seq order_seq{shuffle_seed, static_cast<std::uint64_t>(epoch),
                            std::uint64_t{0}};
    std::mt19937 order_rng(order_seq);
    std::shuffle(order_.begin(), order_.end(), order_rng);
    std::seed_seq aug_seq{shuffle_seed, static_cast<std::uint64_t>(epoch), std::uint64_t{1}};
    aug_rng_.seed(aug_seq);
  }

  std::size_t num_batches() const {
    return (order_.size() + batch_size_ - 1) / batch_size_;
  }

  // Fills `out` with the next batch; returns false once the epoch is exhausted.
  bool next(Batch& out) {
    if (cursor_ >= order_.size()) return false;
    const std::size_t count = std::min(batch_size_, order_.size() - cursor_);
    out.images = Tensor<float>({count, kCifarChannels, kCifarSide, kCifarSide});
    out.labels.resize(count);
    for (std::size_t b = 0; b < count; ++b) {
      const std::size_t idx = order_[cursor_ + b];
      out.labels[b] = set_->labels[idx];
      Tensor<float> image({kCifarChannels, kCifarSide, kCifarSide});
      std::copy_n(set_->images.data() + idx * kCifarImageBytes, kCifarImageBytes,
                  image.data());
      Tensor<float> processed = set_->split == Split::Train
                                    ? augment(image, cfg_, aug_rng_)
                                    : normalize(image, cfg_.mean, cfg_.std);
      std::copy_n(processed.data(), kCifarImageBytes, out.images.data() + b * kCifarImageBytes);
    }
    cursor_ += count;
    return true;
  }

 private:
  const Cifar10Set* set_;
  std::size_t batch_size_;
  AugmentConfig cfg_;
  std::vector<std::size_t> order_;
  std::mt19937 aug_rng_;
  std::size_t cursor_ = 0;
};

// Seeded random subset for desk-scale runs; n = 0 or n >= size keeps the set.
inline Cifar10Set subset(const Cifar10Set& set, std::size_t n, std::uint64_t seed) {
  if (n == 0 || n >= set.size()) return set;
  std::vector<std::size_t> order(set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937 rng(static_cast<std::mt19937::result_type>(seed));
  std::shuffle(order.begin(), order.end(), rng);
  Cifar10Set out;
  out.split = set.split;
  out.source_checksum = set.source_checksum;
  out.images = Tensor<float>({n, kCifarChannels, kCifarSide, kCifarSide});
  out.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    out.labels[i] = set.labels[order[i]];
    std::copy_n(set.images.data() + order[i] * kCifarImageBytes, kCifarImageBytes,
                out.images.data() + i * kCifarImageBytes);
  }
  return out;
}

}  // namespace canet
