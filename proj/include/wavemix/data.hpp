#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "wavemix/tensor.hpp"

namespace wavemix {

/// Base of all dataset parsing failures.
struct DataFormatError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct BadMagicError : DataFormatError {
  using DataFormatError::DataFormatError;
};
struct TruncatedFileError : DataFormatError {
  using DataFormatError::DataFormatError;
};
struct CountMismatchError : DataFormatError {
  using DataFormatError::DataFormatError;
};
struct LabelRangeError : DataFormatError {
  using DataFormatError::DataFormatError;
};
struct RecordAlignmentError : DataFormatError {
  using DataFormatError::DataFormatError;
};

struct ChannelStats {
  std::vector<double> mean, std;  // of pixel / 255, population std
};

/// Images kept as raw bytes (N, C, H, W); float batches are produced on demand
/// as (pixel / 255 - mean_c) / max(std_c, 1e-6).
struct Dataset {
  std::string name;
  Index channels = 0, height = 0, width = 0;
  Index num_classes = 0;
  std::vector<std::uint8_t> pixels;
  std::vector<int> labels;
  std::vector<int> coarse_labels;  // CIFAR-100 only
  ChannelStats stats;              // applied when materializing batches

  Index size() const { return static_cast<Index>(labels.size()); }
  Index image_size() const { return channels * height * width; }

  /// Standardized images for the given sample indices, (B, C, H, W).
  template <typename T>
  Tensor<T> images(std::span<const Index> indices) const;
  std::vector<int> labels_at(std::span<const Index> indices) const;
  /// First n samples (or all if n >= size()).
  Dataset head(Index n) const;
};

/// Per-channel mean/std of pixel/255 over the whole dataset, accumulated in double.
ChannelStats compute_channel_stats(const Dataset& ds);

struct IdxOptions {
  Index num_classes = 10;
  /// Stored images are transposed (EMNIST); swap rows and columns on load.
  bool transposed = false;
  /// Subtracted from stored labels (EMNIST letters are 1-based).
  int label_offset = 0;
};

/// Images file: magic 0x00000803, n, rows, cols; labels file: 0x00000801, n.
/// Big-endian u32 header fields followed by uint8 payload.
Dataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                 const IdxOptions& options = {});
/// Inverse of load_idx with the same options.
void write_idx(const Dataset& ds, const std::filesystem::path& images, const std::filesystem::path& labels,
               const IdxOptions& options = {});

enum class CifarVariant { c10, c100 };

/// Concatenates binary record files. c10 records: label, 3072 pixels;
/// c100 records: coarse label, fine label, 3072 pixels. Fine labels are used.
Dataset load_cifar(std::span<const std::filesystem::path> files, CifarVariant variant);
void write_cifar(const Dataset& ds, const std::filesystem::path& file, CifarVariant variant);

struct DatasetSplits {
  Dataset train, test;
};

/// Known dataset names: mnist, fashion-mnist, emnist-{balanced,byclass,bymerge,
/// digits,letters,mnist}, cifar10, cifar100. Files are looked up in `dir` under
/// their distribution names (uncompressed). Both splits get train statistics.
DatasetSplits load_dataset(const std::string& name, const std::filesystem::path& dir);
std::vector<std::string> known_datasets();
/// Channels, side length and class count of a known dataset.
struct DatasetShape {
  Index channels, height, width, num_classes;
};
DatasetShape dataset_shape(const std::string& name);

/// Fisher-Yates shuffle of 0..n-1 seeded by (seed, epoch).
std::vector<Index> epoch_permutation(Index n, std::uint64_t seed, std::uint64_t epoch);

template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

/// One pass over a dataset in the order given by epoch_permutation (or in
/// storage order when shuffle is false). The final short batch is kept.
template <typename T>
class BatchIterator {
 public:
  BatchIterator(const Dataset& ds, Index batch_size, std::uint64_t seed, std::uint64_t epoch, bool shuffle = true);

  std::optional<Batch<T>> next();
  Index num_batches() const;
  const std::vector<Index>& order() const { return order_; }

 private:
  const Dataset* ds_;
  Index batch_size_;
  std::vector<Index> order_;
  Index cursor_ = 0;
};

}  // namespace wavemix
