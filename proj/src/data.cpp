#include "wavemix/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>

#include "wavemix/rng.hpp"

namespace fs = std::filesystem;

namespace wavemix {

namespace {

std::vector<std::uint8_t> read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataFormatError("cannot open " + path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

void write_file(const fs::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("short write to " + path.string());
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t offset) {
  return (std::uint32_t{b[offset]} << 24) | (std::uint32_t{b[offset + 1]} << 16) |
         (std::uint32_t{b[offset + 2]} << 8) | std::uint32_t{b[offset + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int s = 24; s >= 0; s -= 8) b.push_back(static_cast<std::uint8_t>(v >> s));
}

void check_idx(const std::vector<std::uint8_t>& b, const fs::path& path, std::uint32_t magic, std::size_t header) {
  if (b.size() < 4) throw TruncatedFileError(path.string() + ": file too short for an IDX header");
  const std::uint32_t got = read_be32(b, 0);
  if (got != magic) {
    char msg[64];
    std::snprintf(msg, sizeof msg, ": bad IDX magic 0x%08x (expected 0x%08x)", got, magic);
    throw BadMagicError(path.string() + msg);
  }
  if (b.size() < header) throw TruncatedFileError(path.string() + ": truncated IDX header");
}

void transpose_images(std::vector<std::uint8_t>& px, Index n, Index rows, Index cols) {
  std::vector<std::uint8_t> tmp(static_cast<std::size_t>(rows * cols));
  for (Index i = 0; i < n; ++i) {
    std::uint8_t* img = px.data() + i * rows * cols;
    for (Index r = 0; r < rows; ++r)
      for (Index c = 0; c < cols; ++c) tmp[static_cast<std::size_t>(c * rows + r)] = img[r * cols + c];
    std::copy(tmp.begin(), tmp.end(), img);
  }
}

}  // namespace

// ---------------------------------------------------------------- Dataset

template <typename T>
Tensor<T> Dataset::images(std::span<const Index> indices) const {
  const Index plane = height * width, isz = image_size();
  std::vector<T> out(static_cast<std::size_t>(static_cast<Index>(indices.size()) * isz));
  std::vector<double> mean(static_cast<std::size_t>(channels), 0.0), inv(static_cast<std::size_t>(channels), 1.0);
  for (Index c = 0; c < channels && static_cast<std::size_t>(c) < stats.mean.size(); ++c) {
    mean[static_cast<std::size_t>(c)] = stats.mean[static_cast<std::size_t>(c)];
    inv[static_cast<std::size_t>(c)] = 1.0 / std::max(stats.std[static_cast<std::size_t>(c)], 1e-6);
  }
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Index idx = indices[b];
    if (idx < 0 || idx >= size()) throw std::out_of_range("Dataset::images: index " + std::to_string(idx));
    const std::uint8_t* src = pixels.data() + idx * isz;
    T* dst = out.data() + static_cast<Index>(b) * isz;
    for (Index c = 0; c < channels; ++c) {
      const double m = mean[static_cast<std::size_t>(c)], s = inv[static_cast<std::size_t>(c)];
      for (Index p = 0; p < plane; ++p) {
        dst[c * plane + p] = static_cast<T>((src[c * plane + p] / 255.0 - m) * s);
      }
    }
  }
  return Tensor<T>::from({static_cast<Index>(indices.size()), channels, height, width}, std::move(out));
}

std::vector<int> Dataset::labels_at(std::span<const Index> indices) const {
  std::vector<int> out;
  out.reserve(indices.size());
  for (Index i : indices) out.push_back(labels.at(static_cast<std::size_t>(i)));
  return out;
}

Dataset Dataset::head(Index n) const {
  Dataset d = *this;
  n = std::clamp<Index>(n, 0, size());
  d.pixels.resize(static_cast<std::size_t>(n * image_size()));
  d.labels.resize(static_cast<std::size_t>(n));
  if (!d.coarse_labels.empty()) d.coarse_labels.resize(static_cast<std::size_t>(n));
  return d;
}

ChannelStats compute_channel_stats(const Dataset& ds) {
  ChannelStats s;
  const Index plane = ds.height * ds.width;
  const double count = static_cast<double>(ds.size() * plane);
  for (Index c = 0; c < ds.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    for (Index i = 0; i < ds.size(); ++i) {
      const std::uint8_t* p = ds.pixels.data() + i * ds.image_size() + c * plane;
      for (Index k = 0; k < plane; ++k) {
        const double v = p[k] / 255.0;
        sum += v;
        sq += v * v;
      }
    }
    const double mean = count > 0 ? sum / count : 0.0;
    const double var = count > 0 ? std::max(0.0, sq / count - mean * mean) : 0.0;
    s.mean.push_back(mean);
    s.std.push_back(std::sqrt(var));
  }
  return s;
}

// ---------------------------------------------------------------- IDX

Dataset load_idx(const fs::path& images, const fs::path& labels, const IdxOptions& options) {
  const auto ib = read_file(images);
  check_idx(ib, images, 0x00000803u, 16);
  const Index n = read_be32(ib, 4), rows = read_be32(ib, 8), cols = read_be32(ib, 12);
  const auto payload = static_cast<std::size_t>(n * rows * cols);
  if (ib.size() < 16 + payload) {
    throw TruncatedFileError(images.string() + ": header declares " + std::to_string(n) + " images of " +
                             std::to_string(rows) + "x" + std::to_string(cols) + " but the payload holds " +
                             std::to_string(ib.size() - 16) + " bytes");
  }
  if (ib.size() > 16 + payload) throw DataFormatError(images.string() + ": trailing bytes after IDX payload");

  const auto lb = read_file(labels);
  check_idx(lb, labels, 0x00000801u, 8);
  const Index nl = read_be32(lb, 4);
  if (lb.size() < 8 + static_cast<std::size_t>(nl)) throw TruncatedFileError(labels.string() + ": truncated label payload");
  if (lb.size() > 8 + static_cast<std::size_t>(nl)) throw DataFormatError(labels.string() + ": trailing bytes after IDX payload");
  if (nl != n) {
    throw CountMismatchError(images.string() + " holds " + std::to_string(n) + " images but " + labels.string() +
                             " holds " + std::to_string(nl) + " labels");
  }

  Dataset ds;
  ds.name = images.filename().string();
  ds.channels = 1;
  ds.height = options.transposed ? cols : rows;
  ds.width = options.transposed ? rows : cols;
  ds.num_classes = options.num_classes;
  ds.pixels.assign(ib.begin() + 16, ib.end());
  if (options.transposed) transpose_images(ds.pixels, n, rows, cols);
  ds.labels.reserve(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) {
    const int label = int{lb[static_cast<std::size_t>(8 + i)]} - options.label_offset;
    if (label < 0 || label >= options.num_classes) {
      throw LabelRangeError(labels.string() + ": label " + std::to_string(lb[static_cast<std::size_t>(8 + i)]) +
                            " at index " + std::to_string(i) + " is outside [0, " +
                            std::to_string(options.num_classes) + ")" +
                            (options.label_offset ? " after offset " + std::to_string(options.label_offset) : ""));
    }
    ds.labels.push_back(label);
  }
  return ds;
}

void write_idx(const Dataset& ds, const fs::path& images, const fs::path& labels, const IdxOptions& options) {
  if (ds.channels != 1) throw std::invalid_argument("write_idx: IDX image files hold single-channel images");
  std::vector<std::uint8_t> ib;
  put_be32(ib, 0x00000803u);
  put_be32(ib, static_cast<std::uint32_t>(ds.size()));
  const Index rows = options.transposed ? ds.width : ds.height, cols = options.transposed ? ds.height : ds.width;
  put_be32(ib, static_cast<std::uint32_t>(rows));
  put_be32(ib, static_cast<std::uint32_t>(cols));
  std::vector<std::uint8_t> px = ds.pixels;
  if (options.transposed) transpose_images(px, ds.size(), ds.height, ds.width);
  ib.insert(ib.end(), px.begin(), px.end());
  write_file(images, ib);

  std::vector<std::uint8_t> lb;
  put_be32(lb, 0x00000801u);
  put_be32(lb, static_cast<std::uint32_t>(ds.size()));
  for (int l : ds.labels) lb.push_back(static_cast<std::uint8_t>(l + options.label_offset));
  write_file(labels, lb);
}

// ---------------------------------------------------------------- CIFAR

Dataset load_cifar(std::span<const fs::path> files, CifarVariant variant) {
  const std::size_t label_bytes = variant == CifarVariant::c10 ? 1 : 2;
  const std::size_t record = label_bytes + 3072;
  const int classes = variant == CifarVariant::c10 ? 10 : 100;
  Dataset ds;
  ds.name = variant == CifarVariant::c10 ? "cifar10" : "cifar100";
  ds.channels = 3;
  ds.height = ds.width = 32;
  ds.num_classes = classes;
  for (const auto& f : files) {
    const auto b = read_file(f);
    if (b.size() % record != 0) {
      throw RecordAlignmentError(f.string() + ": size " + std::to_string(b.size()) + " is not a multiple of the " +
                                 std::to_string(record) + "-byte record");
    }
    for (std::size_t off = 0; off < b.size(); off += record) {
      const int label = b[off + label_bytes - 1];
      if (label >= classes) {
        throw LabelRangeError(f.string() + ": label " + std::to_string(label) + " at record " +
                              std::to_string(off / record) + " is outside [0, " + std::to_string(classes) + ")");
      }
      if (variant == CifarVariant::c100) ds.coarse_labels.push_back(b[off]);
      ds.labels.push_back(label);
      ds.pixels.insert(ds.pixels.end(), b.begin() + static_cast<std::ptrdiff_t>(off + label_bytes),
                       b.begin() + static_cast<std::ptrdiff_t>(off + record));
    }
  }
  return ds;
}

void write_cifar(const Dataset& ds, const fs::path& file, CifarVariant variant) {
  if (ds.channels != 3 || ds.height != 32 || ds.width != 32) {
    throw std::invalid_argument("write_cifar: CIFAR records hold 3x32x32 images");
  }
  std::vector<std::uint8_t> b;
  for (Index i = 0; i < ds.size(); ++i) {
    if (variant == CifarVariant::c100) {
      b.push_back(static_cast<std::uint8_t>(ds.coarse_labels.empty() ? 0 : ds.coarse_labels[static_cast<std::size_t>(i)]));
    }
    b.push_back(static_cast<std::uint8_t>(ds.labels[static_cast<std::size_t>(i)]));
    const auto* p = ds.pixels.data() + i * 3072;
    b.insert(b.end(), p, p + 3072);
  }
  write_file(file, b);
}

// ---------------------------------------------------------------- registry

namespace {

enum class Format { idx, cifar10, cifar100 };

struct Entry {
  Format format;
  std::string prefix;  // IDX file-name prefix ("" for MNIST layout)
  Index classes;
  bool transposed = false;
  int label_offset = 0;
};

const std::map<std::string, Entry>& registry() {
  static const std::map<std::string, Entry> r = {
      {"mnist", {Format::idx, "", 10}},
      {"fashion-mnist", {Format::idx, "", 10}},
      {"emnist-balanced", {Format::idx, "emnist-balanced-", 47, true}},
      {"emnist-byclass", {Format::idx, "emnist-byclass-", 62, true}},
      {"emnist-bymerge", {Format::idx, "emnist-bymerge-", 47, true}},
      {"emnist-digits", {Format::idx, "emnist-digits-", 10, true}},
      {"emnist-letters", {Format::idx, "emnist-letters-", 26, true, 1}},
      {"emnist-mnist", {Format::idx, "emnist-mnist-", 10, true}},
      {"cifar10", {Format::cifar10, "", 10}},
      {"cifar100", {Format::cifar100, "", 100}},
  };
  return r;
}

const Entry& lookup(const std::string& name) {
  const auto it = registry().find(name);
  if (it == registry().end()) {
    std::string known;
    for (const auto& [k, v] : registry()) known += (known.empty() ? "" : ", ") + k;
    throw std::invalid_argument("unknown dataset '" + name + "' (known: " + known + ")");
  }
  return it->second;
}

}  // namespace

std::vector<std::string> known_datasets() {
  std::vector<std::string> out;
  for (const auto& [k, v] : registry()) out.push_back(k);
  return out;
}

DatasetShape dataset_shape(const std::string& name) {
  const Entry& e = lookup(name);
  if (e.format == Format::idx) return {1, 28, 28, e.classes};
  return {3, 32, 32, e.classes};
}

DatasetSplits load_dataset(const std::string& name, const fs::path& dir) {
  const Entry& e = lookup(name);
  DatasetSplits s;
  if (e.format == Format::idx) {
    const IdxOptions opt{e.classes, e.transposed, e.label_offset};
    // MNIST and Fashion-MNIST name the test split "t10k", EMNIST "test".
    const std::string test = e.prefix.empty() ? "t10k" : "test";
    s.train = load_idx(dir / (e.prefix + "train-images-idx3-ubyte"), dir / (e.prefix + "train-labels-idx1-ubyte"), opt);
    s.test = load_idx(dir / (e.prefix + test + "-images-idx3-ubyte"), dir / (e.prefix + test + "-labels-idx1-ubyte"), opt);
  } else if (e.format == Format::cifar10) {
    std::vector<fs::path> train;
    for (int i = 1; i <= 5; ++i) train.push_back(dir / ("data_batch_" + std::to_string(i) + ".bin"));
    const fs::path test[] = {dir / "test_batch.bin"};
    s.train = load_cifar(train, CifarVariant::c10);
    s.test = load_cifar(test, CifarVariant::c10);
  } else {
    const fs::path train[] = {dir / "train.bin"};
    const fs::path test[] = {dir / "test.bin"};
    s.train = load_cifar(train, CifarVariant::c100);
    s.test = load_cifar(test, CifarVariant::c100);
  }
  s.train.name = name + ":train";
  s.test.name = name + ":test";
  s.train.stats = compute_channel_stats(s.train);
  s.test.stats = s.train.stats;
  return s;
}

// ---------------------------------------------------------------- batching

std::vector<Index> epoch_permutation(Index n, std::uint64_t seed, std::uint64_t epoch) {
  std::vector<Index> p(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) p[static_cast<std::size_t>(i)] = i;
  Rng rng(seed, 0x5eed0000u + epoch);
  for (Index i = n - 1; i > 0; --i) {
    const auto j = static_cast<Index>(rng.below(static_cast<std::uint64_t>(i + 1)));
    std::swap(p[static_cast<std::size_t>(i)], p[static_cast<std::size_t>(j)]);
  }
  return p;
}

template <typename T>
BatchIterator<T>::BatchIterator(const Dataset& ds, Index batch_size, std::uint64_t seed, std::uint64_t epoch,
                                bool shuffle)
    : ds_(&ds), batch_size_(batch_size) {
  if (batch_size < 1) throw std::invalid_argument("BatchIterator: batch size must be >= 1");
  if (shuffle) {
    order_ = epoch_permutation(ds.size(), seed, epoch);
  } else {
    order_.resize(static_cast<std::size_t>(ds.size()));
    for (Index i = 0; i < ds.size(); ++i) order_[static_cast<std::size_t>(i)] = i;
  }
}

template <typename T>
Index BatchIterator<T>::num_batches() const {
  return (static_cast<Index>(order_.size()) + batch_size_ - 1) / batch_size_;
}

template <typename T>
std::optional<Batch<T>> BatchIterator<T>::next() {
  const auto n = static_cast<Index>(order_.size());
  if (cursor_ >= n) return std::nullopt;
  const Index count = std::min(batch_size_, n - cursor_);
  const std::span<const Index> idx(order_.data() + cursor_, static_cast<std::size_t>(count));
  cursor_ += count;
  return Batch<T>{ds_->images<T>(idx), ds_->labels_at(idx)};
}

template Tensor<float> Dataset::images<float>(std::span<const Index>) const;
template Tensor<double> Dataset::images<double>(std::span<const Index>) const;
template class BatchIterator<float>;
template class BatchIterator<double>;

}  // namespace wavemix
