#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "fixtures.hpp"
#include "wavemix/data.hpp"

using namespace wavemix;
using fixture::TempDir;

namespace {

const std::vector<std::uint8_t> kPixels{0, 64, 128, 255, 10, 20, 30, 40};

std::vector<std::uint8_t> cifar_record(std::vector<std::uint8_t> labels, std::uint8_t fill) {
  labels.insert(labels.end(), 3072, fill);
  return labels;
}

}  // namespace

TEST_SUITE("data") {
  TEST_CASE("hand-built IDX fixture parses to bytes / 255") {
    TempDir dir("idx");
    fixture::write_bytes(dir / "img", fixture::idx_images(2, 2, 2, kPixels));
    fixture::write_bytes(dir / "lab", fixture::idx_labels({3, 9}));
    auto ds = load_idx(dir / "img", dir / "lab");
    CHECK(ds.size() == 2);
    CHECK(ds.channels == 1);
    CHECK(ds.height == 2);
    CHECK(ds.labels == std::vector<int>{3, 9});
    ds.stats = {{0.0}, {1.0}};
    const std::vector<Index> all{0, 1};
    const auto x = ds.images<double>(all);
    CHECK(x.shape() == Shape{2, 1, 2, 2});
    for (std::size_t i = 0; i < kPixels.size(); ++i) CHECK(x[static_cast<Index>(i)] == kPixels[i] / 255.0);
  }

  TEST_CASE("IDX errors are distinct") {
    TempDir dir("idxerr");
    fixture::write_bytes(dir / "img", fixture::idx_images(2, 2, 2, kPixels));
    fixture::write_bytes(dir / "lab", fixture::idx_labels({3, 9}));

    fixture::write_bytes(dir / "bad_label", fixture::idx_labels({3, 255}));
    CHECK_THROWS_AS(load_idx(dir / "img", dir / "bad_label"), LabelRangeError);

    auto trunc = fixture::idx_images(2, 2, 2, kPixels);
    trunc.pop_back();
    fixture::write_bytes(dir / "trunc", trunc);
    CHECK_THROWS_AS(load_idx(dir / "trunc", dir / "lab"), TruncatedFileError);
    fixture::write_bytes(dir / "short_header", {0, 0, 8, 3, 0, 0});
    CHECK_THROWS_AS(load_idx(dir / "short_header", dir / "lab"), TruncatedFileError);

    fixture::write_bytes(dir / "three", fixture::idx_labels({1, 2, 3}));
    CHECK_THROWS_AS(load_idx(dir / "img", dir / "three"), CountMismatchError);

    CHECK_THROWS_AS(load_idx(dir / "lab", dir / "img"), BadMagicError);
    CHECK_THROWS_AS(load_idx(dir / "missing", dir / "lab"), DataFormatError);
  }

  TEST_CASE("IDX round trip is byte exact, including transposed storage") {
    TempDir dir("idxrt");
    const auto img = fixture::idx_images(2, 2, 2, kPixels);
    const auto lab = fixture::idx_labels({1, 4});
    fixture::write_bytes(dir / "img", img);
    fixture::write_bytes(dir / "lab", lab);
    for (bool transposed : {false, true}) {
      const IdxOptions opt{10, transposed, 0};
      const auto ds = load_idx(dir / "img", dir / "lab", opt);
      write_idx(ds, dir / "img2", dir / "lab2", opt);
      CHECK(fixture::read_bytes(dir / "img2") == img);
      CHECK(fixture::read_bytes(dir / "lab2") == lab);
    }
    const auto t = load_idx(dir / "img", dir / "lab", {10, true, 0});
    CHECK(t.pixels[1] == kPixels[2]);  // rows and columns swapped
    const auto letters = load_idx(dir / "img", dir / "lab", {26, false, 1});
    CHECK(letters.labels == std::vector<int>{0, 3});
  }

  TEST_CASE("CIFAR records") {
    TempDir dir("cifar");
    fixture::write_bytes(dir / "c10.bin", cifar_record({7}, 128));
    const std::filesystem::path one[] = {dir / "c10.bin"};
    auto ds = load_cifar(one, CifarVariant::c10);
    CHECK(ds.size() == 1);
    CHECK(ds.channels == 3);
    CHECK(ds.height == 32);
    CHECK(ds.labels[0] == 7);
    ds.stats = {{0, 0, 0}, {1, 1, 1}};
    const std::vector<Index> idx{0};
    const auto img = ds.images<float>(idx);
    for (float v : img.data()) CHECK(v == static_cast<float>(128 / 255.0));

    auto rec = cifar_record({3, 42}, 1);
    auto rec2 = cifar_record({5, 99}, 2);
    rec.insert(rec.end(), rec2.begin(), rec2.end());
    fixture::write_bytes(dir / "c100.bin", rec);
    const std::filesystem::path c100[] = {dir / "c100.bin"};
    const auto d100 = load_cifar(c100, CifarVariant::c100);
    CHECK(d100.labels == std::vector<int>{42, 99});
    CHECK(d100.coarse_labels == std::vector<int>{3, 5});
    write_cifar(d100, dir / "c100_rt.bin", CifarVariant::c100);
    CHECK(fixture::read_bytes(dir / "c100_rt.bin") == rec);

    auto bad = cifar_record({1}, 0);
    bad.push_back(0);
    fixture::write_bytes(dir / "bad.bin", bad);
    const std::filesystem::path b[] = {dir / "bad.bin"};
    CHECK_THROWS_AS(load_cifar(b, CifarVariant::c10), RecordAlignmentError);
    CHECK_THROWS_AS(load_cifar(one, CifarVariant::c100), RecordAlignmentError);
    fixture::write_bytes(dir / "range.bin", cifar_record({10}, 0));
    const std::filesystem::path r[] = {dir / "range.bin"};
    CHECK_THROWS_AS(load_cifar(r, CifarVariant::c10), LabelRangeError);
  }

  TEST_CASE("CIFAR-10 directory layout is found by name") {
    TempDir dir("cifardir");
    for (int i = 1; i <= 5; ++i) {
      std::vector<std::uint8_t> bytes;
      for (int k = 0; k < 3; ++k) {
        auto rec = cifar_record({static_cast<std::uint8_t>((i + k) % 10)}, static_cast<std::uint8_t>(20 * i));
        bytes.insert(bytes.end(), rec.begin(), rec.end());
      }
      fixture::write_bytes(dir / ("data_batch_" + std::to_string(i) + ".bin"), bytes);
    }
    fixture::write_bytes(dir / "test_batch.bin", cifar_record({2}, 0));
    const auto s = load_dataset("cifar10", dir.path());
    CHECK(s.train.size() == 15);
    CHECK(s.test.size() == 1);
    CHECK(s.train.num_classes == 10);
    CHECK(s.test.stats.mean == s.train.stats.mean);
    CHECK(s.train.stats.mean[0] == doctest::Approx(60.0 / 255.0));
  }

  TEST_CASE("channel statistics") {
    Dataset constant;
    constant.channels = 1;
    constant.height = constant.width = 2;
    constant.pixels.assign(8, 51);
    constant.labels = {0, 1};
    auto st = compute_channel_stats(constant);
    CHECK(st.mean[0] == doctest::Approx(0.2));
    CHECK(st.std[0] == doctest::Approx(0.0));
    constant.stats = st;
    const std::vector<Index> idx{0};
    const auto cimg = constant.images<double>(idx);
    for (double v : cimg.data()) CHECK(std::isfinite(v));

    Dataset two = constant;
    two.pixels = {0, 255, 0, 255, 255, 0, 255, 0};
    st = compute_channel_stats(two);
    CHECK(st.mean[0] == doctest::Approx(0.5));
    CHECK(st.std[0] == doctest::Approx(0.5));

    // independent single-pass accumulation on the slice
    const auto s = load_dataset("mnist", fixture::slice_dir());
    double sum = 0, sq = 0;
    for (auto p : s.train.pixels) {
      sum += p / 255.0;
      sq += (p / 255.0) * (p / 255.0);
    }
    const double n = static_cast<double>(s.train.pixels.size());
    CHECK(s.train.stats.mean[0] == doctest::Approx(sum / n).epsilon(1e-12));
    CHECK(s.train.stats.std[0] == doctest::Approx(std::sqrt(sq / n - (sum / n) * (sum / n))).epsilon(1e-9));
  }

  TEST_CASE("the MNIST slice loads with train statistics on both splits") {
    const auto s = load_dataset("mnist", fixture::slice_dir());
    CHECK(s.train.size() == 520);
    CHECK(s.test.size() == 260);
    CHECK(s.test.stats.std == s.train.stats.std);
    std::vector<int> counts(10, 0);
    for (int l : s.test.labels) ++counts[static_cast<std::size_t>(l)];
    for (int c : counts) CHECK(c == 26);
    CHECK_THROWS(load_dataset("imagenet", fixture::slice_dir()));
    CHECK(dataset_shape("emnist-letters").num_classes == 26);
    CHECK(dataset_shape("cifar100").channels == 3);
  }

  TEST_CASE("batch iteration") {
    Dataset ds;
    ds.channels = ds.height = ds.width = 1;
    ds.num_classes = 10;
    ds.pixels.resize(10);
    ds.labels.resize(10);
    std::iota(ds.pixels.begin(), ds.pixels.end(), 0);
    std::iota(ds.labels.begin(), ds.labels.end(), 0);
    BatchIterator<float> it(ds, 4, 1, 0);
    CHECK(it.num_batches() == 3);
    std::vector<Index> sizes;
    std::multiset<int> seen;
    while (auto b = it.next()) {
      sizes.push_back(b->images.dim(0));
      seen.insert(b->labels.begin(), b->labels.end());
    }
    CHECK(sizes == std::vector<Index>{4, 4, 2});
    CHECK(seen == std::multiset<int>{0, 1, 2, 3, 4, 5, 6, 7, 8, 9});

    CHECK(epoch_permutation(10, 5, 3) == epoch_permutation(10, 5, 3));
    std::set<std::vector<Index>> perms;
    for (std::uint64_t e = 0; e < 100; ++e) perms.insert(epoch_permutation(10, 5, e));
    CHECK(perms.size() == 100);
    CHECK(epoch_permutation(10, 5, 0) != epoch_permutation(10, 6, 0));

    BatchIterator<float> ordered(ds, 3, 1, 0, false);
    auto first = ordered.next();
    CHECK(first->labels == std::vector<int>{0, 1, 2});
    CHECK_THROWS(BatchIterator<float>(ds, 0, 1, 0));
  }

  TEST_CASE("head keeps the first samples") {
    const auto s = load_dataset("mnist", fixture::slice_dir());
    const auto h = s.train.head(7);
    CHECK(h.size() == 7);
    CHECK(std::equal(h.pixels.begin(), h.pixels.end(), s.train.pixels.begin()));
    CHECK(s.train.head(10000).size() == 520);
  }
}
