#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "wavemix/data.hpp"
#include "wavemix/model.hpp"
#include "wavemix/optim.hpp"

namespace wavemix {

std::string library_version();

/// Flat run description; model keys live at the same JSON level as run keys.
struct RunConfig {
  ModelConfig model;
  AdamOptions optim;
  std::string dataset = "mnist";
  std::filesystem::path data_dir;
  Index batch_size = 64;
  int epochs = 10;
  std::uint64_t seed = 0;
  int repeat = 1;
  bool deterministic = true;
  std::filesystem::path out_dir = "runs/default";
  Index train_limit = 0;  // 0: whole split
  Index test_limit = 0;
  std::filesystem::path resume;  // checkpoint to continue from
  bool checkpoints = true;

  void validate() const;
};

void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, RunConfig& c);
RunConfig load_run_config(const std::filesystem::path& path);

struct EvalResult {
  double loss = 0.0;
  double top1 = 0.0;  // fractions in [0, 1]
  double top5 = 0.0;
  Index count = 0;
};

nlohmann::json to_json(const EvalResult& r);

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& ds, Index batch_size);

struct EpochRow {
  int epoch = 0;
  std::optional<double> train_loss;  // absent for the evaluate-only row
  double test_loss = 0.0, top1 = 0.0, top5 = 0.0;
  double images_per_sec = 0.0;
  double peak_rss_mb = 0.0;
};

struct TrainResult {
  std::vector<EpochRow> rows;
  double best_top1 = 0.0;
  int best_epoch = 0;
  std::filesystem::path metrics_path;
};

/// Per-epoch callback, e.g. for progress printing.
using EpochCallback = std::function<void(const EpochRow&)>;

/// Trains one seed into cfg.out_dir: metrics.csv (deterministic columns),
/// throughput.csv (timing), last.wvmx and best.wvmx.
TrainResult train(const RunConfig& cfg, const DatasetSplits& data, const EpochCallback& on_epoch = {});

/// Runs cfg.repeat seeds (seed, seed+1, ...) under out_dir/seed<k> when
/// repeat > 1 and writes summary.json with the best top-1.
std::vector<TrainResult> train_repeated(const RunConfig& cfg, const DatasetSplits& data,
                                        const EpochCallback& on_epoch = {});

/// Applies train_limit / test_limit and the model's input geometry to cfg.
DatasetSplits prepare_data(RunConfig& cfg);

struct BenchResult {
  std::string model;
  Index image_size = 0;
  bool training = false;
  Index batch_size = 0;
  Index images = 0;
  double seconds = 0.0;
  double images_per_sec = 0.0;
  double peak_rss_mb = 0.0;
};

/// Synthetic-data throughput: one warm-up iteration, then a timed loop of at
/// least min_seconds. Training mode times forward plus backward.
BenchResult bench(const ModelConfig& model, Index image_size, bool training, Index batch_size, double min_seconds,
                  std::uint64_t seed = 0);

/// Peak resident set size of this process in MiB.
double peak_rss_mb();

struct GrayImage {
  Index height = 0, width = 0;
  std::vector<float> pixels;  // row-major
};

/// Binary PGM (P5, maxval <= 255), values kept as 0..255.
GrayImage read_pgm(const std::filesystem::path& path);
/// Scales values linearly to 0..255 (constant images map to 0).
void write_pgm(const std::filesystem::path& path, const GrayImage& img);
/// Raw little-endian float32 of a known size.
GrayImage read_flat(const std::filesystem::path& path, Index height, Index width);
void write_flat(const std::filesystem::path& path, const GrayImage& img);

struct DwtReport {
  std::vector<std::pair<Index, Index>> level_sizes;
  std::vector<double> detail_max_abs;  // per level, over Dh/Dv/Dd
  double reconstruction_error = 0.0;   // max |reconstruct(dwt(x)) - x|
};

/// Writes out_dir/level<l>/{A,Dh,Dv,Dd}.{pgm,f32}. levels = 0 picks compute_levels.
DwtReport dwt_dump(const GrayImage& img, int levels, const std::filesystem::path& out_dir);

}  // namespace wavemix
