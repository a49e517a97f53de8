#include "wavemix/run.hpp"

#include <sys/resource.h>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "wavemix/checkpoint.hpp"
#include "wavemix/dwt.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace wavemix {

std::string library_version() { return "0.1.0"; }

// ---------------------------------------------------------------- config

void RunConfig::validate() const {
  model.validate();
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 0) throw std::invalid_argument("epochs must be >= 0");
  if (repeat < 1) throw std::invalid_argument("repeat must be >= 1");
  if (train_limit < 0 || test_limit < 0) throw std::invalid_argument("sample limits must be >= 0");
  if (!resume.empty() && repeat != 1) throw std::invalid_argument("resume works on a single seed (repeat = 1)");
}

void to_json(json& j, const RunConfig& c) {
  j = c.model;
  j["lr"] = c.optim.lr;
  j["beta1"] = c.optim.beta1;
  j["beta2"] = c.optim.beta2;
  j["eps"] = c.optim.eps;
  j["weight_decay"] = c.optim.weight_decay;
  j["dataset"] = c.dataset;
  j["data_dir"] = c.data_dir.string();
  j["batch_size"] = c.batch_size;
  j["epochs"] = c.epochs;
  j["seed"] = c.seed;
  j["repeat"] = c.repeat;
  j["deterministic"] = c.deterministic;
  j["out"] = c.out_dir.string();
  j["train_limit"] = c.train_limit;
  j["test_limit"] = c.test_limit;
}

void from_json(const json& j, RunConfig& c) {
  static const char* const run_keys[] = {"lr",      "beta1",      "beta2",       "eps",       "weight_decay",
                                         "dataset", "data_dir",   "batch_size",  "epochs",    "seed",
                                         "repeat",  "deterministic", "out",      "train_limit", "test_limit"};
  if (!j.is_object()) throw std::invalid_argument("run config must be a JSON object");
  json model = json::object();
  for (const auto& [key, value] : j.items()) {
    if (std::find(std::begin(run_keys), std::end(run_keys), key) == std::end(run_keys)) model[key] = value;
  }
  RunConfig d;
  d.model = model.get<ModelConfig>();
  d.optim.lr = j.value("lr", d.optim.lr);
  d.optim.beta1 = j.value("beta1", d.optim.beta1);
  d.optim.beta2 = j.value("beta2", d.optim.beta2);
  d.optim.eps = j.value("eps", d.optim.eps);
  d.optim.weight_decay = j.value("weight_decay", d.optim.weight_decay);
  d.dataset = j.value("dataset", d.dataset);
  d.data_dir = j.value("data_dir", d.data_dir.string());
  d.batch_size = j.value("batch_size", d.batch_size);
  d.epochs = j.value("epochs", d.epochs);
  d.seed = j.value("seed", d.seed);
  d.repeat = j.value("repeat", d.repeat);
  d.deterministic = j.value("deterministic", d.deterministic);
  d.out_dir = j.value("out", d.out_dir.string());
  d.train_limit = j.value("train_limit", d.train_limit);
  d.test_limit = j.value("test_limit", d.test_limit);
  c = d;
}

RunConfig load_run_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
  return j.get<RunConfig>();
}

// ---------------------------------------------------------------- evaluation

json to_json(const EvalResult& r) {
  return json{{"loss", r.loss}, {"top1", r.top1}, {"top5", r.top5}, {"count", r.count}};
}

template <typename T>
EvalResult evaluate(Model<T>& model, const Dataset& ds, Index batch_size) {
  NoGradGuard guard;
  EvalResult r;
  double loss = 0.0;
  Index hit1 = 0, hit5 = 0;
  BatchIterator<T> it(ds, batch_size, 0, 0, false);
  while (auto batch = it.next()) {
    const Tensor<T> logits = model.forward(batch->images, false);
    const Index b = logits.dim(0), k = logits.dim(1);
    loss += static_cast<double>(softmax_cross_entropy(logits, batch->labels).item()) * static_cast<double>(b);
    const auto z = logits.data();
    for (Index i = 0; i < b; ++i) {
      const T target = z[static_cast<std::size_t>(i * k + batch->labels[static_cast<std::size_t>(i)])];
      Index rank = 0;
      for (Index c = 0; c < k; ++c) rank += z[static_cast<std::size_t>(i * k + c)] > target;
      hit1 += rank == 0;
      hit5 += rank < 5;
    }
    r.count += b;
  }
  if (r.count == 0) throw std::invalid_argument("evaluate: empty dataset");
  r.loss = loss / static_cast<double>(r.count);
  r.top1 = static_cast<double>(hit1) / static_cast<double>(r.count);
  r.top5 = static_cast<double>(hit5) / static_cast<double>(r.count);
  return r;
}

template EvalResult evaluate<float>(Model<float>&, const Dataset&, Index);
template EvalResult evaluate<double>(Model<double>&, const Dataset&, Index);

// ---------------------------------------------------------------- training

double peak_rss_mb() {
  rusage u{};
  getrusage(RUSAGE_SELF, &u);
  return static_cast<double>(u.ru_maxrss) / 1024.0;  // Linux reports KiB
}

namespace {

std::string fmt(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

json row_json(const EpochRow& r) {
  json j{{"epoch", r.epoch}, {"test_loss", r.test_loss}, {"top1", r.top1}, {"top5", r.top5}};
  j["train_loss"] = r.train_loss ? json(*r.train_loss) : json(nullptr);
  j["images_per_sec"] = r.images_per_sec;
  j["peak_rss_mb"] = r.peak_rss_mb;
  return j;
}

EpochRow row_from_json(const json& j) {
  EpochRow r;
  r.epoch = j.at("epoch").get<int>();
  if (!j.at("train_loss").is_null()) r.train_loss = j.at("train_loss").get<double>();
  r.test_loss = j.at("test_loss").get<double>();
  r.top1 = j.at("top1").get<double>();
  r.top5 = j.at("top5").get<double>();
  r.images_per_sec = j.at("images_per_sec").get<double>();
  r.peak_rss_mb = j.at("peak_rss_mb").get<double>();
  return r;
}

// metrics.csv holds only values that are a function of the config, so two
// seeded runs produce identical files; timing goes to throughput.csv.
void write_metrics(const fs::path& dir, const RunConfig& cfg, const std::vector<EpochRow>& rows) {
  std::ofstream m(dir / "metrics.csv");
  json header = cfg;
  header["version"] = library_version();
  header.erase("out");
  header.erase("data_dir");
  m << "# " << header.dump() << "\n";
  m << "epoch,train_loss,test_loss,top1,top5\n";
  for (const auto& r : rows) {
    m << r.epoch << ',' << (r.train_loss ? fmt(*r.train_loss) : "") << ',' << fmt(r.test_loss) << ','
      << fmt(r.top1) << ',' << fmt(r.top5) << '\n';
  }
  std::ofstream t(dir / "throughput.csv");
  t << "epoch,images_per_sec,peak_rss_mb\n";
  for (const auto& r : rows) t << r.epoch << ',' << r.images_per_sec << ',' << r.peak_rss_mb << '\n';
}

void save_checkpoint(const fs::path& path, const RunConfig& cfg, Model<float>& model, const Adam<float>& opt,
                     int epoch, const std::vector<EpochRow>& rows) {
  Archive ar;
  ar.config = json{{"run", cfg}, {"epoch", epoch}, {"version", library_version()}};
  ar.config["history"] = json::array();
  for (const auto& r : rows) ar.config["history"].push_back(row_json(r));
  store_model(ar, model);
  store_optimizer(ar, opt);
  ar.save(path);
}

}  // namespace

DatasetSplits prepare_data(RunConfig& cfg) {
  if (cfg.data_dir.empty()) throw std::invalid_argument("no data directory given (--data-dir)");
  DatasetSplits d = load_dataset(cfg.dataset, cfg.data_dir);
  if (cfg.train_limit > 0) {
    d.train = d.train.head(cfg.train_limit);
    d.train.stats = compute_channel_stats(d.train);
  }
  if (cfg.test_limit > 0) d.test = d.test.head(cfg.test_limit);
  d.test.stats = d.train.stats;
  cfg.model.in_channels = d.train.channels;
  cfg.model.height = d.train.height;
  cfg.model.width = d.train.width;
  cfg.model.num_classes = d.train.num_classes;
  return d;
}

TrainResult train(const RunConfig& cfg, const DatasetSplits& data, const EpochCallback& on_epoch) {
  cfg.validate();
  fs::create_directories(cfg.out_dir);
  Model<float> model(cfg.model, cfg.seed);
  Adam<float> opt(model.parameters(), cfg.optim);
  TrainResult result;
  result.metrics_path = cfg.out_dir / "metrics.csv";
  int start = 0;

  if (!cfg.resume.empty()) {
    const Archive ar = Archive::load(cfg.resume);
    const ModelConfig stored = ar.config.at("run").get<RunConfig>().model.resolved();
    if (!(stored == model.config())) {
      throw CheckpointError("checkpoint " + cfg.resume.string() + " was written for " + stored.name() + " (" +
                            json(stored).dump() + "), run config builds " + json(model.config()).dump());
    }
    restore_model(ar, model);
    restore_optimizer(ar, opt);
    start = ar.config.at("epoch").get<int>();
    for (const auto& r : ar.config.at("history")) result.rows.push_back(row_from_json(r));
    for (const auto& r : result.rows) {
      if (r.top1 > result.best_top1 || result.best_epoch == 0) {
        result.best_top1 = r.top1;
        result.best_epoch = r.epoch;
      }
    }
  }

  const auto finish_epoch = [&](EpochRow row) {
    const EvalResult ev = evaluate(model, data.test, cfg.batch_size);
    row.test_loss = ev.loss;
    row.top1 = ev.top1;
    row.top5 = ev.top5;
    row.peak_rss_mb = peak_rss_mb();
    result.rows.push_back(row);
    write_metrics(cfg.out_dir, cfg, result.rows);
    const bool best = result.rows.size() == 1 || row.top1 > result.best_top1;
    if (best) {
      result.best_top1 = row.top1;
      result.best_epoch = row.epoch;
    }
    if (cfg.checkpoints) {
      save_checkpoint(cfg.out_dir / "last.wvmx", cfg, model, opt, row.epoch, result.rows);
      if (best) fs::copy_file(cfg.out_dir / "last.wvmx", cfg.out_dir / "best.wvmx", fs::copy_options::overwrite_existing);
    }
    if (on_epoch) on_epoch(row);
  };

  if (cfg.epochs == 0) {
    finish_epoch(EpochRow{});
    return result;
  }

  for (int epoch = start + 1; epoch <= cfg.epochs; ++epoch) {
    BatchIterator<float> it(data.train, cfg.batch_size, cfg.seed, static_cast<std::uint64_t>(epoch));
    double loss_sum = 0.0;
    Index seen = 0, step = 0;
    const auto t0 = std::chrono::steady_clock::now();
    while (auto batch = it.next()) {
      const Tensor<float> logits = model.forward(batch->images, true);
      const Tensor<float> loss = softmax_cross_entropy(logits, batch->labels);
      const double l = loss.item();
      if (!std::isfinite(l)) {
        throw NumericalError("non-finite training loss at epoch " + std::to_string(epoch) + ", step " +
                             std::to_string(step) + " (" + model.config().name() + ", lr " +
                             std::to_string(cfg.optim.lr) + ")");
      }
      backward(loss);
      opt.step();
      opt.zero_grad();
      loss_sum += l * static_cast<double>(logits.dim(0));
      seen += logits.dim(0);
      ++step;
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    EpochRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(std::max<Index>(seen, 1));
    row.images_per_sec = secs > 0 ? static_cast<double>(seen) / secs : 0.0;
    finish_epoch(row);
  }
  return result;
}

std::vector<TrainResult> train_repeated(const RunConfig& cfg, const DatasetSplits& data, const EpochCallback& on_epoch) {
  std::vector<TrainResult> results;
  json summary{{"config", cfg}, {"runs", json::array()}};
  double best = -1.0;
  for (int k = 0; k < cfg.repeat; ++k) {
    RunConfig c = cfg;
    c.seed = cfg.seed + static_cast<std::uint64_t>(k);
    c.repeat = 1;
    if (cfg.repeat > 1) c.out_dir = cfg.out_dir / ("seed" + std::to_string(c.seed));
    results.push_back(train(c, data, on_epoch));
    const auto& r = results.back();
    summary["runs"].push_back({{"seed", c.seed}, {"best_top1", r.best_top1}, {"best_epoch", r.best_epoch},
                               {"final_top1", r.rows.back().top1}, {"dir", c.out_dir.string()}});
    best = std::max(best, r.best_top1);
  }
  summary["best_top1"] = best;
  fs::create_directories(cfg.out_dir);
  std::ofstream(cfg.out_dir / "summary.json") << summary.dump(2) << "\n";
  return results;
}

// ---------------------------------------------------------------- bench

BenchResult bench(const ModelConfig& model, Index image_size, bool training, Index batch_size, double min_seconds,
                  std::uint64_t seed) {
  ModelConfig m = model;
  m.height = m.width = image_size;
  m.stem_stride1 = m.stem_stride2 = 0;
  m.levels = 0;
  Model<float> net(m, seed);
  Rng rng(seed, 99);
  std::vector<float> px(static_cast<std::size_t>(batch_size * m.in_channels * image_size * image_size));
  for (auto& v : px) v = static_cast<float>(rng.normal());
  const Tensor<float> images = Tensor<float>::from({batch_size, m.in_channels, image_size, image_size}, px);
  std::vector<int> labels(static_cast<std::size_t>(batch_size));
  for (auto& l : labels) l = static_cast<int>(rng.below(static_cast<std::uint64_t>(m.num_classes)));
  const auto params = net.parameters();

  const auto iteration = [&] {
    if (training) {
      const Tensor<float> loss = softmax_cross_entropy(net.forward(images, true), labels);
      backward(loss);
      for (auto p : params) p.zero_grad();
    } else {
      NoGradGuard guard;
      net.forward(images, false);
    }
  };

  iteration();  // warm-up
  BenchResult r;
  r.model = net.config().name();
  r.image_size = image_size;
  r.training = training;
  r.batch_size = batch_size;
  const auto t0 = std::chrono::steady_clock::now();
  do {
    iteration();
    r.images += batch_size;
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  } while (r.seconds < min_seconds);
  r.images_per_sec = static_cast<double>(r.images) / r.seconds;
  r.peak_rss_mb = peak_rss_mb();
  return r;
}

// ---------------------------------------------------------------- images / dwt

GrayImage read_pgm(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  const auto token = [&]() {
    std::string t;
    while (in) {
      const int c = in.peek();
      if (c == '#') {
        std::string skip;
        std::getline(in, skip);
      } else if (std::isspace(c)) {
        in.get();
      } else {
        break;
      }
    }
    in >> t;
    return t;
  };
  if (token() != "P5") throw std::runtime_error(path.string() + ": not a binary PGM (P5) file");
  GrayImage img;
  int maxval = 0;
  try {
    img.width = std::stoll(token());
    img.height = std::stoll(token());
    maxval = std::stoi(token());
  } catch (const std::exception&) {
    throw std::runtime_error(path.string() + ": malformed PGM header");
  }
  if (img.width < 1 || img.height < 1 || maxval < 1 || maxval > 255) {
    throw std::runtime_error(path.string() + ": unsupported PGM geometry or maxval");
  }
  in.get();  // single whitespace before the raster
  std::vector<unsigned char> raw(static_cast<std::size_t>(img.width * img.height));
  in.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
  if (in.gcount() != static_cast<std::streamsize>(raw.size())) throw std::runtime_error(path.string() + ": truncated PGM raster");
  img.pixels.assign(raw.begin(), raw.end());
  return img;
}

void write_pgm(const fs::path& path, const GrayImage& img) {
  const auto [lo, hi] = std::minmax_element(img.pixels.begin(), img.pixels.end());
  const float a = img.pixels.empty() ? 0.f : *lo, range = img.pixels.empty() ? 0.f : *hi - *lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << img.width << ' ' << img.height << "\n255\n";
  for (float v : img.pixels) {
    const float s = range > 0 ? (v - a) / range * 255.f : 0.f;
    out.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(s, 0.f, 255.f)))));
  }
}

GrayImage read_flat(const fs::path& path, Index height, Index width) {
  if (height < 1 || width < 1) throw std::invalid_argument("read_flat: flat images need an explicit size");
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open image " + path.string());
  GrayImage img{height, width, std::vector<float>(static_cast<std::size_t>(height * width))};
  in.read(reinterpret_cast<char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * 4));
  if (in.gcount() != static_cast<std::streamsize>(img.pixels.size() * 4)) {
    throw std::runtime_error(path.string() + ": expected " + std::to_string(height * width) + " float32 values");
  }
  return img;
}

void write_flat(const fs::path& path, const GrayImage& img) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(img.pixels.data()), static_cast<std::streamsize>(img.pixels.size() * 4));
}

DwtReport dwt_dump(const GrayImage& img, int levels, const fs::path& out_dir) {
  if (levels == 0) levels = compute_levels(img.height, img.width);
  std::vector<double> px(img.pixels.begin(), img.pixels.end());
  const Tensor<double> x = Tensor<double>::from({1, 1, img.height, img.width}, px);
  NoGradGuard guard;
  const SubbandPyramid<double> pyr = dwt2_pyramid(x, levels);
  DwtReport rep;
  static const char* const names[] = {"A", "Dh", "Dv", "Dd"};
  for (std::size_t l = 1; l <= pyr.depth(); ++l) {
    const fs::path dir = out_dir / ("level" + std::to_string(l));
    fs::create_directories(dir);
    double detail = 0.0;
    for (int g = 0; g < 4; ++g) {
      const Tensor<double> band = pyr.subband(l, g);
      GrayImage out{band.dim(2), band.dim(3), std::vector<float>(band.data().begin(), band.data().end())};
      if (g > 0) {
        for (double v : band.data()) detail = std::max(detail, std::abs(v));
      }
      write_pgm(dir / (std::string(names[g]) + ".pgm"), out);
      write_flat(dir / (std::string(names[g]) + ".f32"), out);
    }
    rep.level_sizes.emplace_back(pyr.levels[l - 1].dim(2), pyr.levels[l - 1].dim(3));
    rep.detail_max_abs.push_back(detail);
  }
  const Tensor<double> back = reconstruct(pyr);
  for (Index i = 0; i < x.numel(); ++i) rep.reconstruction_error = std::max(rep.reconstruction_error, std::abs(back[i] - x[i]));
  return rep;
}

}  // namespace wavemix
