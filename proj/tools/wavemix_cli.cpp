// wavemix command-line driver: train | eval | params | bench | dwt
#include <cstdio>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "wavemix/checkpoint.hpp"
#include "wavemix/dwt.hpp"
#include "wavemix/run.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace wavemix;

namespace {

struct ModelFlags {
  std::string config, dataset, model;
  Index dim = 0, depth = -1;
  CLI::Option* dataset_opt = nullptr;

  void add(CLI::App* app, const std::string& default_dataset) {
    dataset = default_dataset;
    app->add_option("--config", config, "flat JSON run config; flags override its values")->check(CLI::ExistingFile);
    dataset_opt = app->add_option("--dataset", dataset, "dataset name")->capture_default_str();
    app->add_option("--model", model, "wavemix | wavemix-lite | fnet2d | mlpmixer2d (default: by --dim)");
    app->add_option("--dim", dim, "embedding dimension C");
    app->add_option("--depth", depth, "number of blocks N");
  }

  RunConfig resolve() const {
    RunConfig cfg = config.empty() ? RunConfig{} : load_run_config(config);
    if (config.empty() || dataset_opt->count()) cfg.dataset = dataset;
    if (!model.empty()) cfg.model.block = model == "auto" ? std::nullopt : std::optional(parse_block_kind(model));
    if (dim > 0) cfg.model.embedding = dim;
    if (depth >= 0) cfg.model.depth = depth;
    return cfg;
  }
};

void apply_dataset_shape(RunConfig& cfg) {
  const DatasetShape s = dataset_shape(cfg.dataset);
  cfg.model.in_channels = s.channels;
  cfg.model.height = s.height;
  cfg.model.width = s.width;
  cfg.model.num_classes = s.num_classes;
}

std::string percent(double v) {
  char b[32];
  std::snprintf(b, sizeof b, "%.2f%%", 100.0 * v);
  return b;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"WaveMix image classifiers: training, evaluation and inspection"};
  app.require_subcommand(1);
  app.set_version_flag("--version", library_version());

  // ---- train
  auto* train_cmd = app.add_subcommand("train", "train a model and write metrics + checkpoints");
  ModelFlags train_flags;
  train_flags.add(train_cmd, "mnist");
  std::string data_dir, out_dir, resume;
  Index batch_size = 0, train_limit = -1, test_limit = -1;
  int epochs = -1, repeat = 0;
  std::uint64_t seed = 0;
  bool deterministic = false;
  double lr = 0.0;
  auto* seed_opt = train_cmd->add_option("--seed", seed, "base seed");
  train_cmd->add_option("--data-dir", data_dir, "directory holding the dataset files");
  train_cmd->add_option("--batch-size", batch_size, "batch size (default 64)");
  train_cmd->add_option("--epochs", epochs, "epochs (0: evaluate only)");
  train_cmd->add_option("--repeat", repeat, "independent seeds; the summary reports the best top-1");
  train_cmd->add_flag("--deterministic", deterministic, "single-threaded bitwise-reproducible execution");
  train_cmd->add_option("--out", out_dir, "run directory");
  train_cmd->add_option("--train-limit", train_limit, "use only the first N training samples");
  train_cmd->add_option("--test-limit", test_limit, "use only the first N test samples");
  train_cmd->add_option("--resume", resume, "continue from a checkpoint")->check(CLI::ExistingFile);
  train_cmd->add_option("--lr", lr, "Adam learning rate");

  // ---- eval
  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on a test split");
  std::string ckpt_path, eval_dataset, eval_json;
  eval_cmd->add_option("--checkpoint", ckpt_path, "WVMX checkpoint")->required()->check(CLI::ExistingFile);
  eval_cmd->add_option("--dataset", eval_dataset, "dataset name (default: the checkpoint's)");
  eval_cmd->add_option("--data-dir", data_dir, "directory holding the dataset files");
  eval_cmd->add_option("--batch-size", batch_size, "batch size");
  eval_cmd->add_option("--test-limit", test_limit, "use only the first N test samples");
  eval_cmd->add_option("--out", eval_json, "write the JSON summary here");

  // ---- params
  auto* params_cmd = app.add_subcommand("params", "print the parameter breakdown of a model");
  ModelFlags params_flags;
  params_flags.add(params_cmd, "cifar10");
  Index classes = 0;
  bool params_json = false;
  params_cmd->add_option("--classes", classes, "override the class count");
  params_cmd->add_flag("--json", params_json, "print JSON instead of a table");

  // ---- bench
  auto* bench_cmd = app.add_subcommand("bench", "synthetic-data throughput in images/s");
  ModelFlags bench_flags;
  bench_flags.add(bench_cmd, "cifar10");
  std::vector<Index> sizes{32, 64};
  std::string mode = "both", bench_csv;
  double seconds = 10.0;
  Index bench_batch = 16;
  bench_cmd->add_option("--sizes", sizes, "input sizes")->delimiter(',')->capture_default_str();
  bench_cmd->add_option("--mode", mode, "train | infer | both")->check(CLI::IsMember({"train", "infer", "both"}));
  bench_cmd->add_option("--seconds", seconds, "minimum timed duration per measurement")->capture_default_str();
  bench_cmd->add_option("--batch-size", bench_batch, "batch size")->capture_default_str();
  bench_cmd->add_option("--out", bench_csv, "write a CSV table here");

  // ---- dwt
  auto* dwt_cmd = app.add_subcommand("dwt", "decompose an image and check reconstruction");
  std::string input, dwt_out = "dwt_out";
  int levels = 0;
  std::vector<Index> flat_size;
  dwt_cmd->add_option("--input", input, "binary PGM or raw float32 image")->required()->check(CLI::ExistingFile);
  dwt_cmd->add_option("--levels", levels, "levels (default: down to 2x2)");
  dwt_cmd->add_option("--size", flat_size, "H,W of a raw float32 input")->delimiter(',')->expected(2);
  dwt_cmd->add_option("--out", dwt_out, "output directory")->capture_default_str();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train_cmd) {
      RunConfig cfg = train_flags.resolve();
      if (!data_dir.empty()) cfg.data_dir = data_dir;
      if (batch_size > 0) cfg.batch_size = batch_size;
      if (epochs >= 0) cfg.epochs = epochs;
      if (repeat > 0) cfg.repeat = repeat;
      if (seed_opt->count()) cfg.seed = seed;
      if (deterministic) cfg.deterministic = true;
      if (!out_dir.empty()) cfg.out_dir = out_dir;
      if (train_limit >= 0) cfg.train_limit = train_limit;
      if (test_limit >= 0) cfg.test_limit = test_limit;
      if (lr > 0) cfg.optim.lr = lr;
      cfg.resume = resume;
      const DatasetSplits data = prepare_data(cfg);
      cfg.validate();
      std::printf("%s on %s: %lld train / %lld test samples, %d epochs, batch %lld\n", cfg.model.name().c_str(),
                  cfg.dataset.c_str(), static_cast<long long>(data.train.size()),
                  static_cast<long long>(data.test.size()), cfg.epochs, static_cast<long long>(cfg.batch_size));
      const auto results = train_repeated(cfg, data, [](const EpochRow& r) {
        std::printf("epoch %3d  train_loss %s  test_loss %.4f  top1 %s  top5 %s  %.1f img/s  rss %.0f MiB\n", r.epoch,
                    r.train_loss ? std::to_string(*r.train_loss).c_str() : "-", r.test_loss, percent(r.top1).c_str(),
                    percent(r.top5).c_str(), r.images_per_sec, r.peak_rss_mb);
        std::fflush(stdout);
      });
      double best = 0.0;
      for (const auto& r : results) best = std::max(best, r.best_top1);
      std::printf("best top-1 over %zu run(s): %s\n", results.size(), percent(best).c_str());
      return 0;
    }

    if (*eval_cmd) {
      const Archive ar = Archive::load(ckpt_path);
      RunConfig cfg = ar.config.at("run").get<RunConfig>();
      if (!eval_dataset.empty()) cfg.dataset = eval_dataset;
      if (!data_dir.empty()) cfg.data_dir = data_dir;
      if (batch_size > 0) cfg.batch_size = batch_size;
      cfg.test_limit = test_limit >= 0 ? test_limit : 0;
      const ModelConfig stored = cfg.model;
      DatasetSplits data = prepare_data(cfg);
      if (cfg.model.in_channels != stored.in_channels || cfg.model.height != stored.height ||
          cfg.model.width != stored.width || cfg.model.num_classes != stored.num_classes) {
        throw std::invalid_argument("dataset " + cfg.dataset + " does not match the checkpoint's input geometry or class count");
      }
      Model<float> model(cfg.model, cfg.seed);
      restore_model(ar, model);
      const EvalResult r = evaluate(model, data.test, cfg.batch_size);
      json j = to_json(r);
      j["checkpoint"] = ckpt_path;
      j["model"] = model.config().name();
      j["dataset"] = cfg.dataset;
      std::printf("%s on %s (%lld samples): top-1 %s  top-5 %s  loss %.4f\n", model.config().name().c_str(),
                  cfg.dataset.c_str(), static_cast<long long>(r.count), percent(r.top1).c_str(),
                  percent(r.top5).c_str(), r.loss);
      if (!eval_json.empty()) std::ofstream(eval_json) << j.dump(2) << "\n";
      return 0;
    }

    if (*params_cmd) {
      RunConfig cfg = params_flags.resolve();
      apply_dataset_shape(cfg);
      if (classes > 0) cfg.model.num_classes = classes;
      const Model<float> model(cfg.model, 0);
      const ParamReport rep = model.count_params();
      if (params_json) {
        json j{{"model", model.config().name()}, {"config", model.config()}, {"total", rep.total}};
        for (const auto& [name, n] : rep.groups) j["groups"][name] = n;
        std::cout << j.dump(2) << "\n";
      } else {
        std::printf("%s (%s blocks, %lldx%lld input, K=%lld)\n", model.config().name().c_str(),
                    to_string(*model.config().block).c_str(), static_cast<long long>(cfg.model.height),
                    static_cast<long long>(cfg.model.width), static_cast<long long>(cfg.model.num_classes));
        std::cout << rep.table();
      }
      return 0;
    }

    if (*bench_cmd) {
      RunConfig cfg = bench_flags.resolve();
      apply_dataset_shape(cfg);
      std::ofstream csv;
      if (!bench_csv.empty()) {
        csv.open(bench_csv);
        csv << "model,image_size,mode,batch_size,images_per_sec,peak_rss_mb\n";
      }
      std::printf("%-16s %5s %6s %12s %10s\n", "model", "size", "mode", "images/s", "rss MiB");
      for (Index s : sizes) {
        for (const bool training : {true, false}) {
          if ((mode == "train" && !training) || (mode == "infer" && training)) continue;
          const BenchResult r = bench(cfg.model, s, training, bench_batch, seconds, cfg.seed);
          std::printf("%-16s %5lld %6s %12.1f %10.0f\n", r.model.c_str(), static_cast<long long>(s),
                      training ? "train" : "infer", r.images_per_sec, r.peak_rss_mb);
          if (csv) {
            csv << r.model << ',' << s << ',' << (training ? "train" : "infer") << ',' << r.batch_size << ','
                << r.images_per_sec << ',' << r.peak_rss_mb << '\n';
          }
        }
      }
      return 0;
    }

    if (*dwt_cmd) {
      const GrayImage img = flat_size.empty() ? read_pgm(input) : read_flat(input, flat_size[0], flat_size[1]);
      const DwtReport rep = dwt_dump(img, levels, dwt_out);
      for (std::size_t l = 0; l < rep.level_sizes.size(); ++l) {
        std::printf("level %zu: %lldx%lld  max|detail| %.6g\n", l + 1, static_cast<long long>(rep.level_sizes[l].first),
                    static_cast<long long>(rep.level_sizes[l].second), rep.detail_max_abs[l]);
      }
      std::printf("max reconstruction error: %.3g\n", rep.reconstruction_error);
      return 0;
    }
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return 1;
  }
  return 0;
}
