#include "dpcn/cli/cli.hpp"

#include <CLI11.hpp>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <json.hpp>
#include <optional>

#include "dpcn/core/runtime.hpp"
#include "dpcn/data/checkpoint.hpp"
#include "dpcn/engine/baselines.hpp"
#include "dpcn/engine/trainer.hpp"
#include "dpcn/xai/gradcam.hpp"

namespace dpcn::cli {

namespace fs = std::filesystem;

std::pair<data::ImageDataset, data::ImageDataset> load_datasets(const ExperimentConfig& config) {
  const auto& d = config.dataset;
  data::ImageDataset train, test;
  if (d.kind == "synthetic") {
    train = data::synthetic_shapes(d.train_per_class, d.classes, d.image_size, d.seed, d.synthetic);
    test = data::synthetic_shapes(d.test_per_class, d.classes, d.image_size, d.seed + 1, d.synthetic);
    test.split = data::Split::kTest;
  } else {
    const auto variant = d.kind == "cifar10" ? data::CifarVariant::kCifar10 : data::CifarVariant::kCifar100;
    train = data::load_cifar_binary(d.train_path, variant, data::Split::kTrain);
    test = data::load_cifar_binary(d.test_path, variant, data::Split::kTest);
  }
  const auto means = data::compute_channel_means(train);
  const auto stds = data::compute_channel_stds(train);
  return {data::normalize_channels(std::move(train), means, stds), data::normalize_channels(std::move(test), means, stds)};
}

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string phase = "all";
  std::string checkpoint;
  std::string layer;
  std::optional<std::size_t> class_index;
  std::size_t count = 8;
};

ExperimentConfig resolve(const Options& opt) {
  ExperimentConfig cfg = load_config(opt.config_path);
  if (opt.seed) apply_seed(cfg, *opt.seed);
  if (!opt.out_dir.empty()) cfg.out_dir = opt.out_dir;
  fs::create_directories(cfg.out_dir);
  return cfg;
}

std::string checkpoint_path(const ExperimentConfig& cfg, int phase) {
  return (fs::path(cfg.out_dir) / ("phase" + std::to_string(phase) + ".ckpt")).string();
}

// Loads a checkpoint into a fresh trainer; the config digest must match.
void restore_from(engine::Trainer& trainer, const ExperimentConfig& cfg, const std::string& path) {
  if (!fs::exists(path)) throw std::runtime_error("checkpoint '" + path + "' does not exist");
  trainer.restore(data::load_checkpoint(path), cfg.digest);
}

int run_train(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = resolve(opt);
  const auto [train, test] = load_datasets(cfg);
  engine::Trainer trainer(cfg.dpcn, train);
  trainer.set_eval_set(&test);
  const bool resuming = !opt.checkpoint.empty();
  if (resuming) restore_from(trainer, cfg, opt.checkpoint);

  const fs::path log_path = fs::path(cfg.out_dir) / "metrics.jsonl";
  std::ofstream log(log_path, resuming ? std::ios::app : std::ios::trunc);
  if (!log) throw std::runtime_error("cannot write metric log '" + log_path.string() + "'");
  trainer.set_metric_sink([&](const engine::EpochMetrics& m) {
    const std::string line = engine::to_json_line(m, cfg.digest, static_cast<long long>(cfg.seed));
    log << line << '\n' << std::flush;
    out << line << '\n';
  });

  const int last = opt.phase == "all" ? 3 : std::stoi(opt.phase);
  if (!resuming) data::save_checkpoint(trainer.checkpoint(cfg.text, cfg.digest), checkpoint_path(cfg, 0));
  while (trainer.completed_phase() < last) {
    try {
      trainer.run(trainer.completed_phase() + 1);
    } catch (const engine::TrainingDiverged& e) {
      log << e.diagnostic() << '\n';
      throw;
    }
    data::save_checkpoint(trainer.checkpoint(cfg.text, cfg.digest), checkpoint_path(cfg, trainer.completed_phase()));
  }
  nlohmann::json summary{{"config_digest", cfg.digest},
                         {"seed", cfg.seed},
                         {"completed_phase", trainer.completed_phase()},
                         {"eval_digest", data::dataset_digest(test)}};
  if (trainer.completed_phase() >= 3) summary["extra_accuracy"] = trainer.accuracy(test);
  out << summary.dump() << '\n';
  return 0;
}

int run_eval(const Options& opt, std::ostream& out) {
  if (opt.checkpoint.empty()) throw std::runtime_error("eval needs --checkpoint");
  const ExperimentConfig cfg = resolve(opt);
  const auto [train, test] = load_datasets(cfg);
  engine::Trainer trainer(cfg.dpcn, train);
  restore_from(trainer, cfg, opt.checkpoint);
  auto& nets = trainer.model().nets;
  nlohmann::json report{{"config_digest", cfg.digest},
                        {"seed", cfg.seed},
                        {"checkpoint_phase", trainer.completed_phase()},
                        {"eval_digest", data::dataset_digest(test)},
                        {"base_accuracy", engine::network_accuracy(nets.front(), test)}};
  nlohmann::json subnets = nlohmann::json::array();
  std::vector<models::Network<float>*> members;
  for (auto& net : nets) {
    subnets.push_back(engine::network_accuracy(net, test));
    members.push_back(&net);
  }
  report["subnet_accuracy"] = subnets;
  report["ensemble_accuracy"] = engine::ensemble_accuracy(members, test);
  report["extra_accuracy"] = trainer.accuracy(test);
  std::ofstream(fs::path(cfg.out_dir) / "eval.json") << report.dump(2) << '\n';
  out << report.dump() << '\n';
  return 0;
}

int run_gradcam(const Options& opt, std::ostream& out) {
  if (opt.checkpoint.empty()) throw std::runtime_error("gradcam needs --checkpoint");
  const ExperimentConfig cfg = resolve(opt);
  auto [train, test] = load_datasets(cfg);
  engine::Trainer trainer(cfg.dpcn, train);
  restore_from(trainer, cfg, opt.checkpoint);
  const fs::path dir = fs::path(cfg.out_dir) / "gradcam";
  fs::create_directories(dir);
  const data::ImageDataset raw = data::denormalize_channels(test);

  const std::size_t count = std::min(opt.count, test.size());
  nlohmann::json images = nlohmann::json::array();
  double total = 0.0;
  std::size_t scored = 0;
  auto& nets = trainer.model().nets;
  for (std::size_t i = 0; i < count; ++i) {
    const std::vector<std::size_t> idx{i};
    const Tensor<float> x = data::make_batch(test, idx, {}, nullptr);
    const std::size_t cls = opt.class_index.value_or(test.labels[i]);
    std::vector<xai::Heatmap> maps;
    for (std::size_t k = 0; k < nets.size(); ++k) {
      maps.push_back(xai::grad_cam(nets[k], x, cls, opt.layer));
      const fs::path png = dir / ("image" + std::to_string(i) + "_subnet" + std::to_string(k) + ".png");
      xai::render_heatmap(maps.back(), raw.image(i), raw.channels, raw.height, raw.width, png.string());
    }
    nlohmann::json entry{{"image", i}, {"class", cls}, {"label", test.labels[i]}};
    if (maps[0].all_zero() && maps[1].all_zero()) {
      entry["overlap"] = nullptr;
    } else {
      const double o = xai::heatmap_overlap(maps[0], maps[1]);
      entry["overlap"] = o;
      total += o;
      ++scored;
    }
    images.push_back(entry);
  }
  nlohmann::json report{{"config_digest", cfg.digest},
                        {"seed", cfg.seed},
                        {"layer", opt.layer.empty() ? nets.front().tap_stage() : opt.layer},
                        {"images", images},
                        {"mean_overlap", scored > 0 ? nlohmann::json(total / static_cast<double>(scored)) : nlohmann::json()}};
  std::ofstream(dir / "overlap.json") << report.dump(2) << '\n';
  out << report.dump() << '\n';
  return 0;
}

int run_compare(const Options& opt, std::ostream& out) {
  ExperimentConfig base = resolve(opt);
  const auto [train, test] = load_datasets(base);
  const std::string eval_digest = data::dataset_digest(test);
  const std::vector<std::uint64_t> seeds = opt.seed ? std::vector<std::uint64_t>{*opt.seed} : base.seeds;
  const fs::path table_path = fs::path(base.out_dir) / "summary.tsv";
  std::ofstream table(table_path);
  if (!table) throw std::runtime_error("cannot write '" + table_path.string() + "'");
  const std::string header = "method\tseed\taccuracy\teval_digest\tconfig_digest";
  table << header << '\n';
  out << header << '\n';
  auto row = [&](const std::string& method, std::uint64_t seed, double acc) {
    std::ostringstream line;
    line << method << '\t' << seed << '\t' << std::fixed << std::setprecision(4) << acc << '\t' << eval_digest << '\t'
         << base.digest;
    table << line.str() << '\n' << std::flush;
    out << line.str() << '\n';
  };

  for (std::uint64_t seed : seeds) {
    ExperimentConfig cfg = base;
    apply_seed(cfg, seed);
    const auto& d = cfg.dpcn;
    const std::size_t budget = engine::equal_budget_epochs(d);
    std::optional<models::Network<float>> first;
    if (cfg.baseline_single || cfg.baseline_ensemble) {
      first = engine::train_single(d, d.subnet_seeds[0], d.width_multiplier, budget, train);
      if (cfg.baseline_single) row("single", seed, engine::network_accuracy(*first, test));
    }
    if (cfg.baseline_ensemble) {
      auto second = engine::train_single(d, d.subnet_seeds[1], d.width_multiplier, budget, train);
      row("ensemble", seed, engine::ensemble_accuracy({&*first, &second}, test));
    }
    if (cfg.baseline_doubled) {
      auto wide = engine::train_single(d, d.subnet_seeds[0], 2.0 * d.width_multiplier, budget, train);
      row("doubled_width", seed, engine::network_accuracy(wide, test));
    }
    engine::Trainer trainer(d, train);
    trainer.run();
    row("dpcn", seed, trainer.accuracy(test));
  }
  return 0;
}

int run_gen_data(const Options& opt, std::ostream& out) {
  const ExperimentConfig cfg = resolve(opt);
  if (cfg.dataset.kind != "synthetic") throw std::runtime_error("gen-data needs 'dataset = synthetic'");
  const auto& d = cfg.dataset;
  const auto train = data::synthetic_shapes(d.train_per_class, d.classes, d.image_size, d.seed, d.synthetic);
  auto test = data::synthetic_shapes(d.test_per_class, d.classes, d.image_size, d.seed + 1, d.synthetic);
  test.split = data::Split::kTest;
  const fs::path dir(cfg.out_dir);
  data::save_binary_records(train, (dir / "train.bin").string());
  data::save_binary_records(test, (dir / "test.bin").string());
  nlohmann::json report{{"config_digest", cfg.digest},
                        {"train", {{"path", (dir / "train.bin").string()}, {"images", train.size()}, {"digest", data::dataset_digest(train)}}},
                        {"test", {{"path", (dir / "test.bin").string()}, {"images", test.size()}, {"digest", data::dataset_digest(test)}}}};
  out << report.dump() << '\n';
  return 0;
}

}  // namespace

int cli_main(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  tune_allocator();
  CLI::App app{"Discriminator-coordinated parallel convolutional networks"};
  app.require_subcommand(1);
  Options opt;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config_path, "Config file (key = value)")->required()->check(CLI::ExistingFile);
    sub->add_option("--seed", opt.seed, "Seed overriding the config");
    sub->add_option("--out", opt.out_dir, "Output directory overriding the config");
  };
  auto* train = app.add_subcommand("train", "Run the training phases, writing checkpoints and metric logs");
  add_common(train);
  train->add_option("--phase", opt.phase, "Last phase to run")->check(CLI::IsMember({"1", "2", "3", "all"}));
  train->add_option("--checkpoint", opt.checkpoint, "Resume from a phase-boundary checkpoint");
  auto* eval = app.add_subcommand("eval", "Report base, subnetwork, ensemble and extra-classifier accuracy");
  add_common(eval);
  eval->add_option("--checkpoint", opt.checkpoint, "Checkpoint to evaluate")->required();
  auto* gradcam = app.add_subcommand("gradcam", "Write per-subnetwork Grad-CAM overlays and overlap statistics");
  add_common(gradcam);
  gradcam->add_option("--checkpoint", opt.checkpoint, "Checkpoint to explain")->required();
  gradcam->add_option("--layer", opt.layer, "Target layer or stage (default: tap point)");
  gradcam->add_option("--class", opt.class_index, "Class to explain (default: true label)");
  gradcam->add_option("--count", opt.count, "Number of test images");
  auto* compare = app.add_subcommand("compare", "Baseline grid: single, ensemble, doubled width, D-PCN");
  add_common(compare);
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic benchmark as binary records");
  add_common(gen);
  auto* schema = app.add_subcommand("schema", "Print every config key with its default");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }
  try {
    if (schema->parsed()) {
      out << config_schema();
      return 0;
    }
    if (train->parsed()) return run_train(opt, out);
    if (eval->parsed()) return run_eval(opt, out);
    if (gradcam->parsed()) return run_gradcam(opt, out);
    if (compare->parsed()) return run_compare(opt, out);
    if (gen->parsed()) return run_gen_data(opt, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 1;
}

}  // namespace dpcn::cli
