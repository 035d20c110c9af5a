// Acceptance suite. Prints one PASS/FAIL line per criterion at the end and
// exits non-zero when a gating criterion fails.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <json.hpp>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

#include "dpcn/cli/cli.hpp"
#include "dpcn/cli/config.hpp"
#include "dpcn/core/runtime.hpp"
#include "dpcn/engine/baselines.hpp"
#include "dpcn/engine/trainer.hpp"
#include "dpcn/xai/gradcam.hpp"
#include "suites.hpp"

namespace fs = std::filesystem;
using namespace dpcn;

namespace {

// Pinned limits.
constexpr double kGradientSuiteSeconds = 180.0;
constexpr double kSeedBudgetSeconds = 1800.0;
constexpr std::size_t kMinSeedWins = 2;
constexpr std::size_t kProbeFitImages = 2000;
constexpr std::size_t kOverlapImages = 400;

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point start) { return std::chrono::duration<double>(Clock::now() - start).count(); }

struct Verdict {
  int id = 0;
  bool pass = false;
  bool gating = true;
  std::string summary;
};

std::string fmt(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

void log(const std::string& line) { std::cout << "  " << line << std::endl; }

void log_results(const std::vector<testing::CheckResult>& results) {
  for (const auto& r : results) {
    log(std::string(r.passed ? "ok   " : "FAIL ") + r.name + ": " + fmt(r.value, 3) + " (limit " + fmt(r.limit, 3) +
        (r.trials > 0 ? ", " + std::to_string(r.trials) + " trials" : std::string()) + ")" +
        (r.detail.empty() ? std::string() : " " + r.detail));
  }
}

double worst(const std::vector<testing::CheckResult>& results) {
  double w = 0.0;
  for (const auto& r : results) w = std::max(w, r.value);
  return w;
}

// ---------------------------------------------------------------- 1, 2, 5

Verdict gradient_criterion() {
  const auto start = Clock::now();
  const auto ops = testing::gradient_suite(101, testing::kGradTrials);
  const auto composite = testing::composite_gradient_suite(202, testing::kGradTrials, 50);
  const double secs = seconds_since(start);
  log_results(ops);
  log_results(composite);
  const bool pass = testing::all_passed(ops) && testing::all_passed(composite) && secs < kGradientSuiteSeconds;
  return {1, pass, true,
          std::to_string(ops.size()) + " op checks, worst relative error " + fmt(worst(ops), 3) +
              "; composite Step-2 loss worst " + fmt(worst(composite), 3) + " (limit " + fmt(testing::kGradTolerance) +
              "); " + fmt(secs, 3) + " s (limit " + fmt(kGradientSuiteSeconds) + " s)"};
}

Verdict loss_criterion() {
  const auto results = testing::loss_formula_suite();
  log_results(results);
  return {2, testing::all_passed(results), true,
          std::to_string(results.size()) + " loss fixtures, worst deviation " + fmt(worst(results), 3)};
}

Verdict oracle_criterion(const fs::path& scratch) {
  fs::create_directories(scratch / "oracles");
  const auto results = testing::oracle_suite(303, (scratch / "oracles").string());
  log_results(results);
  return {5, testing::all_passed(results), true, std::to_string(results.size()) + " oracle comparisons"};
}

// ---------------------------------------------------------------- 3

data::ImageDataset normalized_shapes(std::size_t per_class, std::size_t classes, std::size_t size, std::uint64_t seed) {
  auto raw = data::synthetic_shapes(per_class, classes, size, seed);
  const auto means = data::compute_channel_means(raw);
  const auto stds = data::compute_channel_stds(raw);
  return data::normalize_channels(std::move(raw), means, stds);
}

using Snapshot = std::map<std::string, std::vector<float>>;

Snapshot snapshot(engine::DpcnModel<float>& model) {
  Snapshot s;
  for (std::size_t k = 0; k < model.nets.size(); ++k) {
    const std::string p = "subnet" + std::to_string(k) + ".";
    s[p + "extractor"] = models::flatten_parameters(model.nets[k].extractor_parameters());
    s[p + "classifier"] = models::flatten_parameters(model.nets[k].classifier_parameters());
    s[p + "bn_stats"] = models::flatten_buffers(model.nets[k].buffers());
  }
  s["discriminator"] = models::flatten_parameters(model.disc.parameters());
  s["discriminator.bn_stats"] = models::flatten_buffers(model.disc.buffers());
  s["extra"] = models::flatten_parameters(model.extra.parameters());
  s["extra.bn_stats"] = models::flatten_buffers(model.extra.buffers());
  return s;
}

// Groups that must change in a phase; every other group must stay bit-identical.
std::set<std::string> expected_changes(const engine::PhaseState& state, const Snapshot& before) {
  std::set<std::string> out;
  for (std::size_t k = 0; k < state.extractor_trainable.size(); ++k) {
    const std::string p = "subnet" + std::to_string(k) + ".";
    if (state.extractor_trainable[k]) out.insert({p + "extractor", p + "bn_stats"});
    if (state.classifier_trainable[k]) out.insert(p + "classifier");
  }
  if (state.discriminator_trainable) out.insert({"discriminator", "discriminator.bn_stats"});
  if (state.extra_trainable) out.insert({"extra", "extra.bn_stats"});
  // Empty groups (a head without batch norm) cannot change.
  for (auto it = out.begin(); it != out.end();) it = before.at(*it).empty() ? out.erase(it) : std::next(it);
  return out;
}

Verdict phase_criterion() {
  const auto train = normalized_shapes(24, 4, 16, 31);
  engine::DpcnConfig c;
  c.width_multiplier = 0.125;
  c.batch_size = 16;
  c.phase_epochs = {1, 1, 1};
  c.discriminator_channels = {8, 16};
  c.optimizer.learning_rate = 0.05;
  c.eval_interval = 0;
  engine::Trainer trainer(c, train);

  bool pass = true;
  for (int phase = 1; phase <= 3; ++phase) {
    const engine::PhaseState state = trainer.phase_state();
    const Snapshot before = snapshot(trainer.model());
    trainer.run(phase);
    const Snapshot after = snapshot(trainer.model());
    const auto expected = expected_changes(state, before);
    std::set<std::string> changed;
    for (const auto& [group, values] : before) {
      if (values != after.at(group)) changed.insert(group);
    }
    std::string list;
    for (const auto& g : changed) list += (list.empty() ? "" : ", ") + g;
    log("phase " + std::to_string(phase) + " (" + engine::to_string(state.phase) + ") changed: " + list);
    if (changed != expected) {
      pass = false;
      for (const auto& g : expected) {
        if (!changed.count(g)) log("  expected to change but did not: " + g);
      }
      for (const auto& g : changed) {
        if (!expected.count(g)) log("  changed although frozen: " + g);
      }
    }
  }

  auto& model = trainer.model();
  model.disc.layers().reset_evaluations();
  for (auto& net : model.nets) net.classifier().reset_evaluations();
  const std::size_t extra_before = model.extra.layers().evaluations();
  std::vector<std::size_t> idx(8);
  std::iota(idx.begin(), idx.end(), 0);
  trainer.predict_proba(data::make_batch(train, idx, {}, nullptr));
  std::size_t training_only = model.disc.evaluations();
  for (auto& net : model.nets) training_only += net.classifier().evaluations();
  const bool extra_used = model.extra.layers().evaluations() > extra_before;
  log("inference: discriminator + subnetwork classifier evaluations = " + std::to_string(training_only) +
      ", extra classifier evaluated = " + (extra_used ? "yes" : "no"));
  pass = pass && training_only == 0 && extra_used;
  return {3, pass, true, "snapshot diff of every parameter group and BN statistic per phase; inference counters " +
                             std::to_string(training_only)};
}

// ---------------------------------------------------------------- 4

const char* kDeterminismConfig = R"(# determinism run: augmentation on so the data RNG state matters
dataset = synthetic
classes = 4
train_per_class = 64
test_per_class = 16
image_size = 32
width_multiplier = 0.125
batch_size = 32
learning_rate = 0.05
epochs_step1 = 1
epochs_step2 = 2
epochs_step3 = 1
discriminator_channels = 16, 32
augment = true
horizontal_flip = true
eval_interval = 1
seed = 5
)";

int run_cli(std::vector<std::string> args) {
  args.insert(args.begin(), "dpcn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int status = cli::cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  if (status != 0) log("dpcn " + args[1] + " failed: " + err.str());
  return status;
}

std::vector<std::string> metric_lines(const fs::path& path) {
  std::ifstream in(path);
  std::vector<std::string> out;
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    j.erase("seconds");
    out.push_back(j.dump());
  }
  return out;
}

Verdict determinism_criterion(const fs::path& scratch) {
  const fs::path dir = scratch / "determinism";
  fs::remove_all(dir);
  fs::create_directories(dir);
  const std::string cfg = (dir / "config.cfg").string();
  std::ofstream(cfg) << kDeterminismConfig;

  bool ok = run_cli({"train", "--config", cfg, "--out", (dir / "a").string()}) == 0 &&
            run_cli({"train", "--config", cfg, "--out", (dir / "b").string()}) == 0;
  const auto a = metric_lines(dir / "a" / "metrics.jsonl");
  const auto b = metric_lines(dir / "b" / "metrics.jsonl");
  const bool repeat = ok && a.size() == 4 && a == b;
  log("two full runs: " + std::to_string(a.size()) + " metric records each, identical = " + (a == b ? "yes" : "no"));

  bool resumes = ok;
  for (int boundary : {1, 2}) {
    const fs::path out = dir / ("resume" + std::to_string(boundary));
    const std::string ckpt = (out / ("phase" + std::to_string(boundary) + ".ckpt")).string();
    const bool ran = run_cli({"train", "--config", cfg, "--out", out.string(), "--phase", std::to_string(boundary)}) == 0 &&
                     run_cli({"train", "--config", cfg, "--out", out.string(), "--checkpoint", ckpt}) == 0;
    const auto r = metric_lines(out / "metrics.jsonl");
    const bool same = ran && r == a;
    log("resume at phase-" + std::to_string(boundary) + " boundary: identical continuation = " + (same ? "yes" : "no"));
    resumes = resumes && same;
  }
  return {4, repeat && resumes, true, "repeat run and resumes at both phase boundaries compared record by record"};
}

// ---------------------------------------------------------------- 6, 7, 8

struct SeedResult {
  std::uint64_t seed = 0;
  double single = 0.0;
  double dpcn = 0.0;
  double control = 0.0;  // lambda = 0 extra-classifier accuracy
  double seconds = 0.0;  // single + D-PCN training and evaluation
  double probe = 0.0;
  double probe_control = 0.0;
  double overlap = 0.0;
  double overlap_control = 0.0;
};

data::ImageDataset head(const data::ImageDataset& ds, std::size_t n) {
  data::ImageDataset out = ds;
  n = std::min(n, ds.size());
  out.images.resize(n * ds.image_elements());
  out.labels.resize(n);
  return out;
}

struct Evidence {
  double probe = 0.0;
  double overlap = 0.0;
};

Evidence divergence_evidence(engine::Trainer& trainer, const data::ImageDataset& train, const data::ImageDataset& test) {
  auto& nets = trainer.model().nets;
  Evidence e;
  e.probe = engine::divergence_probe(nets[0], nets[1], head(train, kProbeFitImages), test).heldout_accuracy;
  std::size_t skipped = 0;
  e.overlap = xai::mean_overlap(nets[0], nets[1], head(test, kOverlapImages), {}, &skipped);
  if (skipped > 0) log("    overlap: " + std::to_string(skipped) + " image(s) with two all-zero maps skipped");
  return e;
}

struct ExperimentVerdicts {
  Verdict six, seven, eight;
};

ExperimentVerdicts experiment_criteria(const std::string& benchmark, const fs::path& scratch, std::size_t max_seeds) {
  const cli::ExperimentConfig base = cli::load_config(benchmark);
  const auto [train, test] = cli::load_datasets(base);
  const std::string eval_digest = data::dataset_digest(test);
  std::vector<std::uint64_t> seeds = base.seeds;
  if (seeds.size() > max_seeds) seeds.resize(max_seeds);
  log("benchmark " + benchmark + ": " + std::to_string(train.size()) + " train / " + std::to_string(test.size()) +
      " test images, " + std::to_string(train.class_count) + " classes, config digest " + base.digest.substr(0, 12));

  fs::create_directories(scratch);
  std::ofstream table(scratch / "summary.tsv");
  table << "method\tseed\taccuracy\teval_digest\tconfig_digest\n";
  auto row = [&](const std::string& method, std::uint64_t seed, double acc) {
    table << method << '\t' << seed << '\t' << std::fixed << std::setprecision(4) << acc << '\t' << eval_digest << '\t'
          << base.digest << '\n'
          << std::flush;
  };

  std::vector<SeedResult> results;
  std::map<std::string, double> grid;
  for (std::uint64_t seed : seeds) {
    cli::ExperimentConfig cfg = base;
    cli::apply_seed(cfg, seed);
    const engine::DpcnConfig& d = cfg.dpcn;
    SeedResult r;
    r.seed = seed;
    log("seed " + std::to_string(seed) + ":");

    const auto start = Clock::now();
    auto single = engine::train_single(d, d.subnet_seeds[0], d.width_multiplier, engine::equal_budget_epochs(d), train);
    r.single = engine::network_accuracy(single, test);
    engine::Trainer dpcn(d, train);
    dpcn.run();
    r.dpcn = dpcn.accuracy(test);
    r.seconds = seconds_since(start);
    log("    single " + fmt(r.single) + "  D-PCN extra " + fmt(r.dpcn) + "  (subnets " +
        fmt(dpcn.subnet_accuracy(0, test)) + ", " + fmt(dpcn.subnet_accuracy(1, test)) + ")  " + fmt(r.seconds, 4) +
        " s");
    const Evidence with = divergence_evidence(dpcn, train, test);

    engine::DpcnConfig control_cfg = d;
    control_cfg.lambda = 0.0;
    engine::Trainer control(control_cfg, train);
    control.run();
    r.control = control.accuracy(test);
    const Evidence without = divergence_evidence(control, train, test);
    r.probe = with.probe;
    r.probe_control = without.probe;
    r.overlap = with.overlap;
    r.overlap_control = without.overlap;
    log("    lambda=1 probe " + fmt(r.probe) + " overlap " + fmt(r.overlap) + " | lambda=0 probe " +
        fmt(r.probe_control) + " overlap " + fmt(r.overlap_control) + " extra " + fmt(r.control));

    row("single", seed, r.single);
    row("dpcn", seed, r.dpcn);
    row("dpcn_lambda0", seed, r.control);
    if (seed == seeds.front()) {
      // Baseline grid for the first seed, reusing its single network.
      auto second = engine::train_single(d, d.subnet_seeds[1], d.width_multiplier, engine::equal_budget_epochs(d), train);
      grid["ensemble"] = engine::ensemble_accuracy({&single, &second}, test);
      auto wide = engine::train_single(d, d.subnet_seeds[0], 2.0 * d.width_multiplier, engine::equal_budget_epochs(d),
                                       train);
      grid["doubled_width"] = engine::network_accuracy(wide, test);
      grid["single"] = r.single;
      grid["dpcn"] = r.dpcn;
      row("ensemble", seed, grid["ensemble"]);
      row("doubled_width", seed, grid["doubled_width"]);
    }
    results.push_back(r);
  }

  const double n = static_cast<double>(results.size());
  double mean_single = 0, mean_dpcn = 0, mean_overlap = 0, mean_overlap_control = 0, worst_seconds = 0;
  std::size_t wins = 0, probe_wins = 0;
  for (const auto& r : results) {
    mean_single += r.single / n;
    mean_dpcn += r.dpcn / n;
    mean_overlap += r.overlap / n;
    mean_overlap_control += r.overlap_control / n;
    worst_seconds = std::max(worst_seconds, r.seconds);
    wins += r.dpcn > r.single;
    probe_wins += r.probe > r.probe_control;
  }
  const bool enough_seeds = results.size() >= 3;

  ExperimentVerdicts v;
  v.six = {6,
           enough_seeds && mean_dpcn >= mean_single && wins >= kMinSeedWins && worst_seconds < kSeedBudgetSeconds,
           true,
           "mean extra-classifier accuracy " + fmt(mean_dpcn) + " vs single " + fmt(mean_single) + ", D-PCN ahead on " +
               std::to_string(wins) + "/" + std::to_string(results.size()) + " seeds, slowest seed " +
               fmt(worst_seconds, 4) + " s (limit " + fmt(kSeedBudgetSeconds) + " s)"};
  v.seven = {7, enough_seeds && probe_wins >= kMinSeedWins && mean_overlap < mean_overlap_control, true,
             "probe lambda=1 above lambda=0 on " + std::to_string(probe_wins) + "/" + std::to_string(results.size()) +
                 " seeds; mean Grad-CAM overlap " + fmt(mean_overlap) + " (lambda=1) vs " +
                 fmt(mean_overlap_control) + " (lambda=0)"};

  std::vector<std::pair<std::string, double>> order(grid.begin(), grid.end());
  std::stable_sort(order.begin(), order.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::string ranking;
  for (const auto& [method, acc] : order) ranking += (ranking.empty() ? "" : " > ") + method + " " + fmt(acc);
  v.eight = {8, grid.size() == 4, false,
             "seed " + std::to_string(seeds.front()) + " ordering (report only): " + ranking + "; eval split " +
                 eval_digest.substr(0, 12) + ", table in " + (scratch / "summary.tsv").string()};
  return v;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria 1-8"};
  std::string benchmark;
  std::string scratch = (fs::temp_directory_path() / "dpcn-acceptance").string();
  std::vector<int> only;
  std::size_t max_seeds = 3;
  app.add_option("--benchmark", benchmark, "Benchmark config for criteria 6-8")->required()->check(CLI::ExistingFile);
  app.add_option("--scratch", scratch, "Directory for run artefacts");
  app.add_option("--only", only, "Run only these criteria")->delimiter(',');
  app.add_option("--max-seeds", max_seeds, "Limit the experiment to the first N seeds (fewer than 3 cannot pass)");
  CLI11_PARSE(app, argc, argv);

  std::setvbuf(stdout, nullptr, _IOLBF, 0);
  tune_allocator();
  auto wanted = [&](int id) { return only.empty() || std::find(only.begin(), only.end(), id) != only.end(); };

  std::vector<Verdict> verdicts;
  auto run = [&](int id, const std::function<Verdict()>& fn) {
    if (!wanted(id)) return;
    std::cout << "criterion " << id << std::endl;
    try {
      verdicts.push_back(fn());
    } catch (const std::exception& e) {
      verdicts.push_back({id, false, true, std::string("aborted: ") + e.what()});
    }
  };
  run(1, gradient_criterion);
  run(2, loss_criterion);
  run(3, phase_criterion);
  run(4, [&] { return determinism_criterion(scratch); });
  run(5, [&] { return oracle_criterion(scratch); });
  if (wanted(6) || wanted(7) || wanted(8)) {
    std::cout << "criteria 6-8" << std::endl;
    try {
      const auto v = experiment_criteria(benchmark, fs::path(scratch) / "experiment", max_seeds);
      for (const Verdict& x : {v.six, v.seven, v.eight}) {
        if (wanted(x.id)) verdicts.push_back(x);
      }
    } catch (const std::exception& e) {
      for (int id : {6, 7, 8}) {
        if (wanted(id)) verdicts.push_back({id, false, id != 8, std::string("aborted: ") + e.what()});
      }
    }
  }

  // ctest hides output of passing tests, so the verdicts also go to a file.
  fs::create_directories(scratch);
  std::ofstream report(fs::path(scratch) / "verdicts.txt");
  std::cout << "\n";
  bool all = true;
  for (const auto& v : verdicts) {
    std::ostringstream line;
    line << "CRITERION " << v.id << ": " << (v.pass ? "PASS" : "FAIL") << " - " << v.summary << "\n";
    std::cout << line.str();
    report << line.str();
    if (v.gating && !v.pass) all = false;
  }
  return all ? 0 : 1;
}
