#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "dpcn/cli/cli.hpp"
#include "dpcn/cli/config.hpp"

namespace dpcn::cli {
namespace {

namespace fs = std::filesystem;

struct Run {
  int status = 0;
  std::string out;
  std::string err;
};

Run invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "dpcn");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  Run r;
  r.status = cli_main(static_cast<int>(argv.size()), argv.data(), out, err);
  r.out = out.str();
  r.err = err.str();
  return r;
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kTinyConfig = R"(# tiny run
dataset = synthetic
classes = 4
train_per_class = 12
test_per_class = 25
image_size = 16
width_multiplier = 0.125
batch_size = 16
learning_rate = 0.05
epochs_step1 = 1
epochs_step2 = 1
epochs_step3 = 1
discriminator_channels = 8, 16
eval_interval = 0
seeds = 0, 1
)";

fs::path workspace(const std::string& name) {
  const fs::path dir = fs::path(::testing::TempDir()) / ("cli_" + name);
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::ofstream(dir / "config.txt") << kTinyConfig;
  return dir;
}

std::vector<std::string> lines_without_timing(const std::string& text) {
  std::vector<std::string> out;
  std::istringstream in(text);
  for (std::string line; std::getline(in, line);) {
    auto j = nlohmann::json::parse(line);
    j.erase("seconds");
    out.push_back(j.dump());
  }
  return out;
}

TEST(Config, CanonicalFormAndDigest) {
  const std::string a = "lambda = 1\n# c\nbatch_size=16  \n";
  const std::string b = "batch_size = 16\n\nlambda=1 # trailing\n";
  EXPECT_EQ(canonical_config(a), "batch_size=16\nlambda=1\n");
  EXPECT_EQ(config_digest(a), config_digest(b));
  EXPECT_NE(config_digest(a), config_digest("lambda = 0.5\n"));
  EXPECT_EQ(config_digest(a).size(), 64u);
  const auto cfg = parse_config(a);
  EXPECT_EQ(cfg.dpcn.batch_size, 16u);
  EXPECT_EQ(cfg.digest, config_digest(a));
}

TEST(Config, DiagnosticsNameLineAndField) {
  try {
    parse_config("lambda = 1\nbatch_size = lots\n", "exp.cfg");
    FAIL() << "bad value accepted";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.line(), 2u);
    EXPECT_EQ(e.field(), "batch_size");
    EXPECT_NE(std::string(e.what()).find("exp.cfg:2"), std::string::npos) << e.what();
  }
  EXPECT_THROW(parse_config("lamda = 1\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda = 1\nlambda = 2\n"), ConfigError);
  EXPECT_THROW(parse_config("just words\n"), ConfigError);
  EXPECT_THROW(parse_config("lambda = -1\n"), ConfigError);
}

TEST(Config, SeedDerivation) {
  auto cfg = parse_config("n_subnets = 3\n");
  apply_seed(cfg, 2);
  EXPECT_EQ(cfg.seed, 2u);
  ASSERT_EQ(cfg.dpcn.subnet_seeds.size(), 3u);
  EXPECT_NE(cfg.dpcn.subnet_seeds[0], cfg.dpcn.subnet_seeds[1]);
  auto other = parse_config("n_subnets = 3\n");
  apply_seed(other, 3);
  EXPECT_NE(other.dpcn.subnet_seeds, cfg.dpcn.subnet_seeds);
  EXPECT_EQ(other.dataset.seed, cfg.dataset.seed);
}

TEST(Config, SchemaListsEveryKey) {
  const std::string schema = config_schema();
  for (const char* key : {"lambda", "fusion", "epochs_step1", "tap_point", "dataset", "seeds", "baseline_doubled"}) {
    EXPECT_NE(schema.find(key), std::string::npos) << key;
  }
}

TEST(Cli, MalformedConfigExitsWithDiagnostic) {
  const auto dir = workspace("bad");
  std::ofstream(dir / "bad.txt") << "classes = 4\nfusion = average\n";
  const auto r = invoke({"train", "--config", (dir / "bad.txt").string(), "--out", (dir / "o").string()});
  EXPECT_EQ(r.status, 2);
  EXPECT_NE(r.err.find(":2"), std::string::npos) << r.err;
  EXPECT_NE(r.err.find("fusion"), std::string::npos) << r.err;
}

TEST(Cli, MissingCheckpointIsAnError) {
  const auto dir = workspace("missing");
  const auto cfg = (dir / "config.txt").string();
  EXPECT_NE(invoke({"eval", "--config", cfg, "--out", dir.string()}).status, 0);
  EXPECT_NE(invoke({"eval", "--config", cfg, "--out", dir.string(), "--checkpoint", (dir / "none.ckpt").string()}).status,
            0);
  EXPECT_NE(
      invoke({"gradcam", "--config", cfg, "--out", dir.string(), "--checkpoint", (dir / "none.ckpt").string()}).status,
      0);
  EXPECT_NE(invoke({"frobnicate"}).status, 0);
}

TEST(Cli, TrainTwiceIsDeterministic) {
  const auto dir = workspace("det");
  const auto cfg = (dir / "config.txt").string();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", (dir / "a").string()}).status, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", (dir / "b").string()}).status, 0);
  const auto a = lines_without_timing(read_file(dir / "a" / "metrics.jsonl"));
  const auto b = lines_without_timing(read_file(dir / "b" / "metrics.jsonl"));
  ASSERT_EQ(a.size(), 3u);
  EXPECT_EQ(a, b);
  const auto first = nlohmann::json::parse(a.front());
  EXPECT_EQ(first["config_digest"], config_digest(kTinyConfig));
  EXPECT_EQ(first["seed"], 0);
  for (int k = 0; k <= 3; ++k) EXPECT_TRUE(fs::exists(dir / "a" / ("phase" + std::to_string(k) + ".ckpt"))) << k;
}

TEST(Cli, ResumeAppendsTheSameLog) {
  const auto dir = workspace("resume");
  const auto cfg = (dir / "config.txt").string();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", (dir / "full").string()}).status, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", (dir / "part").string(), "--phase", "1"}).status, 0);
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", (dir / "part").string(), "--checkpoint",
                    (dir / "part" / "phase1.ckpt").string()})
                .status,
            0);
  EXPECT_EQ(lines_without_timing(read_file(dir / "part" / "metrics.jsonl")),
            lines_without_timing(read_file(dir / "full" / "metrics.jsonl")));
}

TEST(Cli, ResumeRejectsOtherConfig) {
  const auto dir = workspace("mismatch");
  const auto cfg = (dir / "config.txt").string();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", dir.string(), "--phase", "1"}).status, 0);
  std::ofstream(dir / "other.txt") << kTinyConfig << "lambda = 0.5\n";
  const auto r = invoke({"train", "--config", (dir / "other.txt").string(), "--out", (dir / "o").string(),
                         "--checkpoint", (dir / "phase1.ckpt").string()});
  EXPECT_EQ(r.status, 1);
  EXPECT_NE(r.err.find("digest"), std::string::npos) << r.err;
}

TEST(Cli, EvalOnUntrainedCheckpointIsAtChance) {
  const auto dir = workspace("chance");
  const auto cfg = (dir / "config.txt").string();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", dir.string(), "--phase", "1"}).status, 0);
  const auto r = invoke({"eval", "--config", cfg, "--out", dir.string(), "--checkpoint", (dir / "phase0.ckpt").string()});
  ASSERT_EQ(r.status, 0) << r.err;
  const auto report = nlohmann::json::parse(read_file(dir / "eval.json"));
  EXPECT_EQ(report["checkpoint_phase"], 0);
  // 100 balanced test images over 4 classes: three binomial standard deviations.
  const double sd = std::sqrt(0.25 * 0.75 / 100.0);
  EXPECT_NEAR(report["extra_accuracy"].get<double>(), 0.25, 3 * sd);
  EXPECT_NEAR(report["base_accuracy"].get<double>(), 0.25, 3 * sd);
  EXPECT_TRUE(report.contains("ensemble_accuracy"));
  EXPECT_EQ(report["subnet_accuracy"].size(), 2u);
}

TEST(Cli, GradcamWritesOverlaysAndOverlap) {
  const auto dir = workspace("gradcam");
  const auto cfg = (dir / "config.txt").string();
  ASSERT_EQ(invoke({"train", "--config", cfg, "--out", dir.string()}).status, 0);
  const auto r = invoke({"gradcam", "--config", cfg, "--out", dir.string(), "--checkpoint",
                         (dir / "phase3.ckpt").string(), "--count", "3"});
  ASSERT_EQ(r.status, 0) << r.err;
  for (int i = 0; i < 3; ++i) {
    for (int k = 0; k < 2; ++k) {
      EXPECT_TRUE(fs::exists(dir / "gradcam" / ("image" + std::to_string(i) + "_subnet" + std::to_string(k) + ".png")));
    }
  }
  const auto report = nlohmann::json::parse(read_file(dir / "gradcam" / "overlap.json"));
  EXPECT_EQ(report["layer"], "block3");
  EXPECT_EQ(report["images"].size(), 3u);
  EXPECT_EQ(report["config_digest"], config_digest(kTinyConfig));
  const auto bad = invoke({"gradcam", "--config", cfg, "--out", dir.string(), "--checkpoint",
                           (dir / "phase3.ckpt").string(), "--layer", "nowhere"});
  EXPECT_NE(bad.status, 0);
}

TEST(Cli, CompareListsFourMethodsOnOneSplit) {
  const auto dir = workspace("compare");
  const auto r = invoke({"compare", "--config", (dir / "config.txt").string(), "--out", dir.string(), "--seed", "4"});
  ASSERT_EQ(r.status, 0) << r.err;
  std::istringstream table(read_file(dir / "summary.tsv"));
  std::string header;
  std::getline(table, header);
  EXPECT_EQ(header, "method\tseed\taccuracy\teval_digest\tconfig_digest");
  std::vector<std::string> methods;
  std::set<std::string> digests;
  for (std::string line; std::getline(table, line);) {
    std::istringstream cols(line);
    std::string method, seed, acc, eval_digest, cfg_digest;
    cols >> method >> seed >> acc >> eval_digest >> cfg_digest;
    methods.push_back(method);
    digests.insert(eval_digest);
    EXPECT_EQ(seed, "4");
    EXPECT_EQ(cfg_digest, config_digest(kTinyConfig));
  }
  EXPECT_EQ(methods, (std::vector<std::string>{"single", "ensemble", "doubled_width", "dpcn"}));
  ASSERT_EQ(digests.size(), 1u);

  // The digest is the one of the regenerated, normalised test split.
  auto cfg = parse_config(kTinyConfig);
  EXPECT_EQ(*digests.begin(), data::dataset_digest(load_datasets(cfg).second));
}

TEST(Cli, GenDataWritesLoadableRecords) {
  const auto dir = workspace("gen");
  std::ofstream(dir / "gen.txt") << "classes = 4\ntrain_per_class = 12\ntest_per_class = 25\n";
  ASSERT_EQ(invoke({"gen-data", "--config", (dir / "gen.txt").string(), "--out", dir.string()}).status, 0);
  EXPECT_NE(invoke({"gen-data", "--config", (dir / "config.txt").string(), "--out", dir.string()}).status, 0);
  const auto train = data::load_cifar_binary((dir / "train.bin").string(), data::CifarVariant::kCifar10);
  EXPECT_EQ(train.size(), 48u);
  const auto test = data::load_cifar_binary((dir / "test.bin").string(), data::CifarVariant::kCifar10);
  EXPECT_EQ(test.size(), 100u);
}

}  // namespace
}  // namespace dpcn::cli
