#include "dpcn/cli/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "dpcn/data/checkpoint.hpp"

namespace dpcn::cli {

namespace {

struct Entry {
  std::size_t line;
  std::string key;
  std::string value;
};

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<Entry> tokenize(std::string_view text, const std::string& source) {
  std::vector<Entry> out;
  std::map<std::string, std::size_t> seen;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    ++line_no;
    std::string_view raw = text.substr(pos, end - pos);
    pos = end + 1;
    if (const auto hash = raw.find('#'); hash != std::string_view::npos) raw = raw.substr(0, hash);
    const std::string line = trim(raw);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(source, line_no, trim(line), "expected 'key = value'");
    Entry e{line_no, trim(std::string_view(line).substr(0, eq)), trim(std::string_view(line).substr(eq + 1))};
    if (e.key.empty()) throw ConfigError(source, line_no, "", "missing key before '='");
    if (e.value.empty()) throw ConfigError(source, line_no, e.key, "missing value");
    if (auto [it, fresh] = seen.emplace(e.key, line_no); !fresh) {
      throw ConfigError(source, line_no, e.key, "duplicate key (first set on line " + std::to_string(it->second) + ")");
    }
    out.push_back(std::move(e));
  }
  return out;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("'" + v + "' is not a number");
  }
  if (used != v.size()) throw std::invalid_argument("'" + v + "' is not a number");
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) throw std::invalid_argument("'" + v + "' is not a non-negative integer");
  return out;
}

std::size_t to_size(const std::string& v) { return static_cast<std::size_t>(to_u64(v)); }

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("'" + v + "' is not a boolean");
}

template <typename Fn>
auto to_list(const std::string& v, Fn convert) {
  std::vector<decltype(convert(std::string()))> out;
  std::stringstream in(v);
  std::string item;
  while (std::getline(in, item, ',')) {
    item = trim(item);
    if (item.empty()) throw std::invalid_argument("empty list entry in '" + v + "'");
    out.push_back(convert(item));
  }
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&)>;

struct Key {
  const char* name;
  const char* fallback;
  Setter set;
};

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      {"lambda", "1", [](auto& c, auto& v) { c.dpcn.lambda = to_double(v); }},
      {"n_subnets", "2", [](auto& c, auto& v) { c.dpcn.n_subnets = to_size(v); }},
      {"fusion", "concat",
       [](auto& c, auto& v) {
         if (v != "concat" && v != "sum") throw std::invalid_argument("expected 'concat' or 'sum'");
         c.dpcn.fusion = v == "concat" ? engine::Fusion::kConcat : engine::Fusion::kSum;
       }},
      {"tap_point", "block3", [](auto& c, auto& v) { c.dpcn.tap_point = v; }},
      {"epochs_step1", "5", [](auto& c, auto& v) { c.dpcn.phase_epochs[0] = to_size(v); }},
      {"epochs_step2", "10", [](auto& c, auto& v) { c.dpcn.phase_epochs[1] = to_size(v); }},
      {"epochs_step3", "5", [](auto& c, auto& v) { c.dpcn.phase_epochs[2] = to_size(v); }},
      {"learning_rate", "0.1", [](auto& c, auto& v) { c.dpcn.optimizer.learning_rate = to_double(v); }},
      {"momentum", "0.9", [](auto& c, auto& v) { c.dpcn.optimizer.momentum = to_double(v); }},
      {"weight_decay", "0.0005", [](auto& c, auto& v) { c.dpcn.optimizer.weight_decay = to_double(v); }},
      {"lr_milestones", "0.5,0.75", [](auto& c, auto& v) { c.dpcn.lr_milestones = to_list(v, to_double); }},
      {"lr_decay", "0.1", [](auto& c, auto& v) { c.dpcn.lr_decay = to_double(v); }},
      {"batch_size", "128", [](auto& c, auto& v) { c.dpcn.batch_size = to_size(v); }},
      {"targets", "(built-in)", [](auto& c, auto& v) { c.dpcn.targets = to_list(v, to_double); }},
      {"backbone", "nin", [](auto& c, auto& v) { c.dpcn.backbone = v; }},
      {"width_multiplier", "0.25", [](auto& c, auto& v) { c.dpcn.width_multiplier = to_double(v); }},
      {"resnet_blocks", "1", [](auto& c, auto& v) { c.dpcn.resnet_blocks = to_size(v); }},
      {"discriminator_channels", "64,128,256",
       [](auto& c, auto& v) { c.dpcn.discriminator_channels = to_list(v, to_size); }},
      {"discriminator_slope", "0.2", [](auto& c, auto& v) { c.dpcn.discriminator_slope = to_double(v); }},
      {"augment", "false", [](auto& c, auto& v) { c.dpcn.augment.enabled = to_bool(v); }},
      {"augment_pad", "4", [](auto& c, auto& v) { c.dpcn.augment.pad = to_size(v); }},
      {"horizontal_flip", "false", [](auto& c, auto& v) { c.dpcn.augment.horizontal_flip = to_bool(v); }},
      {"eval_interval", "1", [](auto& c, auto& v) { c.dpcn.eval_interval = to_size(v); }},
      {"dataset", "synthetic",
       [](auto& c, auto& v) {
         if (v != "synthetic" && v != "cifar10" && v != "cifar100") {
           throw std::invalid_argument("expected 'synthetic', 'cifar10' or 'cifar100'");
         }
         c.dataset.kind = v;
       }},
      {"classes", "4", [](auto& c, auto& v) { c.dataset.classes = to_size(v); }},
      {"train_per_class", "2000", [](auto& c, auto& v) { c.dataset.train_per_class = to_size(v); }},
      {"test_per_class", "500", [](auto& c, auto& v) { c.dataset.test_per_class = to_size(v); }},
      {"image_size", "32", [](auto& c, auto& v) { c.dataset.image_size = to_size(v); }},
      {"dataset_seed", "1000", [](auto& c, auto& v) { c.dataset.seed = to_u64(v); }},
      {"noise_std", "0.08", [](auto& c, auto& v) { c.dataset.synthetic.noise_std = to_double(v); }},
      {"clutter", "3", [](auto& c, auto& v) { c.dataset.synthetic.clutter = to_size(v); }},
      {"min_scale", "0.22", [](auto& c, auto& v) { c.dataset.synthetic.min_scale = to_double(v); }},
      {"max_scale", "0.40", [](auto& c, auto& v) { c.dataset.synthetic.max_scale = to_double(v); }},
      {"contrast_floor", "0.25", [](auto& c, auto& v) { c.dataset.synthetic.contrast_floor = to_double(v); }},
      {"train_path", "(none)", [](auto& c, auto& v) { c.dataset.train_path = v; }},
      {"test_path", "(none)", [](auto& c, auto& v) { c.dataset.test_path = v; }},
      {"out_dir", "runs", [](auto& c, auto& v) { c.out_dir = v; }},
      {"seed", "0", [](auto& c, auto& v) { c.seed = to_u64(v); }},
      {"seeds", "0,1,2", [](auto& c, auto& v) { c.seeds = to_list(v, to_u64); }},
      {"baseline_single", "true", [](auto& c, auto& v) { c.baseline_single = to_bool(v); }},
      {"baseline_ensemble", "true", [](auto& c, auto& v) { c.baseline_ensemble = to_bool(v); }},
      {"baseline_doubled", "true", [](auto& c, auto& v) { c.baseline_doubled = to_bool(v); }},
  };
  return table;
}

const Key* find_key(const std::string& name) {
  for (const auto& k : keys()) {
    if (name == k.name) return &k;
  }
  return nullptr;
}

}  // namespace

ConfigError::ConfigError(const std::string& source, std::size_t line, const std::string& field, const std::string& what)
    : std::runtime_error(source + (line > 0 ? ":" + std::to_string(line) : std::string()) +
                         (field.empty() ? std::string() : ": field '" + field + "'") + ": " + what),
      line_(line),
      field_(field) {}

std::string canonical_config(std::string_view text, const std::string& source) {
  auto entries = tokenize(text, source);
  std::sort(entries.begin(), entries.end(), [](const Entry& a, const Entry& b) { return a.key < b.key; });
  std::string out;
  for (const auto& e : entries) out += e.key + "=" + e.value + "\n";
  return out;
}

std::string config_digest(std::string_view text, const std::string& source) {
  return data::sha256_hex(canonical_config(text, source));
}

void apply_seed(ExperimentConfig& config, std::uint64_t seed) {
  config.seed = seed;
  const std::uint64_t base = 1000 * seed;
  config.dpcn.subnet_seeds.clear();
  for (std::size_t i = 0; i < config.dpcn.n_subnets; ++i) config.dpcn.subnet_seeds.push_back(base + 1 + i);
  config.dpcn.discriminator_seed = base + 101;
  config.dpcn.extra_seed = base + 202;
  config.dpcn.data_seed = base + 303;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  ExperimentConfig cfg;
  std::map<std::string, std::size_t> lines;
  for (const auto& e : tokenize(text, source)) {
    const Key* key = find_key(e.key);
    if (key == nullptr) throw ConfigError(source, e.line, e.key, "unknown key");
    try {
      key->set(cfg, e.value);
    } catch (const std::invalid_argument& err) {
      throw ConfigError(source, e.line, e.key, err.what());
    }
    lines[e.key] = e.line;
  }
  apply_seed(cfg, cfg.seed);
  try {
    cfg.dpcn.validate();
  } catch (const std::invalid_argument& err) {
    // validate() names the field as "config field '<name>': ...".
    const std::string msg = err.what();
    const auto open = msg.find('\''), close = msg.find('\'', open + 1);
    const std::string field = open == std::string::npos ? std::string() : msg.substr(open + 1, close - open - 1);
    const auto it = lines.find(field);
    throw ConfigError(source, it == lines.end() ? 0 : it->second, field, msg.substr(close + 3));
  }
  const auto& d = cfg.dataset;
  auto data_error = [&](const std::string& field, const std::string& what) {
    const auto it = lines.find(field);
    throw ConfigError(source, it == lines.end() ? 0 : it->second, field, what);
  };
  if (d.kind == "synthetic") {
    if (d.classes < 2 || d.classes > 8) data_error("classes", "synthetic data supports 2 to 8 classes");
    if (d.image_size < 8) data_error("image_size", "must be at least 8");
    if (d.train_per_class == 0) data_error("train_per_class", "must be positive");
    if (d.test_per_class == 0) data_error("test_per_class", "must be positive");
  } else {
    if (d.train_path.empty()) data_error("train_path", "required for CIFAR data");
    if (d.test_path.empty()) data_error("test_path", "required for CIFAR data");
  }
  if (cfg.seeds.empty()) data_error("seeds", "needs at least one seed");
  cfg.text = std::string(text);
  cfg.digest = config_digest(text, source);
  return cfg;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError(path, 0, "", "cannot open config file");
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str(), path);
}

std::string config_schema() {
  std::string out;
  for (const auto& k : keys()) out += std::string(k.name) + " = " + k.fallback + "\n";
  return out;
}

}  // namespace dpcn::cli
