#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "dpcn/data/dataset.hpp"
#include "dpcn/engine/config.hpp"

namespace dpcn::cli {

struct DatasetConfig {
  std::string kind = "synthetic";  // synthetic | cifar10 | cifar100
  std::size_t classes = 4;
  std::size_t train_per_class = 2000;
  std::size_t test_per_class = 500;
  std::size_t image_size = 32;
  std::uint64_t seed = 1000;
  data::SyntheticOptions synthetic{};
  std::string train_path;
  std::string test_path;
};

/// Everything one config file describes. `text` and `digest` identify it
/// in every output.
struct ExperimentConfig {
  engine::DpcnConfig dpcn;
  DatasetConfig dataset;
  std::string out_dir = "runs";
  std::uint64_t seed = 0;
  std::vector<std::uint64_t> seeds{0, 1, 2};
  bool baseline_single = true;
  bool baseline_ensemble = true;
  bool baseline_doubled = true;
  std::string text;
  std::string digest;
};

/// Malformed config: carries the 1-based line (0 when not tied to a line)
/// and the field name.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& source, std::size_t line, const std::string& field, const std::string& what);
  std::size_t line() const { return line_; }
  const std::string& field() const { return field_; }

 private:
  std::size_t line_;
  std::string field_;
};

/// Comment- and whitespace-free `key = value` lines sorted by key.
std::string canonical_config(std::string_view text, const std::string& source = "<config>");
/// SHA-256 of the canonical text.
std::string config_digest(std::string_view text, const std::string& source = "<config>");

ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::string& path);

/// Derives every model and data-order seed from one integer.
void apply_seed(ExperimentConfig& config, std::uint64_t seed);

/// The published schema: one line per key with its default.
std::string config_schema();

}  // namespace dpcn::cli
