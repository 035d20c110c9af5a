#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "dpcn/core/optim.hpp"
#include "dpcn/data/dataset.hpp"

namespace dpcn::engine {

enum class Fusion { kConcat, kSum };
enum class Phase { kStep1, kStep2, kStep3, kInference };

std::string to_string(Phase phase);
std::string to_string(Fusion fusion);

struct DpcnConfig {
  double lambda = 1.0;
  std::size_t n_subnets = 2;
  Fusion fusion = Fusion::kConcat;
  std::string tap_point = "block3";
  std::array<std::size_t, 3> phase_epochs{5, 10, 5};
  SgdOptions optimizer{};
  std::vector<double> lr_milestones{0.5, 0.75};
  double lr_decay = 0.1;
  std::size_t batch_size = 128;
  std::vector<std::uint64_t> subnet_seeds{1, 2};
  std::uint64_t discriminator_seed = 101;
  std::uint64_t extra_seed = 202;
  std::uint64_t data_seed = 303;
  /// Per-subnetwork discriminator targets; empty means the built-in
  /// (1, 0) / (1, 0, 0.5). Required when n_subnets > 3.
  std::vector<double> targets;

  std::string backbone = "nin";  // nin | resnet
  double width_multiplier = 0.25;
  std::size_t resnet_blocks = 1;
  std::vector<std::size_t> discriminator_channels{64, 128, 256};
  double discriminator_slope = 0.2;

  data::AugmentOptions augment{};
  /// Epochs between held-out accuracy measurements; 0 measures only at the
  /// end of each phase.
  std::size_t eval_interval = 1;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

/// Which parameter groups a phase may update.
struct PhaseState {
  Phase phase = Phase::kStep1;
  std::vector<bool> extractor_trainable;
  std::vector<bool> classifier_trainable;
  bool discriminator_trainable = false;
  bool extra_trainable = false;
  bool extra_present = false;

  static PhaseState make(Phase phase, std::size_t n_subnets);
};

}  // namespace dpcn::engine
