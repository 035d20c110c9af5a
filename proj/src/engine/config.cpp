#include "dpcn/engine/config.hpp"

#include <cmath>
#include <stdexcept>

namespace dpcn::engine {

std::string to_string(Phase phase) {
  switch (phase) {
    case Phase::kStep1: return "step1";
    case Phase::kStep2: return "step2";
    case Phase::kStep3: return "step3";
    case Phase::kInference: return "inference";
  }
  return "unknown";
}

std::string to_string(Fusion fusion) { return fusion == Fusion::kConcat ? "concat" : "sum"; }

void DpcnConfig::validate() const {
  auto fail = [](const std::string& field, const std::string& why) {
    throw std::invalid_argument("config field '" + field + "': " + why);
  };
  if (!std::isfinite(lambda) || lambda < 0.0) fail("lambda", "must be a finite value >= 0");
  if (n_subnets < 2) fail("n_subnets", "at least two subnetworks are required");
  if (n_subnets > 3 && targets.size() != n_subnets) {
    fail("targets", "more than three subnetworks need an explicit list of " + std::to_string(n_subnets) + " targets");
  }
  if (!targets.empty() && targets.size() != n_subnets) fail("targets", "needs one entry per subnetwork");
  if (subnet_seeds.size() != n_subnets) fail("subnet_seeds", "needs one entry per subnetwork");
  if (batch_size < 2) fail("batch_size", "must be at least 2");
  if (!(optimizer.learning_rate >= 0.0)) fail("learning_rate", "must be >= 0");
  if (!(optimizer.momentum >= 0.0 && optimizer.momentum < 1.0)) fail("momentum", "must lie in [0, 1)");
  if (!(optimizer.weight_decay >= 0.0)) fail("weight_decay", "must be >= 0");
  for (double m : lr_milestones) {
    if (!(m > 0.0 && m < 1.0)) fail("lr_milestones", "fractions must lie in (0, 1)");
  }
  if (!(lr_decay > 0.0 && lr_decay <= 1.0)) fail("lr_decay", "must lie in (0, 1]");
  if (backbone != "nin" && backbone != "resnet") fail("backbone", "expected 'nin' or 'resnet'");
  if (!(width_multiplier > 0.0)) fail("width_multiplier", "must be positive");
  if (resnet_blocks < 1) fail("resnet_blocks", "must be at least 1");
  if (discriminator_channels.empty()) fail("discriminator_channels", "needs at least one stage");
  if (!(discriminator_slope >= 0.0 && discriminator_slope < 1.0)) fail("discriminator_slope", "must lie in [0, 1)");
}

PhaseState PhaseState::make(Phase phase, std::size_t n_subnets) {
  PhaseState s;
  s.phase = phase;
  const bool subnets = phase == Phase::kStep1 || phase == Phase::kStep2;
  s.extractor_trainable.assign(n_subnets, subnets);
  s.classifier_trainable.assign(n_subnets, subnets);
  s.discriminator_trainable = phase == Phase::kStep2;
  s.extra_trainable = phase == Phase::kStep3;
  s.extra_present = phase == Phase::kStep3 || phase == Phase::kInference;
  return s;
}

}  // namespace dpcn::engine
