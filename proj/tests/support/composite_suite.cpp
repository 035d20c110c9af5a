#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>

#include "dpcn/core/ops.hpp"
#include "dpcn/engine/model.hpp"
#include "suites.hpp"

namespace dpcn::testing {

namespace {

using D = double;

engine::DpcnConfig tiny_config(std::uint64_t seed) {
  engine::DpcnConfig cfg;
  cfg.backbone = "nin";
  cfg.width_multiplier = 1.0 / 24.0;  // channel plan (4, 8, 8)
  cfg.discriminator_channels = {6, 8};
  cfg.subnet_seeds = {seed * 7 + 1, seed * 7 + 2};
  cfg.discriminator_seed = seed * 7 + 3;
  cfg.extra_seed = seed * 7 + 4;
  return cfg;
}

}  // namespace

std::vector<CheckResult> composite_gradient_suite(std::uint64_t seed, std::size_t trials,
                                                  std::size_t coords_per_trial) {
  constexpr std::size_t kClasses = 3, kChannels = 3, kImage = 12, kBatch = 2;
  CheckResult result;
  result.name = "step2_composite_loss";
  result.limit = kGradTolerance;
  std::mt19937_64 rng(seed);
  std::size_t skipped = 0, total_checked = 0;
  try {
    for (std::size_t t = 0; t < trials; ++t) {
      auto model = engine::build_model<D>(tiny_config(seed + t), kClasses, kChannels, kImage);
      for (auto& net : model.nets) {
        net.set_training(true);
        net.extractor().set_stats_frozen(true);
        net.classifier().set_stats_frozen(true);
      }
      model.disc.layers().set_stats_frozen(true);

      std::normal_distribution<double> normal(0.0, 1.0);
      std::vector<D> pixels(kBatch * kChannels * kImage * kImage);
      for (auto& p : pixels) p = normal(rng);
      const Tensor<D> x(Shape{kBatch, kChannels, kImage, kImage}, pixels);
      const std::vector<std::size_t> labels{t % kClasses, (t + 2) % kClasses};

      // Sum of every subnetwork loss (discriminator as a fixed eval-mode
      // function) plus the discriminator loss on the joint batch.
      auto loss = [&]() {
        const auto f = engine::forward_subnets(model, x);
        model.disc.set_training(true);
        const auto fit = engine::step2_losses<D>(engine::Phase::kStep2, f.logits, labels,
                                                 engine::score_taps_joint(model, f, false), 1.0);
        model.disc.set_training(false);
        const auto sub = engine::step2_losses<D>(engine::Phase::kStep2, f.logits, labels,
                                                 engine::score_taps(model, f), 1.0);
        Tensor<D> total = fit.l_D;
        for (const auto& l : sub.l_total) total = add(total, l);
        return total;
      };

      std::vector<Tensor<D>> params;
      for (std::size_t i = 0; i < model.nets.size(); ++i) {
        for (auto& p : model.nets[i].parameters()) params.push_back(p.tensor);
      }
      for (auto& p : model.disc.parameters()) params.push_back(p.tensor);
      for (auto& p : params) p.zero_grad();
      loss().backward();
      std::vector<std::size_t> offsets{0};
      for (const auto& p : params) offsets.push_back(offsets.back() + p.numel());
      std::uniform_int_distribution<std::size_t> flat(0, offsets.back() - 1);

      std::size_t checked = 0, draws = 0;
      while (checked < coords_per_trial) {
        if (++draws > coords_per_trial * 5) throw std::runtime_error("too many coordinates straddle a kink");
        const std::size_t k = flat(rng);
        const std::size_t ti =
            static_cast<std::size_t>(std::upper_bound(offsets.begin(), offsets.end(), k) - offsets.begin()) - 1;
        Tensor<D> p = params[ti];
        const std::size_t e = k - offsets[ti];
        const D saved = p.data()[e];
        const D analytic = p.grad().empty() ? 0.0 : p.grad()[e];
        const D f0 = loss().item();
        p.data()[e] = saved + kGradStep;
        const D fp = loss().item();
        p.data()[e] = saved - kGradStep;
        const D fm = loss().item();
        p.data()[e] = saved;
        const D numeric = (fp - fm) / (2 * kGradStep);
        const D scale = std::max<D>(1.0, std::abs(numeric));
        // A ReLU or max-pool switch inside [x - h, x + h] shows up as a
        // second difference of order h times the slope jump; such
        // coordinates are redrawn instead of compared.
        if (std::abs(fp - 2 * f0 + fm) / kGradStep > kGradTolerance * scale) {
          ++skipped;
          continue;
        }
        ++checked;
        result.value = std::max(result.value, std::abs(analytic - numeric) / scale);
      }
      ++result.trials;
      total_checked += checked;
    }
    result.detail = std::to_string(total_checked) + " coordinates compared, " + std::to_string(skipped) +
                    " redrawn at kinks";
    if (skipped * 5 > total_checked) {
      result.value = std::numeric_limits<double>::infinity();
      result.detail += " (more than 20% redrawn)";
    }
    result.passed = std::isfinite(result.value) && result.value < result.limit;
  } catch (const std::exception& e) {
    result.passed = false;
    result.detail = e.what();
  }
  return {result};
}

}  // namespace dpcn::testing
