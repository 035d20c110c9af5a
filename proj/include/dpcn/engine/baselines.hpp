#pragma once

#include <functional>
#include <vector>

#include "dpcn/data/dataset.hpp"
#include "dpcn/engine/trainer.hpp"

namespace dpcn::engine {

/// Epochs a single-network baseline gets so that its update count matches a
/// D-PCN run: e1 + e2 + e3.
std::size_t equal_budget_epochs(const DpcnConfig& config);

/// Trains one backbone (same recipe, optimiser, schedule, batch size and
/// augmentation as the D-PCN subnetworks) with cross entropy alone.
/// `width_multiplier` overrides the config width.
models::Network<float> train_single(const DpcnConfig& config, std::uint64_t seed, double width_multiplier,
                                    std::size_t epochs, const data::ImageDataset& train,
                                    const data::ImageDataset* eval = nullptr,
                                    const std::function<void(const EpochMetrics&)>& sink = {});

/// Elementwise mean of equally shaped probability arrays.
std::vector<double> average_probabilities(const std::vector<std::vector<float>>& members);

/// Accuracy of averaged softmax outputs.
double ensemble_accuracy(const std::vector<models::Network<float>*>& nets, const data::ImageDataset& ds,
                         std::size_t batch = 256);

struct ProbeOptions {
  std::size_t epochs = 1;
  double learning_rate = 0.05;
  std::size_t batch = 32;
  std::uint64_t seed = 7;
};

struct ProbeResult {
  double heldout_accuracy = 0.0;
  double fit_accuracy = 0.0;
};

/// Per-image feature vectors, one row each.
using FeatureRows = std::vector<std::vector<double>>;

/// Channel means of the tap activation of `net` (eval mode) for every image.
FeatureRows pooled_tap_features(models::Network<float>& net, const data::ImageDataset& ds);

/// Logistic-regression source probe on precomputed rows: fits on
/// (fit_a -> 0, fit_b -> 1) after standardising with the fit rows' joint
/// statistics, scores on the held-out rows.
ProbeResult source_probe(const FeatureRows& fit_a, const FeatureRows& fit_b, const FeatureRows& held_a,
                         const FeatureRows& held_b, const ProbeOptions& options = {});

/// Source-attribution probe. Tap activations of both (frozen, eval-mode)
/// networks are average-pooled per channel, standardised with statistics
/// of the fit split, and a logistic regression learns to tell which network
/// produced each vector. The fixed, small fitting budget makes the score
/// track how far apart the two feature distributions are rather than
/// saturating on any separable pair.
ProbeResult divergence_probe(models::Network<float>& a, models::Network<float>& b, const data::ImageDataset& fit,
                             const data::ImageDataset& heldout, const ProbeOptions& options = {});

}  // namespace dpcn::engine
