#pragma once

#include <cstdint>
#include <functional>
#include <limits>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dpcn/core/optim.hpp"
#include "dpcn/data/checkpoint.hpp"
#include "dpcn/data/dataset.hpp"
#include "dpcn/engine/model.hpp"

namespace dpcn::engine {

/// One record per training epoch. NaN marks a quantity that does not exist
/// in the phase (or was not measured).
struct EpochMetrics {
  Phase phase = Phase::kStep1;
  std::size_t epoch = 0;  // within the phase, from 0
  double learning_rate = 0.0;
  std::vector<double> ce;         // mean cross entropy per subnetwork
  std::vector<double> disc_term;  // mean unweighted discriminator term per subnetwork
  double l_d = std::numeric_limits<double>::quiet_NaN();
  double extra_ce = std::numeric_limits<double>::quiet_NaN();
  std::vector<double> subnet_accuracy;  // held-out, when measured
  double extra_accuracy = std::numeric_limits<double>::quiet_NaN();
  double seconds = 0.0;
};

/// One JSON object per line; NaN fields become null. Negative `seed` is
/// omitted.
std::string to_json_line(const EpochMetrics& m, const std::string& config_digest = {}, long long seed = -1);

/// Raised when a loss turns NaN or infinite. `diagnostic` is a JSON object
/// with the phase, epoch, batch and the offending values.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(const std::string& what, std::string diagnostic)
      : std::runtime_error(what), diagnostic_(std::move(diagnostic)) {}
  const std::string& diagnostic() const { return diagnostic_; }

 private:
  std::string diagnostic_;
};

/// Runs the three training phases on float models.
///
/// Step 1 and Step 2 update every subnetwork simultaneously from one
/// extractor pass per minibatch. In Step 2 each minibatch first fits the
/// discriminator on detached taps (train mode), then updates the
/// subnetworks against the discriminator as a fixed function (eval mode).
/// Step 3 freezes the extractors in eval mode and fits the extra classifier
/// on fused features. With lambda = 0 the discriminator has no effect on
/// any subnetwork and is not run.
class Trainer {
 public:
  Trainer(DpcnConfig config, const data::ImageDataset& train);

  void set_eval_set(const data::ImageDataset* eval) { eval_ = eval; }
  void set_metric_sink(std::function<void(const EpochMetrics&)> sink) { sink_ = std::move(sink); }

  void run_phase1();
  void run_phase2();
  void run_phase3();
  /// Runs every phase not yet completed, up to and including `last_phase`.
  void run(int last_phase = 3);
  int completed_phase() const { return completed_; }
  PhaseState phase_state() const;

  DpcnModel<float>& model() { return model_; }
  const DpcnConfig& config() const { return config_; }

  /// Inference path: frozen extractors, fusion, extra classifier. Returns
  /// row-major (N, classes) probabilities. Before Step 3 the extra
  /// classifier is still at its initialisation.
  std::vector<float> predict_proba(const Tensor<float>& x);
  double accuracy(const data::ImageDataset& ds, std::size_t batch = 256);
  double subnet_accuracy(std::size_t k, const data::ImageDataset& ds, std::size_t batch = 256);

  data::Checkpoint checkpoint(const std::string& config_text, const std::string& config_digest) const;
  /// Restores a phase-boundary checkpoint. Rejects a digest that differs
  /// from `expected_digest` (when both are non-empty) and any array whose
  /// size disagrees with the model.
  void restore(const data::Checkpoint& ckpt, const std::string& expected_digest);

 private:
  void emit(EpochMetrics& m, std::size_t phase_epochs);
  [[noreturn]] void diverged(const EpochMetrics& m, std::size_t batch, const std::vector<double>& values) const;
  std::vector<std::vector<std::size_t>> minibatches();
  void set_subnet_lr(std::size_t global_epoch);
  Tensor<float> fused_features(const Tensor<float>& x, Phase phase);

  DpcnConfig config_;
  const data::ImageDataset& train_;
  const data::ImageDataset* eval_ = nullptr;
  std::function<void(const EpochMetrics&)> sink_;
  DpcnModel<float> model_;
  std::vector<Sgd<float>> subnet_opt_;
  Sgd<float> disc_opt_;
  Sgd<float> extra_opt_;
  std::mt19937_64 data_rng_;
  int completed_ = 0;
};

/// Accuracy of a plain network (eval mode) on a dataset.
double network_accuracy(models::Network<float>& net, const data::ImageDataset& ds, std::size_t batch = 256);
/// Row-major (N, classes) softmax probabilities of a plain network.
std::vector<float> network_proba(models::Network<float>& net, const Tensor<float>& x);

}  // namespace dpcn::engine
