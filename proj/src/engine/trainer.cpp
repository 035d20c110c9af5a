#include "dpcn/engine/trainer.hpp"

#include <chrono>
#include <cmath>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "dpcn/core/ops.hpp"
#include "dpcn/nn/functional.hpp"

namespace dpcn::engine {

namespace {

using Clock = std::chrono::steady_clock;
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

nlohmann::json number_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

nlohmann::json array_or_null(const std::vector<double>& values) {
  nlohmann::json out = nlohmann::json::array();
  for (double v : values) out.push_back(number_or_null(v));
  return out;
}

double schedule(const DpcnConfig& cfg, std::size_t epoch, std::size_t total) {
  return step_decay_lr(cfg.optimizer.learning_rate, epoch, total, cfg.lr_milestones, cfg.lr_decay);
}

std::vector<Tensor<float>> tensors_of(const std::vector<models::NamedTensor<float>>& params) {
  std::vector<Tensor<float>> out;
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

LossBundle<float> cross_entropy_only(const std::vector<Tensor<float>>& logits, const std::vector<std::size_t>& labels) {
  LossBundle<float> out;
  for (const auto& l : logits) {
    out.l_cls.push_back(nn::softmax_cross_entropy(l, labels));
    out.l_total.push_back(out.l_cls.back());
    out.l_disc_side.emplace_back();
    out.has_disc_term.push_back(false);
  }
  return out;
}

Tensor<float> sum_all(const std::vector<Tensor<float>>& parts) {
  Tensor<float> total = parts.front();
  for (std::size_t i = 1; i < parts.size(); ++i) total = add(total, parts[i]);
  return total;
}

bool finite(const Tensor<float>& t) { return !t.defined() || std::isfinite(t.item()); }

std::string velocity_key(const std::string& param) { return "velocity." + param; }

}  // namespace

std::string to_json_line(const EpochMetrics& m, const std::string& config_digest, long long seed) {
  nlohmann::json j;
  j["phase"] = to_string(m.phase);
  j["epoch"] = m.epoch;
  j["lr"] = m.learning_rate;
  j["ce"] = array_or_null(m.ce);
  j["disc_term"] = array_or_null(m.disc_term);
  j["l_d"] = number_or_null(m.l_d);
  j["extra_ce"] = number_or_null(m.extra_ce);
  j["subnet_accuracy"] = array_or_null(m.subnet_accuracy);
  j["extra_accuracy"] = number_or_null(m.extra_accuracy);
  j["seconds"] = m.seconds;
  if (!config_digest.empty()) j["config_digest"] = config_digest;
  if (seed >= 0) j["seed"] = seed;
  return j.dump();
}

Trainer::Trainer(DpcnConfig config, const data::ImageDataset& train)
    : config_(std::move(config)), train_(train), data_rng_(config_.data_seed) {
  config_.validate();
  if (train_.size() < 2) throw std::invalid_argument("Trainer: training set needs at least two images");
  if (train_.height != train_.width) throw std::invalid_argument("Trainer: images must be square");
  model_ = build_model<float>(config_, train_.class_count, train_.channels, train_.height);
  for (std::size_t i = 0; i < config_.n_subnets; ++i) subnet_opt_.emplace_back(model_.subnet_parameters(i), config_.optimizer);
  disc_opt_ = Sgd<float>(tensors_of(model_.disc.parameters()), config_.optimizer);
  extra_opt_ = Sgd<float>(tensors_of(model_.extra.parameters()), config_.optimizer);
  set_trainable(model_.disc.parameters(), false);
  set_trainable(model_.extra.parameters(), false);
}

PhaseState Trainer::phase_state() const {
  static constexpr Phase kNext[4] = {Phase::kStep1, Phase::kStep2, Phase::kStep3, Phase::kInference};
  return PhaseState::make(kNext[completed_], config_.n_subnets);
}

std::vector<std::vector<std::size_t>> Trainer::minibatches() {
  const auto order = data::epoch_order(train_.size(), data_rng_);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t begin = 0; begin < order.size(); begin += config_.batch_size) {
    const std::size_t end = std::min(order.size(), begin + config_.batch_size);
    if (end - begin < 2) break;  // batch norm needs two samples
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(begin), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void Trainer::set_subnet_lr(std::size_t global_epoch) {
  const double lr = schedule(config_, global_epoch, config_.phase_epochs[0] + config_.phase_epochs[1]);
  for (auto& opt : subnet_opt_) opt.set_learning_rate(lr);
}

void Trainer::emit(EpochMetrics& m, std::size_t phase_epochs) {
  const bool last = m.epoch + 1 == phase_epochs;
  const bool due = config_.eval_interval > 0 && (m.epoch + 1) % config_.eval_interval == 0;
  if (eval_ != nullptr && (last || due)) {
    if (m.phase == Phase::kStep3) {
      m.extra_accuracy = accuracy(*eval_);
      model_.extra.set_training(true);
    } else {
      for (std::size_t k = 0; k < model_.nets.size(); ++k) {
        m.subnet_accuracy.push_back(subnet_accuracy(k, *eval_));
        model_.nets[k].set_training(true);
      }
    }
  }
  if (sink_) sink_(m);
}

void Trainer::diverged(const EpochMetrics& m, std::size_t batch, const std::vector<double>& values) const {
  nlohmann::json j;
  j["event"] = "non_finite_loss";
  j["phase"] = to_string(m.phase);
  j["epoch"] = m.epoch;
  j["batch"] = batch;
  j["losses"] = array_or_null(values);
  j["lambda"] = config_.lambda;
  throw TrainingDiverged("non-finite loss in " + to_string(m.phase) + " epoch " + std::to_string(m.epoch) +
                             " batch " + std::to_string(batch),
                         j.dump());
}

void Trainer::run_phase1() {
  if (completed_ != 0) throw std::logic_error("run_phase1: phase 1 already completed");
  const std::size_t n = config_.n_subnets;
  const float lambda = static_cast<float>(config_.lambda);
  for (auto& net : model_.nets) net.set_training(true);
  model_.disc.set_training(false);
  set_trainable(model_.disc.parameters(), false);
  if (config_.phase_epochs[0] == 0) std::clog << "warning: epochs_step1 = 0, skipping the asymmetric warm-up\n";

  for (std::size_t epoch = 0; epoch < config_.phase_epochs[0]; ++epoch) {
    const auto start = Clock::now();
    set_subnet_lr(epoch);
    EpochMetrics m;
    m.phase = Phase::kStep1;
    m.epoch = epoch;
    m.learning_rate = subnet_opt_.front().learning_rate();
    m.ce.assign(n, 0.0);
    m.disc_term.assign(n, lambda > 0 ? 0.0 : kNaN);
    m.disc_term[0] = kNaN;
    const auto batches = minibatches();
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor<float> x = data::make_batch(train_, batches[b], config_.augment, &data_rng_);
      const auto labels = data::batch_labels(train_, batches[b]);
      const auto f = forward_subnets(model_, x);
      const LossBundle<float> loss =
          lambda > 0 ? step1_losses(Phase::kStep1, f.logits, labels, score_taps(model_, f, 1), lambda, config_.targets)
                     : cross_entropy_only(f.logits, labels);
      std::vector<double> values;
      for (const auto& t : loss.l_total) values.push_back(t.item());
      for (double v : values) {
        if (!std::isfinite(v)) diverged(m, b, values);
      }
      for (auto& opt : subnet_opt_) opt.zero_grad();
      sum_all(loss.l_total).backward();
      for (auto& opt : subnet_opt_) opt.step();
      for (std::size_t i = 0; i < n; ++i) {
        m.ce[i] += loss.l_cls[i].item() / static_cast<double>(batches.size());
        if (loss.has_disc_term[i]) m.disc_term[i] += loss.l_disc_side[i].item() / static_cast<double>(batches.size());
      }
    }
    m.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    emit(m, config_.phase_epochs[0]);
  }
  completed_ = 1;
}

void Trainer::run_phase2() {
  if (completed_ != 1) throw std::logic_error("run_phase2: requires exactly phase 1 completed");
  const std::size_t n = config_.n_subnets;
  const float lambda = static_cast<float>(config_.lambda);
  for (auto& net : model_.nets) net.set_training(true);

  for (std::size_t epoch = 0; epoch < config_.phase_epochs[1]; ++epoch) {
    const auto start = Clock::now();
    set_subnet_lr(config_.phase_epochs[0] + epoch);
    disc_opt_.set_learning_rate(schedule(config_, epoch, config_.phase_epochs[1]));
    EpochMetrics m;
    m.phase = Phase::kStep2;
    m.epoch = epoch;
    m.learning_rate = subnet_opt_.front().learning_rate();
    m.ce.assign(n, 0.0);
    m.disc_term.assign(n, lambda > 0 ? 0.0 : kNaN);
    if (lambda > 0) m.l_d = 0.0;
    const auto batches = minibatches();
    const double per_batch = 1.0 / static_cast<double>(batches.size());
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Tensor<float> x = data::make_batch(train_, batches[b], config_.augment, &data_rng_);
      const auto labels = data::batch_labels(train_, batches[b]);
      const auto f = forward_subnets(model_, x);
      LossBundle<float> loss;
      if (lambda > 0) {
        // (a) discriminator on detached taps, batch statistics.
        model_.disc.set_training(true);
        set_trainable(model_.disc.parameters(), true);
        const auto fit = step2_losses(Phase::kStep2, f.logits, labels, score_taps_joint(model_, f, true), lambda,
                                      config_.targets);
        if (!finite(fit.l_D)) diverged(m, b, {fit.l_D.item()});
        disc_opt_.zero_grad();
        fit.l_D.backward();
        disc_opt_.step();
        m.l_d += fit.l_D.item() * per_batch;
        // (b) subnetworks against the updated discriminator as a fixed function.
        model_.disc.set_training(false);
        set_trainable(model_.disc.parameters(), false);
        loss = step2_losses(Phase::kStep2, f.logits, labels, score_taps(model_, f, 0), lambda, config_.targets);
      } else {
        loss = cross_entropy_only(f.logits, labels);
      }
      std::vector<double> values;
      for (const auto& t : loss.l_total) values.push_back(t.item());
      for (double v : values) {
        if (!std::isfinite(v)) diverged(m, b, values);
      }
      for (auto& opt : subnet_opt_) opt.zero_grad();
      sum_all(loss.l_total).backward();
      for (auto& opt : subnet_opt_) opt.step();
      for (std::size_t i = 0; i < n; ++i) {
        m.ce[i] += loss.l_cls[i].item() * per_batch;
        if (loss.has_disc_term[i]) m.disc_term[i] += loss.l_disc_side[i].item() * per_batch;
      }
    }
    m.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    emit(m, config_.phase_epochs[1]);
  }
  model_.disc.set_training(false);
  completed_ = 2;
}

Tensor<float> Trainer::fused_features(const Tensor<float>& x, Phase phase) {
  std::vector<Tensor<float>> features;
  for (auto& net : model_.nets) features.push_back(net.extract(x).features);
  return fuse(phase, features, config_.fusion);
}

void Trainer::run_phase3() {
  if (completed_ != 2) throw std::logic_error("run_phase3: requires phases 1 and 2 completed");
  for (std::size_t i = 0; i < model_.nets.size(); ++i) {
    model_.nets[i].set_training(false);
    set_trainable(model_.nets[i].parameters(), false);
  }
  model_.extra.set_training(true);
  set_trainable(model_.extra.parameters(), true);

  // Frozen eval-mode extractors are a fixed per-image function, so without
  // augmentation the fused features are computed once.
  std::vector<float> cache;
  Shape row_shape;
  if (!config_.augment.enabled) {
    NoGradGuard no_grad;
    std::vector<std::size_t> all(train_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    for (std::size_t begin = 0; begin < all.size(); begin += 256) {
      const std::size_t end = std::min(all.size(), begin + 256);
      const std::span<const std::size_t> idx(all.data() + begin, end - begin);
      const Tensor<float> fused = fused_features(data::make_batch(train_, idx, {}, nullptr), Phase::kStep3);
      if (row_shape.empty()) row_shape.assign(fused.shape().begin() + 1, fused.shape().end());
      cache.insert(cache.end(), fused.data().begin(), fused.data().end());
    }
  }
  const std::size_t row = numel(row_shape);

  for (std::size_t epoch = 0; epoch < config_.phase_epochs[2]; ++epoch) {
    const auto start = Clock::now();
    extra_opt_.set_learning_rate(schedule(config_, epoch, config_.phase_epochs[2]));
    EpochMetrics m;
    m.phase = Phase::kStep3;
    m.epoch = epoch;
    m.learning_rate = extra_opt_.learning_rate();
    m.extra_ce = 0.0;
    const auto batches = minibatches();
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const auto& idx = batches[b];
      Tensor<float> fused;
      if (!cache.empty()) {
        std::vector<float> values(idx.size() * row);
        for (std::size_t i = 0; i < idx.size(); ++i) {
          std::copy_n(cache.begin() + static_cast<std::ptrdiff_t>(idx[i] * row), row,
                      values.begin() + static_cast<std::ptrdiff_t>(i * row));
        }
        Shape shape{idx.size()};
        shape.insert(shape.end(), row_shape.begin(), row_shape.end());
        fused = Tensor<float>(shape, std::move(values));
      } else {
        NoGradGuard no_grad;
        fused = fused_features(data::make_batch(train_, idx, config_.augment, &data_rng_), Phase::kStep3);
      }
      const Tensor<float> ce = nn::softmax_cross_entropy(model_.extra.forward(fused), data::batch_labels(train_, idx));
      if (!finite(ce)) diverged(m, b, {ce.item()});
      extra_opt_.zero_grad();
      ce.backward();
      extra_opt_.step();
      m.extra_ce += ce.item() / static_cast<double>(batches.size());
    }
    m.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    emit(m, config_.phase_epochs[2]);
  }
  model_.extra.set_training(false);
  set_trainable(model_.extra.parameters(), false);
  completed_ = 3;
}

void Trainer::run(int last_phase) {
  if (completed_ < 1 && last_phase >= 1) run_phase1();
  if (completed_ < 2 && last_phase >= 2) run_phase2();
  if (completed_ < 3 && last_phase >= 3) run_phase3();
}

std::vector<float> Trainer::predict_proba(const Tensor<float>& x) {
  NoGradGuard no_grad;
  for (auto& net : model_.nets) net.set_training(false);
  model_.extra.set_training(false);
  return nn::softmax_rows(model_.extra.forward(fused_features(x, Phase::kInference)));
}

namespace {

template <typename Fn>
double batched_accuracy(const data::ImageDataset& ds, std::size_t batch, std::size_t classes, Fn proba) {
  if (ds.size() == 0) throw std::invalid_argument("accuracy: empty dataset");
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch) {
    const std::size_t end = std::min(ds.size(), begin + batch);
    idx.resize(end - begin);
    for (std::size_t i = begin; i < end; ++i) idx[i - begin] = i;
    const std::vector<float> p = proba(data::make_batch(ds, idx, {}, nullptr));
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = p.begin() + static_cast<std::ptrdiff_t>(i * classes);
      const auto best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(classes)) - row);
      if (best == ds.labels[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

}  // namespace

double Trainer::accuracy(const data::ImageDataset& ds, std::size_t batch) {
  return batched_accuracy(ds, batch, model_.num_classes, [&](const Tensor<float>& x) { return predict_proba(x); });
}

double Trainer::subnet_accuracy(std::size_t k, const data::ImageDataset& ds, std::size_t batch) {
  return network_accuracy(model_.nets.at(k), ds, batch);
}

std::vector<float> network_proba(models::Network<float>& net, const Tensor<float>& x) {
  NoGradGuard no_grad;
  net.set_training(false);
  return nn::softmax_rows(net.forward(x));
}

double network_accuracy(models::Network<float>& net, const data::ImageDataset& ds, std::size_t batch) {
  return batched_accuracy(ds, batch, net.num_classes(), [&](const Tensor<float>& x) { return network_proba(net, x); });
}

data::Checkpoint Trainer::checkpoint(const std::string& config_text, const std::string& config_digest) const {
  data::Checkpoint ckpt;
  ckpt.config_text = config_text;
  ckpt.config_digest = config_digest;
  ckpt.completed_phase = completed_;
  std::ostringstream rng;
  rng << data_rng_;
  ckpt.rng_states.emplace_back("data", rng.str());
  for (const auto& p : model_.parameters()) {
    ckpt.arrays.emplace_back(p.name, std::vector<float>(p.tensor.data().begin(), p.tensor.data().end()));
  }
  for (const auto& b : model_.buffers()) ckpt.arrays.emplace_back("buffer." + b.name, *b.values);

  auto save_velocities = [&](const Sgd<float>& opt, const std::vector<models::NamedTensor<float>>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) ckpt.arrays.emplace_back(velocity_key(names[i].name), opt.velocities()[i]);
  };
  for (std::size_t i = 0; i < subnet_opt_.size(); ++i) {
    auto names = model_.nets[i].parameters();
    for (auto& p : names) p.name = "subnet" + std::to_string(i) + "." + p.name;
    save_velocities(subnet_opt_[i], names);
  }
  save_velocities(disc_opt_, model_.disc.parameters());
  save_velocities(extra_opt_, model_.extra.parameters());
  return ckpt;
}

void Trainer::restore(const data::Checkpoint& ckpt, const std::string& expected_digest) {
  if (!expected_digest.empty() && !ckpt.config_digest.empty() && expected_digest != ckpt.config_digest) {
    throw std::runtime_error("checkpoint was written for config digest " + ckpt.config_digest +
                             ", current config digest is " + expected_digest);
  }
  if (ckpt.completed_phase < 0 || ckpt.completed_phase > 3) throw std::runtime_error("checkpoint phase out of range");
  auto load = [&](const std::string& name, std::span<float> dst) {
    const auto& src = ckpt.array(name);
    if (src.size() != dst.size()) {
      throw std::runtime_error("checkpoint array '" + name + "' has " + std::to_string(src.size()) +
                               " values, model expects " + std::to_string(dst.size()));
    }
    std::copy(src.begin(), src.end(), dst.begin());
  };
  for (const auto& p : model_.parameters()) {
    Tensor<float> t = p.tensor;
    load(p.name, t.data());
  }
  for (const auto& b : model_.buffers()) load("buffer." + b.name, *b.values);

  auto load_velocities = [&](Sgd<float>& opt, const std::vector<models::NamedTensor<float>>& names) {
    for (std::size_t i = 0; i < names.size(); ++i) load(velocity_key(names[i].name), opt.velocities()[i]);
  };
  for (std::size_t i = 0; i < subnet_opt_.size(); ++i) {
    auto names = model_.nets[i].parameters();
    for (auto& p : names) p.name = "subnet" + std::to_string(i) + "." + p.name;
    load_velocities(subnet_opt_[i], names);
  }
  load_velocities(disc_opt_, model_.disc.parameters());
  load_velocities(extra_opt_, model_.extra.parameters());

  std::istringstream rng(ckpt.rng_state("data"));
  rng >> data_rng_;
  if (!rng) throw std::runtime_error("checkpoint rng state 'data' is malformed");
  completed_ = ckpt.completed_phase;
}

}  // namespace dpcn::engine
