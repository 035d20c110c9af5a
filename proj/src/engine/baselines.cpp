#include "dpcn/engine/baselines.hpp"

#include <chrono>
#include <cmath>
#include <numeric>

#include "dpcn/core/optim.hpp"
#include "dpcn/nn/functional.hpp"

namespace dpcn::engine {

std::size_t equal_budget_epochs(const DpcnConfig& config) {
  return config.phase_epochs[0] + config.phase_epochs[1] + config.phase_epochs[2];
}

models::Network<float> train_single(const DpcnConfig& config, std::uint64_t seed, double width_multiplier,
                                    std::size_t epochs, const data::ImageDataset& train,
                                    const data::ImageDataset* eval,
                                    const std::function<void(const EpochMetrics&)>& sink) {
  DpcnConfig cfg = config;
  cfg.width_multiplier = width_multiplier;
  auto net = build_backbone<float>(cfg, train.class_count, seed, train.channels);
  std::vector<Tensor<float>> params;
  for (const auto& p : net.parameters()) params.push_back(p.tensor);
  Sgd<float> opt(params, cfg.optimizer);
  std::mt19937_64 rng(cfg.data_seed);

  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    net.set_training(true);
    opt.set_learning_rate(
        step_decay_lr(cfg.optimizer.learning_rate, epoch, epochs, cfg.lr_milestones, cfg.lr_decay));
    EpochMetrics m;
    m.epoch = epoch;
    m.learning_rate = opt.learning_rate();
    m.ce.assign(1, 0.0);
    const auto order = data::epoch_order(train.size(), rng);
    std::size_t batches = 0;
    for (std::size_t begin = 0; begin + 2 <= order.size(); begin += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), begin + cfg.batch_size);
      const std::span<const std::size_t> idx(order.data() + begin, end - begin);
      const Tensor<float> x = data::make_batch(train, idx, cfg.augment, &rng);
      const Tensor<float> ce = nn::softmax_cross_entropy(net.forward(x), data::batch_labels(train, idx));
      if (!std::isfinite(ce.item())) {
        throw TrainingDiverged("non-finite loss in single-network training epoch " + std::to_string(epoch),
                               "{\"event\":\"non_finite_loss\",\"epoch\":" + std::to_string(epoch) + "}");
      }
      opt.zero_grad();
      ce.backward();
      opt.step();
      m.ce[0] += ce.item();
      ++batches;
    }
    m.ce[0] /= static_cast<double>(std::max<std::size_t>(batches, 1));
    if (eval != nullptr && epoch + 1 == epochs) m.subnet_accuracy.push_back(network_accuracy(net, *eval));
    m.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    if (sink) sink(m);
  }
  net.set_training(false);
  return net;
}

std::vector<double> average_probabilities(const std::vector<std::vector<float>>& members) {
  if (members.empty()) throw std::invalid_argument("average_probabilities: no members");
  std::vector<double> avg(members.front().size(), 0.0);
  for (const auto& m : members) {
    if (m.size() != avg.size()) throw std::invalid_argument("average_probabilities: member sizes differ");
    for (std::size_t i = 0; i < avg.size(); ++i) avg[i] += m[i];
  }
  for (auto& v : avg) v /= static_cast<double>(members.size());
  return avg;
}

double ensemble_accuracy(const std::vector<models::Network<float>*>& nets, const data::ImageDataset& ds,
                         std::size_t batch) {
  if (nets.empty()) throw std::invalid_argument("ensemble_accuracy: no members");
  if (ds.size() == 0) throw std::invalid_argument("ensemble_accuracy: empty dataset");
  const std::size_t classes = nets.front()->num_classes();
  std::size_t correct = 0;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += batch) {
    const std::size_t end = std::min(ds.size(), begin + batch);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<float> x = data::make_batch(ds, idx, {}, nullptr);
    std::vector<std::vector<float>> members;
    for (auto* net : nets) members.push_back(network_proba(*net, x));
    const auto avg = average_probabilities(members);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      const auto row = avg.begin() + static_cast<std::ptrdiff_t>(i * classes);
      const auto best = static_cast<std::size_t>(std::max_element(row, row + static_cast<std::ptrdiff_t>(classes)) - row);
      if (best == ds.labels[idx[i]]) ++correct;
    }
  }
  return static_cast<double>(correct) / static_cast<double>(ds.size());
}

namespace {

struct Labelled {
  FeatureRows x;
  std::vector<int> y;
};

Labelled label_rows(const FeatureRows& a, const FeatureRows& b) {
  Labelled out;
  out.x = a;
  out.y.assign(a.size(), 0);
  out.x.insert(out.x.end(), b.begin(), b.end());
  out.y.resize(out.x.size(), 1);
  return out;
}

double logistic(double z) { return 1.0 / (1.0 + std::exp(-z)); }

double score(const Labelled& d, const std::vector<double>& w, double bias) {
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.x.size(); ++i) {
    const double z = std::inner_product(w.begin(), w.end(), d.x[i].begin(), bias);
    if ((z > 0.0) == (d.y[i] == 1)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(d.x.size());
}

}  // namespace

FeatureRows pooled_tap_features(models::Network<float>& net, const data::ImageDataset& ds) {
  NoGradGuard no_grad;
  net.set_training(false);
  FeatureRows rows;
  std::vector<std::size_t> idx;
  for (std::size_t begin = 0; begin < ds.size(); begin += 256) {
    const std::size_t end = std::min(ds.size(), begin + 256);
    idx.resize(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<float> pooled = nn::global_avg_pool(net.extract(data::make_batch(ds, idx, {}, nullptr)).tap);
    const std::size_t c = pooled.dim(1);
    for (std::size_t i = 0; i < idx.size(); ++i) {
      rows.emplace_back(pooled.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                        pooled.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
    }
  }
  return rows;
}

ProbeResult divergence_probe(models::Network<float>& a, models::Network<float>& b, const data::ImageDataset& fit,
                             const data::ImageDataset& heldout, const ProbeOptions& options) {
  return source_probe(pooled_tap_features(a, fit), pooled_tap_features(b, fit), pooled_tap_features(a, heldout),
                      pooled_tap_features(b, heldout), options);
}

ProbeResult source_probe(const FeatureRows& fit_a, const FeatureRows& fit_b, const FeatureRows& held_a,
                         const FeatureRows& held_b, const ProbeOptions& options) {
  Labelled train = label_rows(fit_a, fit_b);
  Labelled test = label_rows(held_a, held_b);
  if (fit_a.empty() || fit_b.empty() || held_a.empty() || held_b.empty()) {
    throw std::invalid_argument("source_probe: every split needs rows from both sources");
  }
  const std::size_t dims = train.x.front().size();
  for (const auto* d : {&train, &test}) {
    for (const auto& row : d->x) {
      if (row.size() != dims) throw std::invalid_argument("source_probe: feature widths differ");
    }
  }

  std::vector<double> mean(dims, 0.0), sd(dims, 0.0);
  for (const auto& row : train.x) {
    for (std::size_t j = 0; j < dims; ++j) mean[j] += row[j];
  }
  for (auto& m : mean) m /= static_cast<double>(train.x.size());
  for (const auto& row : train.x) {
    for (std::size_t j = 0; j < dims; ++j) sd[j] += (row[j] - mean[j]) * (row[j] - mean[j]);
  }
  for (auto& s : sd) s = std::sqrt(s / static_cast<double>(train.x.size())) + 1e-8;
  for (auto* d : {&train, &test}) {
    for (auto& row : d->x) {
      for (std::size_t j = 0; j < dims; ++j) row[j] = (row[j] - mean[j]) / sd[j];
    }
  }

  std::vector<double> w(dims, 0.0);
  double bias = 0.0;
  std::mt19937_64 rng(options.seed);
  std::vector<double> gw(dims);
  for (std::size_t epoch = 0; epoch < options.epochs; ++epoch) {
    const auto order = data::epoch_order(train.x.size(), rng);
    for (std::size_t begin = 0; begin < order.size(); begin += options.batch) {
      const std::size_t end = std::min(order.size(), begin + options.batch);
      std::fill(gw.begin(), gw.end(), 0.0);
      double gb = 0.0;
      for (std::size_t k = begin; k < end; ++k) {
        const auto& row = train.x[order[k]];
        const double err = logistic(std::inner_product(w.begin(), w.end(), row.begin(), bias)) - train.y[order[k]];
        for (std::size_t j = 0; j < dims; ++j) gw[j] += err * row[j];
        gb += err;
      }
      const double step = options.learning_rate / static_cast<double>(end - begin);
      for (std::size_t j = 0; j < dims; ++j) w[j] -= step * gw[j];
      bias -= step * gb;
    }
  }
  return {score(test, w, bias), score(train, w, bias)};
}

}  // namespace dpcn::engine
