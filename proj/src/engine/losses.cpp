#include "dpcn/engine/losses.hpp"

#include <stdexcept>

#include "dpcn/core/ops.hpp"
#include "dpcn/nn/functional.hpp"

namespace dpcn::engine {

double subnet_target(std::size_t k, std::size_t n_subnets, const std::vector<double>& explicit_targets) {
  if (k >= n_subnets) throw std::out_of_range("subnet_target: index out of range");
  if (!explicit_targets.empty()) {
    if (explicit_targets.size() != n_subnets) throw std::invalid_argument("subnet_target: one target per subnetwork");
    return explicit_targets[k];
  }
  if (n_subnets == 2) return k == 0 ? 1.0 : 0.0;
  if (n_subnets == 3) {
    static constexpr double kThree[3] = {1.0, 0.0, 0.5};
    return kThree[k];
  }
  throw std::invalid_argument("subnet_target: " + std::to_string(n_subnets) +
                              " subnetworks need explicit discriminator targets");
}

namespace {

template <typename T>
LossBundle<T> build_bundle(const std::vector<Tensor<T>>& logits, const std::vector<std::size_t>& labels,
                           const std::vector<Tensor<T>>& d_scores, T lambda, const std::vector<double>& targets,
                           std::size_t first_with_term) {
  const std::size_t n = logits.size();
  if (n < 2) throw std::invalid_argument("losses: need at least two subnetworks");
  if (d_scores.size() != n) throw std::invalid_argument("losses: one discriminator score tensor per subnetwork");
  LossBundle<T> out;
  for (std::size_t i = 0; i < n; ++i) {
    Tensor<T> ce = nn::softmax_cross_entropy(logits[i], labels);
    out.l_cls.push_back(ce);
    const bool term = i >= first_with_term;
    out.has_disc_term.push_back(term);
    if (!term) {
      out.l_disc_side.emplace_back();
      out.l_total.push_back(ce);
      continue;
    }
    if (!d_scores[i].defined()) throw std::invalid_argument("losses: missing discriminator scores for subnetwork " +
                                                            std::to_string(i));
    Tensor<T> side = nn::disc_l2_loss(d_scores[i], static_cast<T>(subnet_target(i, n, targets)));
    out.l_disc_side.push_back(side);
    out.l_total.push_back(add(ce, scale(side, lambda)));
    out.l_D = out.l_D.defined() ? add(out.l_D, side) : side;
  }
  return out;
}

}  // namespace

template <typename T>
LossBundle<T> step1_losses(Phase phase, const std::vector<Tensor<T>>& logits, const std::vector<std::size_t>& labels,
                           const std::vector<Tensor<T>>& d_scores, T lambda,
                           const std::vector<double>& explicit_targets) {
  if (phase != Phase::kStep1) throw std::logic_error("step1_losses called in phase " + to_string(phase));
  return build_bundle(logits, labels, d_scores, lambda, explicit_targets, 1);
}

template <typename T>
LossBundle<T> step2_losses(Phase phase, const std::vector<Tensor<T>>& logits, const std::vector<std::size_t>& labels,
                           const std::vector<Tensor<T>>& d_scores, T lambda,
                           const std::vector<double>& explicit_targets) {
  if (phase != Phase::kStep2) throw std::logic_error("step2_losses called in phase " + to_string(phase));
  return build_bundle(logits, labels, d_scores, lambda, explicit_targets, 0);
}

template <typename T>
Tensor<T> fuse(Phase phase, const std::vector<Tensor<T>>& features, Fusion mode) {
  if (phase != Phase::kStep3 && phase != Phase::kInference) {
    throw std::logic_error("fuse called in phase " + to_string(phase));
  }
  if (features.empty()) throw std::invalid_argument("fuse: no features");
  return mode == Fusion::kConcat ? nn::concat_channels(features) : nn::sum_features(features);
}

#define DPCN_INSTANTIATE(T)                                                                                        \
  template LossBundle<T> step1_losses(Phase, const std::vector<Tensor<T>>&, const std::vector<std::size_t>&,       \
                                      const std::vector<Tensor<T>>&, T, const std::vector<double>&);               \
  template LossBundle<T> step2_losses(Phase, const std::vector<Tensor<T>>&, const std::vector<std::size_t>&,       \
                                      const std::vector<Tensor<T>>&, T, const std::vector<double>&);               \
  template Tensor<T> fuse(Phase, const std::vector<Tensor<T>>&, Fusion);

DPCN_INSTANTIATE(float)
DPCN_INSTANTIATE(double)
#undef DPCN_INSTANTIATE

}  // namespace dpcn::engine
