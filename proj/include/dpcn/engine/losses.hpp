#pragma once

#include <vector>

#include "dpcn/core/tensor.hpp"
#include "dpcn/engine/config.hpp"

namespace dpcn::engine {

/// Discriminator target for subnetwork k: (1, 0) for two subnetworks,
/// (1, 0, 0.5) for three, otherwise `explicit_targets[k]` (required).
double subnet_target(std::size_t k, std::size_t n_subnets, const std::vector<double>& explicit_targets = {});

/// Per-subnetwork losses of one minibatch.
///   l_total[i] = l_cls[i] + lambda * l_disc_side[i]   (when has_disc_term[i])
///   l_D        = sum over subnetworks with a term of l_disc_side[i]
/// `l_disc_side` holds the unweighted term (1/n) sum (target_i - D(E_i))^2.
template <typename T>
struct LossBundle {
  std::vector<Tensor<T>> l_cls;
  std::vector<Tensor<T>> l_disc_side;
  std::vector<Tensor<T>> l_total;
  std::vector<bool> has_disc_term;
  Tensor<T> l_D;
};

/// Step 1: subnetwork 0 trains on cross entropy alone, every other
/// subnetwork carries its Step-2 discriminator term. `d_scores[0]` is not
/// read and may be undefined. Rejects any phase other than kStep1.
template <typename T>
LossBundle<T> step1_losses(Phase phase, const std::vector<Tensor<T>>& logits, const std::vector<std::size_t>& labels,
                           const std::vector<Tensor<T>>& d_scores, T lambda,
                           const std::vector<double>& explicit_targets = {});

/// Step 2: every subnetwork carries its term. Rejects any phase other than
/// kStep2.
template <typename T>
LossBundle<T> step2_losses(Phase phase, const std::vector<Tensor<T>>& logits, const std::vector<std::size_t>& labels,
                           const std::vector<Tensor<T>>& d_scores, T lambda,
                           const std::vector<double>& explicit_targets = {});

/// Channel concatenation (subnetwork order) or elementwise sum. Only
/// allowed in kStep3 and kInference.
template <typename T>
Tensor<T> fuse(Phase phase, const std::vector<Tensor<T>>& features, Fusion mode);

}  // namespace dpcn::engine
