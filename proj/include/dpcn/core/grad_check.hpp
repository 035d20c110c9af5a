#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "dpcn/core/tensor.hpp"

namespace dpcn {

/// Largest per-element |analytic - numeric| / max(1, |numeric|) between the
/// backward gradient of `fn` at `input` and central differences
/// (fn(x + h e) - fn(x - h e)) / 2h. `fn` must return a single element and
/// be deterministic. Throws on non-finite outputs.
template <typename T>
double finite_difference_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, const Tensor<T>& input, T h);

/// Same check for a closure over several parameter tensors. Only the flat
/// (tensor, element) coordinates listed in `coords` are perturbed; an
/// empty list means every element of every parameter.
struct ParamCoord {
  std::size_t tensor;
  std::size_t element;
};

template <typename T>
double finite_difference_check(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params, T h,
                               const std::vector<ParamCoord>& coords = {});

}  // namespace dpcn
