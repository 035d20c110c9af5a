#include "dpcn/core/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace dpcn {

namespace {

template <typename T>
T evaluate(const std::function<Tensor<T>()>& loss_fn) {
  NoGradGuard guard;
  const T value = loss_fn().item();
  if (!std::isfinite(static_cast<double>(value))) throw std::domain_error("finite_difference_check: non-finite output");
  return value;
}

}  // namespace

template <typename T>
double finite_difference_check(const std::function<Tensor<T>()>& loss_fn, std::vector<Tensor<T>> params, T h,
                               const std::vector<ParamCoord>& coords) {
  if (!(h > T(0))) throw std::invalid_argument("finite_difference_check: step must be positive");
  for (auto& p : params) {
    p.set_requires_grad(true);
    p.zero_grad();
  }
  {
    Tensor<T> loss = loss_fn();
    if (!std::isfinite(static_cast<double>(loss.item()))) {
      throw std::domain_error("finite_difference_check: non-finite output");
    }
    loss.backward();
  }

  std::vector<ParamCoord> all = coords;
  if (all.empty()) {
    for (std::size_t t = 0; t < params.size(); ++t) {
      for (std::size_t e = 0; e < params[t].numel(); ++e) all.push_back({t, e});
    }
  }

  double worst = 0.0;
  for (const auto& c : all) {
    auto& p = params.at(c.tensor);
    auto values = p.data();
    const T original = values[c.element];
    values[c.element] = original + h;
    const T plus = evaluate(loss_fn);
    values[c.element] = original - h;
    const T minus = evaluate(loss_fn);
    values[c.element] = original;
    const double numeric = (static_cast<double>(plus) - static_cast<double>(minus)) / (2.0 * static_cast<double>(h));
    const double analytic = p.has_grad() ? static_cast<double>(p.grad()[c.element]) : 0.0;
    worst = std::max(worst, std::abs(analytic - numeric) / std::max(1.0, std::abs(numeric)));
  }
  return worst;
}

template <typename T>
double finite_difference_check(const std::function<Tensor<T>(const Tensor<T>&)>& fn, const Tensor<T>& input, T h) {
  Tensor<T> x = input.detach();
  return finite_difference_check<T>([&fn, &x]() { return fn(x); }, {x}, h);
}

template double finite_difference_check(const std::function<Tensor<float>()>&, std::vector<Tensor<float>>, float,
                                        const std::vector<ParamCoord>&);
template double finite_difference_check(const std::function<Tensor<double>()>&, std::vector<Tensor<double>>, double,
                                        const std::vector<ParamCoord>&);
template double finite_difference_check(const std::function<Tensor<float>(const Tensor<float>&)>&,
                                        const Tensor<float>&, float);
template double finite_difference_check(const std::function<Tensor<double>(const Tensor<double>&)>&,
                                        const Tensor<double>&, double);

}  // namespace dpcn
