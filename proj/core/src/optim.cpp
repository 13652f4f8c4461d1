#include "octoforce/optim.hpp"

#include <cmath>

#include "octoforce/errors.hpp"

namespace octoforce {

template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamOptions& options) {
  if (state.m.empty() && state.v.empty()) {
    for (const auto& p : params) {
      state.m.emplace_back(p.numel(), T(0));
      state.v.emplace_back(p.numel(), T(0));
    }
  }
  if (state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ShapeError("adam_step: optimizer state tracks " + std::to_string(state.m.size()) + " parameters, got " +
                     std::to_string(params.size()));
  }
  ++state.step;
  const double b1 = options.beta1;
  const double b2 = options.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& p = params[k];
    auto& m = state.m[k];
    auto& v = state.v[k];
    if (static_cast<std::int64_t>(m.size()) != p.numel()) throw ShapeError("adam_step: moment size mismatch");
    auto values = p.mutable_data();
    const bool has_grad = p.has_grad();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = has_grad ? static_cast<double>(grad[i]) : 0.0;
      const double mi = b1 * m[i] + (1.0 - b1) * g;
      const double vi = b2 * v[i] + (1.0 - b2) * g * g;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / c1;
      const double vhat = vi / c2;
      values[i] = static_cast<T>(values[i] - options.lr * mhat / (std::sqrt(vhat) + options.eps));
    }
  }
}

template void adam_step<float>(std::span<Tensor<float>>, AdamState<float>&, const AdamOptions&);
template void adam_step<double>(std::span<Tensor<double>>, AdamState<double>&, const AdamOptions&);

}  // namespace octoforce
