#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "octoforce/tensor.hpp"

namespace octoforce {

struct AdamOptions {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// First/second moment estimates per parameter, in parameter order.
template <typename T>
struct AdamState {
  std::vector<std::vector<T>> m;
  std::vector<std::vector<T>> v;
  std::int64_t step = 0;
};

// One bias-corrected Adam update using each parameter's accumulated grad;
// parameters without a grad are treated as having a zero gradient.
template <typename T>
void adam_step(std::span<Tensor<T>> params, AdamState<T>& state, const AdamOptions& options);

}  // namespace octoforce
