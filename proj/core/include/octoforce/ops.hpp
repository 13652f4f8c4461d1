#pragma once

#include <cstdint>
#include <vector>

#include "octoforce/tensor.hpp"

namespace octoforce {

enum class Mode { train, infer };

// Convolutions use zero padding with "SAME" extents, out = ceil(in / stride),
// and cross-correlation semantics (no kernel flip).
//   conv3d: input [N, W, H, D, Cin], kernel [k, k, k, Cin, Cout] -> [N, W', H', D', Cout]
//   conv2d: input [N, W, H, Cin],    kernel [k, k, Cin, Cout]    -> [N, W', H', Cout]
// k must be 1 or 3 and stride 1 or 2. The bias, when defined, has shape [Cout].
template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {}, int stride = 1);
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias = {}, int stride = 1);

template <typename T>
struct BatchNormState {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  BatchNormState() = default;
  explicit BatchNormState(std::size_t channels) : running_mean(channels, T(0)), running_var(channels, T(1)) {}
};

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.99;  // running = momentum * running + (1 - momentum) * batch (population variance)
};

// Normalizes over every axis but the last (channel) axis. Train mode uses the
// batch statistics and folds them into `state`; infer mode reads `state` only.
template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     Mode mode, const BatchNormOptions& options = {});

template <typename T>
Tensor<T> relu(const Tensor<T>& input);

// [N, spatial..., F] -> [N, F]
template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

// [N, Fin] x [Fin, Fout] + bias[Fout]
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias = {});

// t1 || t2 along the channel axis; t1's channels come first.
template <typename T>
Tensor<T> concat_channels(const Tensor<T>& t1, const Tensor<T>& t2);

// Channels [begin, end) of the last axis.
template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::int64_t begin, std::int64_t end);

// t1 then t2 along the leading (batch) axis.
template <typename T>
Tensor<T> concat_batch(const Tensor<T>& t1, const Tensor<T>& t2);

// Items [begin, end) of the leading axis.
template <typename T>
Tensor<T> slice_batch(const Tensor<T>& input, std::int64_t begin, std::int64_t end);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b);
template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> sum(const Tensor<T>& input);

// (1/d) sum_i (1/N_B) sum_j (y_i^j - yhat_i^j)^2 for pred, target of shape [N_B, d].
template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target);

}  // namespace octoforce
