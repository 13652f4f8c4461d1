#include "octoforce/ops.hpp"

#include <algorithm>
#include <cmath>

#include "graph_util.hpp"
#include "octoforce/errors.hpp"

namespace octoforce {

using detail::grad_sink;
using detail::make_result;
using detail::needs_grad;
using detail::Node;

namespace {

void require_same_shape(const Shape& a, const Shape& b, const char* op) {
  if (a != b) throw ShapeError(std::string(op) + ": shape mismatch " + a.str() + " vs " + b.str());
}

template <typename T>
void require_defined(const Tensor<T>& t, const char* op) {
  if (!t.defined()) throw ShapeError(std::string(op) + ": undefined input");
}

}  // namespace

template <typename T>
Tensor<T> batch_norm(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta, BatchNormState<T>& state,
                     Mode mode, const BatchNormOptions& options) {
  require_defined(input, "batch_norm");
  if (input.shape().rank() < 2) throw ShapeError("batch_norm: input needs a channel axis, got " + input.shape().str());
  const auto channels = static_cast<std::size_t>(input.shape().channels());
  if (gamma.numel() != static_cast<std::int64_t>(channels) || beta.numel() != static_cast<std::int64_t>(channels)) {
    throw ShapeError("batch_norm: gamma/beta must have " + std::to_string(channels) + " elements");
  }
  if (state.running_mean.size() != channels || state.running_var.size() != channels) {
    throw ShapeError("batch_norm: running statistics sized for a different channel count");
  }
  const auto x = input.data();
  const auto g = gamma.data();
  const auto b = beta.data();
  const std::size_t rows = x.size() / channels;
  if (rows == 0) throw ShapeError("batch_norm: empty input");

  std::vector<double> mean(channels, 0.0);
  std::vector<double> var(channels, 0.0);
  if (mode == Mode::train) {
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = x.data() + r * channels;
      for (std::size_t c = 0; c < channels; ++c) mean[c] += row[c];
    }
    for (auto& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      const T* row = x.data() + r * channels;
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = row[c] - mean[c];
        var[c] += d * d;
      }
    }
    for (auto& v : var) v /= static_cast<double>(rows);
    for (std::size_t c = 0; c < channels; ++c) {
      state.running_mean[c] =
          static_cast<T>(options.momentum * state.running_mean[c] + (1.0 - options.momentum) * mean[c]);
      state.running_var[c] =
          static_cast<T>(options.momentum * state.running_var[c] + (1.0 - options.momentum) * var[c]);
    }
  } else {
    for (std::size_t c = 0; c < channels; ++c) {
      mean[c] = state.running_mean[c];
      var[c] = state.running_var[c];
    }
  }

  std::vector<T> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) inv_std[c] = static_cast<T>(1.0 / std::sqrt(var[c] + options.eps));

  const bool track = needs_grad<T>({&input, &gamma, &beta});
  std::vector<T> xhat(x.size());
  std::vector<T> out(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t base = r * channels;
    for (std::size_t c = 0; c < channels; ++c) {
      const T xh = static_cast<T>((x[base + c] - mean[c]) * inv_std[c]);
      xhat[base + c] = xh;
      out[base + c] = g[c] * xh + b[c];
    }
  }
  if (!track) return make_result<T>(input.shape(), std::move(out), false);

  auto in_node = input.node();
  auto g_node = gamma.node();
  auto b_node = beta.node();
  const bool batch_stats = mode == Mode::train;
  return make_result<T>(
      input.shape(), std::move(out), true, {&input, &gamma, &beta},
      [in_node, g_node, b_node, xhat = std::move(xhat), inv_std = std::move(inv_std), channels, rows,
       batch_stats](Node<T>& self) {
        const T* dy = self.grad.data();
        std::vector<double> sum_dy(channels, 0.0);
        std::vector<double> sum_dy_xhat(channels, 0.0);
        for (std::size_t r = 0; r < rows; ++r) {
          const std::size_t base = r * channels;
          for (std::size_t c = 0; c < channels; ++c) {
            sum_dy[c] += dy[base + c];
            sum_dy_xhat[c] += dy[base + c] * xhat[base + c];
          }
        }
        if (T* dg = grad_sink(g_node)) {
          for (std::size_t c = 0; c < channels; ++c) dg[c] += static_cast<T>(sum_dy_xhat[c]);
        }
        if (T* db = grad_sink(b_node)) {
          for (std::size_t c = 0; c < channels; ++c) db[c] += static_cast<T>(sum_dy[c]);
        }
        if (T* dx = grad_sink(in_node)) {
          const auto& gv = g_node->value;
          const double m = static_cast<double>(rows);
          for (std::size_t r = 0; r < rows; ++r) {
            const std::size_t base = r * channels;
            for (std::size_t c = 0; c < channels; ++c) {
              const double scale = static_cast<double>(gv[c]) * inv_std[c];
              if (batch_stats) {
                dx[base + c] += static_cast<T>(
                    scale * (dy[base + c] - sum_dy[c] / m - xhat[base + c] * sum_dy_xhat[c] / m));
              } else {
                dx[base + c] += static_cast<T>(scale * dy[base + c]);
              }
            }
          }
        }
      });
}

template <typename T>
Tensor<T> relu(const Tensor<T>& input) {
  require_defined(input, "relu");
  const auto x = input.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] < T(0) ? T(0) : x[i];  // NaN passes through
  const bool track = needs_grad<T>({&input});
  if (!track) return make_result<T>(input.shape(), std::move(out), false);
  auto in_node = input.node();
  return make_result<T>(input.shape(), std::move(out), true, {&input}, [in_node](Node<T>& self) {
    if (T* dx = grad_sink(in_node)) {
      const auto& x = in_node->value;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (x[i] > T(0)) dx[i] += self.grad[i];
      }
    }
  });
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  require_defined(input, "global_avg_pool");
  const auto& s = input.shape();
  if (s.rank() < 3) throw ShapeError("global_avg_pool: expected [N, spatial..., F], got " + s.str());
  const std::int64_t n = s[0];
  const std::int64_t channels = s.channels();
  const std::int64_t positions = s.numel() / (n * channels);
  const auto x = input.data();
  std::vector<T> out(static_cast<std::size_t>(n * channels));
  for (std::int64_t b = 0; b < n; ++b) {
    std::vector<double> acc(channels, 0.0);
    for (std::int64_t p = 0; p < positions; ++p) {
      const T* row = x.data() + (b * positions + p) * channels;
      for (std::int64_t c = 0; c < channels; ++c) acc[c] += row[c];
    }
    for (std::int64_t c = 0; c < channels; ++c) out[b * channels + c] = static_cast<T>(acc[c] / positions);
  }
  const bool track = needs_grad<T>({&input});
  Shape out_shape{n, channels};
  if (!track) return make_result<T>(out_shape, std::move(out), false);
  auto in_node = input.node();
  return make_result<T>(out_shape, std::move(out), true, {&input}, [in_node, n, channels, positions](Node<T>& self) {
    if (T* dx = grad_sink(in_node)) {
      const T inv = T(1) / static_cast<T>(positions);
      for (std::int64_t b = 0; b < n; ++b) {
        const T* dy = self.grad.data() + b * channels;
        for (std::int64_t p = 0; p < positions; ++p) {
          T* row = dx + (b * positions + p) * channels;
          for (std::int64_t c = 0; c < channels; ++c) row[c] += dy[c] * inv;
        }
      }
    }
  });
}

template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  require_defined(input, "dense");
  require_defined(weight, "dense");
  const auto& s = input.shape();
  const auto& ws = weight.shape();
  if (s.rank() != 2 || ws.rank() != 2 || s[1] != ws[0]) {
    throw ShapeError("dense: incompatible input " + s.str() + " and weight " + ws.str());
  }
  const std::int64_t n = s[0], fin = s[1], fout = ws[1];
  if (bias.defined() && bias.numel() != fout) throw ShapeError("dense: bias must have " + std::to_string(fout) + " elements");
  const auto x = input.data();
  const auto w = weight.data();
  std::vector<T> out(static_cast<std::size_t>(n * fout), T(0));
  for (std::int64_t b = 0; b < n; ++b) {
    T* y = out.data() + b * fout;
    if (bias.defined()) {
      for (std::int64_t o = 0; o < fout; ++o) y[o] = bias.data()[o];
    }
    for (std::int64_t i = 0; i < fin; ++i) {
      const T xi = x[b * fin + i];
      const T* wrow = w.data() + i * fout;
      for (std::int64_t o = 0; o < fout; ++o) y[o] += xi * wrow[o];
    }
  }
  const bool track = needs_grad<T>({&input, &weight, &bias});
  Shape out_shape{n, fout};
  if (!track) return make_result<T>(out_shape, std::move(out), false);
  auto in_node = input.node();
  auto w_node = weight.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(out_shape, std::move(out), true, {&input, &weight, &bias},
                        [in_node, w_node, b_node, n, fin, fout](Node<T>& self) {
                          const T* dy = self.grad.data();
                          if (T* dx = grad_sink(in_node)) {
                            for (std::int64_t b = 0; b < n; ++b) {
                              for (std::int64_t i = 0; i < fin; ++i) {
                                const T* wrow = w_node->value.data() + i * fout;
                                T acc = 0;
                                for (std::int64_t o = 0; o < fout; ++o) acc += dy[b * fout + o] * wrow[o];
                                dx[b * fin + i] += acc;
                              }
                            }
                          }
                          if (T* dw = grad_sink(w_node)) {
                            for (std::int64_t b = 0; b < n; ++b) {
                              for (std::int64_t i = 0; i < fin; ++i) {
                                const T xi = in_node->value[b * fin + i];
                                for (std::int64_t o = 0; o < fout; ++o) dw[i * fout + o] += xi * dy[b * fout + o];
                              }
                            }
                          }
                          if (T* db = grad_sink(b_node)) {
                            for (std::int64_t b = 0; b < n; ++b) {
                              for (std::int64_t o = 0; o < fout; ++o) db[o] += dy[b * fout + o];
                            }
                          }
                        });
}

template <typename T>
Tensor<T> concat_channels(const Tensor<T>& t1, const Tensor<T>& t2) {
  require_defined(t1, "concat_channels");
  require_defined(t2, "concat_channels");
  const auto& s1 = t1.shape();
  const auto& s2 = t2.shape();
  bool compatible = s1.rank() == s2.rank() && s1.rank() >= 2;
  for (std::size_t a = 0; compatible && a + 1 < s1.rank(); ++a) compatible = s1[a] == s2[a];
  if (!compatible) throw ShapeError("concat_channels: leading extents differ, " + s1.str() + " vs " + s2.str());
  const std::int64_t c1 = s1.channels(), c2 = s2.channels(), c = c1 + c2;
  const std::int64_t rows = s1.numel() / c1;
  auto dims = s1.dims();
  dims.back() = c;
  std::vector<T> out(static_cast<std::size_t>(rows * c));
  const auto x1 = t1.data();
  const auto x2 = t2.data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy_n(x1.data() + r * c1, c1, out.data() + r * c);
    std::copy_n(x2.data() + r * c2, c2, out.data() + r * c + c1);
  }
  const bool track = needs_grad<T>({&t1, &t2});
  if (!track) return make_result<T>(Shape(dims), std::move(out), false);
  auto n1 = t1.node();
  auto n2 = t2.node();
  return make_result<T>(Shape(dims), std::move(out), true, {&t1, &t2}, [n1, n2, rows, c1, c2, c](Node<T>& self) {
    T* d1 = grad_sink(n1);
    T* d2 = grad_sink(n2);
    for (std::int64_t r = 0; r < rows; ++r) {
      const T* dy = self.grad.data() + r * c;
      if (d1) {
        for (std::int64_t k = 0; k < c1; ++k) d1[r * c1 + k] += dy[k];
      }
      if (d2) {
        for (std::int64_t k = 0; k < c2; ++k) d2[r * c2 + k] += dy[c1 + k];
      }
    }
  });
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, std::int64_t begin, std::int64_t end) {
  require_defined(input, "slice_channels");
  const auto& s = input.shape();
  const std::int64_t c = s.channels();
  if (begin < 0 || end > c || begin >= end) {
    throw ShapeError("slice_channels: range [" + std::to_string(begin) + ", " + std::to_string(end) +
                     ") outside " + std::to_string(c) + " channels");
  }
  const std::int64_t w = end - begin;
  const std::int64_t rows = s.numel() / c;
  auto dims = s.dims();
  dims.back() = w;
  std::vector<T> out(static_cast<std::size_t>(rows * w));
  const auto x = input.data();
  for (std::int64_t r = 0; r < rows; ++r) std::copy_n(x.data() + r * c + begin, w, out.data() + r * w);
  const bool track = needs_grad<T>({&input});
  if (!track) return make_result<T>(Shape(dims), std::move(out), false);
  auto in_node = input.node();
  return make_result<T>(Shape(dims), std::move(out), true, {&input}, [in_node, rows, c, w, begin](Node<T>& self) {
    if (T* dx = grad_sink(in_node)) {
      for (std::int64_t r = 0; r < rows; ++r) {
        for (std::int64_t k = 0; k < w; ++k) dx[r * c + begin + k] += self.grad[r * w + k];
      }
    }
  });
}

template <typename T>
Tensor<T> concat_batch(const Tensor<T>& t1, const Tensor<T>& t2) {
  require_defined(t1, "concat_batch");
  require_defined(t2, "concat_batch");
  const auto& s1 = t1.shape();
  const auto& s2 = t2.shape();
  bool compatible = s1.rank() == s2.rank() && s1.rank() >= 1;
  for (std::size_t a = 1; compatible && a < s1.rank(); ++a) compatible = s1[a] == s2[a];
  if (!compatible) throw ShapeError("concat_batch: trailing extents differ, " + s1.str() + " vs " + s2.str());
  auto dims = s1.dims();
  dims[0] += s2[0];
  const auto x1 = t1.data();
  const auto x2 = t2.data();
  std::vector<T> out(x1.begin(), x1.end());
  out.insert(out.end(), x2.begin(), x2.end());
  const bool track = needs_grad<T>({&t1, &t2});
  if (!track) return make_result<T>(Shape(dims), std::move(out), false);
  auto n1 = t1.node();
  auto n2 = t2.node();
  const std::size_t k1 = x1.size();
  return make_result<T>(Shape(dims), std::move(out), true, {&t1, &t2}, [n1, n2, k1](Node<T>& self) {
    if (T* d1 = grad_sink(n1)) {
      for (std::size_t i = 0; i < k1; ++i) d1[i] += self.grad[i];
    }
    if (T* d2 = grad_sink(n2)) {
      for (std::size_t i = k1; i < self.grad.size(); ++i) d2[i - k1] += self.grad[i];
    }
  });
}

template <typename T>
Tensor<T> slice_batch(const Tensor<T>& input, std::int64_t begin, std::int64_t end) {
  require_defined(input, "slice_batch");
  const auto& s = input.shape();
  if (s.rank() < 1 || begin < 0 || end > s[0] || begin >= end) {
    throw ShapeError("slice_batch: range [" + std::to_string(begin) + ", " + std::to_string(end) + ") outside " +
                     s.str());
  }
  const std::int64_t item = s.numel() / s[0];
  auto dims = s.dims();
  dims[0] = end - begin;
  const auto x = input.data();
  std::vector<T> out(x.begin() + begin * item, x.begin() + end * item);
  const bool track = needs_grad<T>({&input});
  if (!track) return make_result<T>(Shape(dims), std::move(out), false);
  auto in_node = input.node();
  const std::int64_t offset = begin * item;
  return make_result<T>(Shape(dims), std::move(out), true, {&input}, [in_node, offset](Node<T>& self) {
    if (T* dx = grad_sink(in_node)) {
      for (std::size_t i = 0; i < self.grad.size(); ++i) dx[offset + static_cast<std::int64_t>(i)] += self.grad[i];
    }
  });
}

namespace {

// Elementwise a (op) b with gradient factors da = a_factor(a, b), db = b_factor(a, b).
template <typename T, typename Fwd, typename DA, typename DB>
Tensor<T> binary(const Tensor<T>& a, const Tensor<T>& b, const char* name, Fwd fwd, DA da, DB db) {
  require_defined(a, name);
  require_defined(b, name);
  require_same_shape(a.shape(), b.shape(), name);
  const auto x = a.data();
  const auto y = b.data();
  std::vector<T> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = fwd(x[i], y[i]);
  const bool track = needs_grad<T>({&a, &b});
  if (!track) return make_result<T>(a.shape(), std::move(out), false);
  auto na = a.node();
  auto nb = b.node();
  return make_result<T>(a.shape(), std::move(out), true, {&a, &b}, [na, nb, da, db](Node<T>& self) {
    const auto& xa = na->value;
    const auto& xb = nb->value;
    if (T* ga = grad_sink(na)) {
      for (std::size_t i = 0; i < xa.size(); ++i) ga[i] += self.grad[i] * da(xa[i], xb[i]);
    }
    if (T* gb = grad_sink(nb)) {
      for (std::size_t i = 0; i < xb.size(); ++i) gb[i] += self.grad[i] * db(xa[i], xb[i]);
    }
  });
}

}  // namespace

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "add", [](T x, T y) { return x + y; }, [](T, T) { return T(1); }, [](T, T) { return T(1); });
}

template <typename T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "sub", [](T x, T y) { return x - y; }, [](T, T) { return T(1); }, [](T, T) { return T(-1); });
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  return binary(
      a, b, "mul", [](T x, T y) { return x * y; }, [](T, T y) { return y; }, [](T x, T) { return x; });
}

template <typename T>
Tensor<T> sum(const Tensor<T>& input) {
  require_defined(input, "sum");
  double acc = 0.0;
  for (T v : input.data()) acc += v;
  const bool track = needs_grad<T>({&input});
  std::vector<T> out{static_cast<T>(acc)};
  if (!track) return make_result<T>(Shape{}, std::move(out), false);
  auto in_node = input.node();
  return make_result<T>(Shape{}, std::move(out), true, {&input}, [in_node](Node<T>& self) {
    if (T* dx = grad_sink(in_node)) {
      const T g = self.grad[0];
      for (std::size_t i = 0; i < in_node->value.size(); ++i) dx[i] += g;
    }
  });
}

template <typename T>
Tensor<T> mse_loss(const Tensor<T>& pred, const Tensor<T>& target) {
  require_defined(pred, "mse_loss");
  require_defined(target, "mse_loss");
  require_same_shape(pred.shape(), target.shape(), "mse_loss");
  if (pred.shape().rank() != 2) throw ShapeError("mse_loss: expected [N_B, d], got " + pred.shape().str());
  const auto p = pred.data();
  const auto t = target.data();
  const double count = static_cast<double>(p.size());
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double e = static_cast<double>(t[i]) - p[i];
    acc += e * e;
  }
  const bool track = needs_grad<T>({&pred, &target});
  std::vector<T> out{static_cast<T>(acc / count)};
  if (!track) return make_result<T>(Shape{}, std::move(out), false);
  auto pn = pred.node();
  auto tn = target.node();
  return make_result<T>(Shape{}, std::move(out), true, {&pred, &target}, [pn, tn, count](Node<T>& self) {
    const double g = self.grad[0] * 2.0 / count;
    T* dp = grad_sink(pn);
    T* dt = grad_sink(tn);
    for (std::size_t i = 0; i < pn->value.size(); ++i) {
      const double diff = static_cast<double>(pn->value[i]) - tn->value[i];
      if (dp) dp[i] += static_cast<T>(g * diff);
      if (dt) dt[i] -= static_cast<T>(g * diff);
    }
  });
}

#define OCTOFORCE_INSTANTIATE_OPS(T)                                                                         \
  template Tensor<T> batch_norm<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, BatchNormState<T>&, \
                                   Mode, const BatchNormOptions&);                                           \
  template Tensor<T> relu<T>(const Tensor<T>&);                                                              \
  template Tensor<T> global_avg_pool<T>(const Tensor<T>&);                                                   \
  template Tensor<T> dense<T>(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&);                         \
  template Tensor<T> concat_channels<T>(const Tensor<T>&, const Tensor<T>&);                                 \
  template Tensor<T> slice_channels<T>(const Tensor<T>&, std::int64_t, std::int64_t);                        \
  template Tensor<T> concat_batch<T>(const Tensor<T>&, const Tensor<T>&);                                    \
  template Tensor<T> slice_batch<T>(const Tensor<T>&, std::int64_t, std::int64_t);                           \
  template Tensor<T> add<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sub<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> mul<T>(const Tensor<T>&, const Tensor<T>&);                                             \
  template Tensor<T> sum<T>(const Tensor<T>&);                                                               \
  template Tensor<T> mse_loss<T>(const Tensor<T>&, const Tensor<T>&);

OCTOFORCE_INSTANTIATE_OPS(float)
OCTOFORCE_INSTANTIATE_OPS(double)

}  // namespace octoforce
