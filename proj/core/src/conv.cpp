#include <Eigen/Core>
#include <algorithm>
#include <array>

#include "graph_util.hpp"
#include "octoforce/errors.hpp"
#include "octoforce/ops.hpp"
#include "octoforce/parallel.hpp"

namespace octoforce {

using detail::grad_sink;
using detail::make_result;
using detail::needs_grad;
using detail::Node;

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Planar convolutions run through the same path with a unit third axis.
struct ConvGeometry {
  std::int64_t batch = 0;
  std::int64_t cin = 0;
  std::int64_t cout = 0;
  std::array<std::int64_t, 3> in{};
  std::array<std::int64_t, 3> out{};
  std::array<std::int64_t, 3> k{};
  std::array<std::int64_t, 3> stride{};
  std::array<std::int64_t, 3> pad{};  // leading zero padding per axis

  std::int64_t in_positions() const { return in[0] * in[1] * in[2]; }
  std::int64_t out_positions() const { return out[0] * out[1] * out[2]; }
  std::int64_t patch() const { return k[0] * k[1] * k[2] * cin; }
  bool pointwise() const {
    return k[0] == 1 && k[1] == 1 && k[2] == 1 && stride[0] == 1 && stride[1] == 1 && stride[2] == 1;
  }
};

ConvGeometry make_geometry(std::int64_t batch, std::array<std::int64_t, 3> in, std::int64_t cin,
                           std::array<std::int64_t, 3> k, std::int64_t cout, std::array<std::int64_t, 3> stride) {
  ConvGeometry g;
  g.batch = batch;
  g.cin = cin;
  g.cout = cout;
  g.in = in;
  g.k = k;
  g.stride = stride;
  for (int a = 0; a < 3; ++a) {
    g.out[a] = (in[a] + stride[a] - 1) / stride[a];
    const std::int64_t total = std::max<std::int64_t>((g.out[a] - 1) * stride[a] + k[a] - in[a], 0);
    g.pad[a] = total / 2;
  }
  return g;
}

std::int64_t tile_rows(const ConvGeometry& g) {
  constexpr std::int64_t kColBudget = 1 << 17;  // elements per im2col tile
  return std::clamp<std::int64_t>(kColBudget / std::max<std::int64_t>(g.patch(), 1), 16, g.out_positions());
}

// Gathers patches for output positions [p0, p0 + rows) of one sample into
// `col`, row-major [rows, k0*k1*k2*cin] in kernel order. The k2 taps of one
// (kx, ky) pair are contiguous in both buffers when fully inside the volume.
template <typename T>
void im2col(const ConvGeometry& g, const T* input, std::int64_t p0, std::int64_t rows, T* col) {
  const std::int64_t patch = g.patch();
  const std::int64_t run = g.k[2] * g.cin;
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t p = p0 + r;
    const std::int64_t oz = p % g.out[2];
    const std::int64_t oy = (p / g.out[2]) % g.out[1];
    const std::int64_t ox = p / (g.out[2] * g.out[1]);
    const std::int64_t iz0 = oz * g.stride[2] - g.pad[2];
    const bool z_inside = iz0 >= 0 && iz0 + g.k[2] <= g.in[2];
    T* dst = col + r * patch;
    for (std::int64_t kx = 0; kx < g.k[0]; ++kx) {
      const std::int64_t ix = ox * g.stride[0] - g.pad[0] + kx;
      for (std::int64_t ky = 0; ky < g.k[1]; ++ky, dst += run) {
        const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
        if (ix < 0 || ix >= g.in[0] || iy < 0 || iy >= g.in[1]) {
          std::fill_n(dst, run, T(0));
          continue;
        }
        const T* line = input + (ix * g.in[1] + iy) * g.in[2] * g.cin;
        if (z_inside) {
          std::copy_n(line + iz0 * g.cin, run, dst);
          continue;
        }
        for (std::int64_t kz = 0; kz < g.k[2]; ++kz) {
          const std::int64_t iz = iz0 + kz;
          if (iz < 0 || iz >= g.in[2]) {
            std::fill_n(dst + kz * g.cin, g.cin, T(0));
          } else {
            std::copy_n(line + iz * g.cin, g.cin, dst + kz * g.cin);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, std::int64_t p0, std::int64_t rows, T* dinput) {
  const std::int64_t patch = g.patch();
  const std::int64_t run = g.k[2] * g.cin;
  for (std::int64_t r = 0; r < rows; ++r) {
    const std::int64_t p = p0 + r;
    const std::int64_t oz = p % g.out[2];
    const std::int64_t oy = (p / g.out[2]) % g.out[1];
    const std::int64_t ox = p / (g.out[2] * g.out[1]);
    const std::int64_t iz0 = oz * g.stride[2] - g.pad[2];
    const bool z_inside = iz0 >= 0 && iz0 + g.k[2] <= g.in[2];
    const T* src = col + r * patch;
    for (std::int64_t kx = 0; kx < g.k[0]; ++kx) {
      const std::int64_t ix = ox * g.stride[0] - g.pad[0] + kx;
      for (std::int64_t ky = 0; ky < g.k[1]; ++ky, src += run) {
        const std::int64_t iy = oy * g.stride[1] - g.pad[1] + ky;
        if (ix < 0 || ix >= g.in[0] || iy < 0 || iy >= g.in[1]) continue;
        T* line = dinput + (ix * g.in[1] + iy) * g.in[2] * g.cin;
        if (z_inside) {
          T* dst = line + iz0 * g.cin;
          for (std::int64_t i = 0; i < run; ++i) dst[i] += src[i];
          continue;
        }
        for (std::int64_t kz = 0; kz < g.k[2]; ++kz) {
          const std::int64_t iz = iz0 + kz;
          if (iz < 0 || iz >= g.in[2]) continue;
          T* dst = line + iz * g.cin;
          for (std::int64_t c = 0; c < g.cin; ++c) dst[c] += src[kz * g.cin + c];
        }
      }
    }
  }
}

template <typename T>
std::vector<T> conv_forward(const ConvGeometry& g, const T* input, const T* kernel, const T* bias) {
  const std::int64_t out_pos = g.out_positions();
  std::vector<T> out(static_cast<std::size_t>(g.batch * out_pos * g.cout));
  Eigen::Map<const RowMat<T>> kmat(kernel, g.patch(), g.cout);

  if (g.pointwise()) {
    parallel_chunks(g.batch, [&](int, std::int64_t b0, std::int64_t b1) {
      const std::int64_t rows = (b1 - b0) * out_pos;
      Eigen::Map<const RowMat<T>> in(input + b0 * out_pos * g.cin, rows, g.cin);
      Eigen::Map<RowMat<T>> y(out.data() + b0 * out_pos * g.cout, rows, g.cout);
      y.noalias() = in * kmat;
    });
  } else {
    const std::int64_t tile = tile_rows(g);
    parallel_chunks(g.batch, [&](int, std::int64_t b0, std::int64_t b1) {
      std::vector<T> col(static_cast<std::size_t>(tile * g.patch()));
      for (std::int64_t b = b0; b < b1; ++b) {
        const T* in = input + b * g.in_positions() * g.cin;
        for (std::int64_t p0 = 0; p0 < out_pos; p0 += tile) {
          const std::int64_t rows = std::min(tile, out_pos - p0);
          im2col(g, in, p0, rows, col.data());
          Eigen::Map<const RowMat<T>> c(col.data(), rows, g.patch());
          Eigen::Map<RowMat<T>> y(out.data() + (b * out_pos + p0) * g.cout, rows, g.cout);
          y.noalias() = c * kmat;
        }
      }
    });
  }
  if (bias) {
    Eigen::Map<RowMat<T>> y(out.data(), g.batch * out_pos, g.cout);
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> brow(bias, g.cout);
    y.rowwise() += brow;
  }
  return out;
}

template <typename T>
void conv_backward(const ConvGeometry& g, const T* input, const T* kernel, const T* dout, T* dinput, T* dkernel,
                   T* dbias) {
  const std::int64_t out_pos = g.out_positions();
  const std::int64_t patch = g.patch();
  Eigen::Map<const RowMat<T>> kmat(kernel, patch, g.cout);

  if (dbias) {
    Eigen::Map<const RowMat<T>> dy(dout, g.batch * out_pos, g.cout);
    Eigen::Map<Eigen::Matrix<T, 1, Eigen::Dynamic>> db(dbias, g.cout);
    db += dy.colwise().sum();
  }
  if (!dinput && !dkernel) return;

  const int chunks = static_cast<int>(std::min<std::int64_t>(num_threads(), std::max<std::int64_t>(g.batch, 1)));
  std::vector<RowMat<T>> partial(dkernel ? chunks : 0, RowMat<T>::Zero(patch, g.cout));

  if (g.pointwise()) {
    parallel_chunks(g.batch, [&](int chunk, std::int64_t b0, std::int64_t b1) {
      const std::int64_t rows = (b1 - b0) * out_pos;
      Eigen::Map<const RowMat<T>> dy(dout + b0 * out_pos * g.cout, rows, g.cout);
      if (dinput) {
        Eigen::Map<RowMat<T>> dx(dinput + b0 * out_pos * g.cin, rows, g.cin);
        dx.noalias() += dy * kmat.transpose();
      }
      if (dkernel) {
        Eigen::Map<const RowMat<T>> x(input + b0 * out_pos * g.cin, rows, g.cin);
        partial[chunk].noalias() += x.transpose() * dy;
      }
    });
  } else {
    const std::int64_t tile = tile_rows(g);
    parallel_chunks(g.batch, [&](int chunk, std::int64_t b0, std::int64_t b1) {
      std::vector<T> col(static_cast<std::size_t>(tile * patch));
      for (std::int64_t b = b0; b < b1; ++b) {
        const T* in = input + b * g.in_positions() * g.cin;
        for (std::int64_t p0 = 0; p0 < out_pos; p0 += tile) {
          const std::int64_t rows = std::min(tile, out_pos - p0);
          Eigen::Map<const RowMat<T>> dy(dout + (b * out_pos + p0) * g.cout, rows, g.cout);
          Eigen::Map<RowMat<T>> c(col.data(), rows, patch);
          if (dkernel) {
            im2col(g, in, p0, rows, col.data());
            partial[chunk].noalias() += c.transpose() * dy;
          }
          if (dinput) {
            c.noalias() = dy * kmat.transpose();
            col2im_add(g, col.data(), p0, rows, dinput + b * g.in_positions() * g.cin);
          }
        }
      }
    });
  }
  if (dkernel) {
    Eigen::Map<RowMat<T>> dk(dkernel, patch, g.cout);
    for (const auto& p : partial) dk += p;
  }
}

template <typename T>
Tensor<T> conv_nd(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride, int spatial_rank) {
  const char* name = spatial_rank == 3 ? "conv3d" : "conv2d";
  if (!input.defined() || !kernel.defined()) throw ShapeError(std::string(name) + ": undefined input");
  const auto& is = input.shape();
  const auto& ks = kernel.shape();
  const std::size_t rank = static_cast<std::size_t>(spatial_rank) + 2;
  if (is.rank() != rank) throw ShapeError(std::string(name) + ": input must have rank " + std::to_string(rank) + ", got " + is.str());
  if (ks.rank() != rank) throw ShapeError(std::string(name) + ": kernel must have rank " + std::to_string(rank) + ", got " + ks.str());
  const std::int64_t k = ks[0];
  for (int a = 0; a < spatial_rank; ++a) {
    if (ks[a] != k) throw ShapeError(std::string(name) + ": kernel must be cubic/square, got " + ks.str());
  }
  if (k != 1 && k != 3) throw ShapeError(std::string(name) + ": kernel extent must be 1 or 3, got " + std::to_string(k));
  if (stride != 1 && stride != 2) throw ShapeError(std::string(name) + ": stride must be 1 or 2");
  const std::int64_t cin = is.channels();
  if (ks[rank - 2] != cin) {
    throw ShapeError(std::string(name) + ": input has " + std::to_string(cin) + " channels but kernel expects " +
                     std::to_string(ks[rank - 2]));
  }
  const std::int64_t cout = ks[rank - 1];
  if (bias.defined() && bias.numel() != cout) throw ShapeError(std::string(name) + ": bias must have " + std::to_string(cout) + " elements");

  std::array<std::int64_t, 3> in{1, 1, 1};
  std::array<std::int64_t, 3> kk{1, 1, 1};
  std::array<std::int64_t, 3> st{1, 1, 1};
  for (int a = 0; a < spatial_rank; ++a) {
    in[a] = is[a + 1];
    kk[a] = k;
    st[a] = stride;
  }
  const ConvGeometry g = make_geometry(is[0], in, cin, kk, cout, st);
  std::vector<std::int64_t> dims{g.batch};
  for (int a = 0; a < spatial_rank; ++a) dims.push_back(g.out[a]);
  dims.push_back(cout);

  auto out = conv_forward(g, input.data().data(), kernel.data().data(), bias.defined() ? bias.data().data() : nullptr);
  const bool track = needs_grad<T>({&input, &kernel, &bias});
  if (!track) return make_result<T>(Shape(dims), std::move(out), false);

  auto in_node = input.node();
  auto k_node = kernel.node();
  auto b_node = bias.defined() ? bias.node() : nullptr;
  return make_result<T>(Shape(dims), std::move(out), true, {&input, &kernel, &bias},
                        [g, in_node, k_node, b_node](Node<T>& self) {
                          conv_backward(g, in_node->value.data(), k_node->value.data(), self.grad.data(),
                                        grad_sink(in_node), grad_sink(k_node), grad_sink(b_node));
                        });
}

}  // namespace

template <typename T>
Tensor<T> conv3d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride) {
  return conv_nd(input, kernel, bias, stride, 3);
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& kernel, const Tensor<T>& bias, int stride) {
  return conv_nd(input, kernel, bias, stride, 2);
}

template Tensor<float> conv3d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> conv3d<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, int);
template Tensor<float> conv2d<float>(const Tensor<float>&, const Tensor<float>&, const Tensor<float>&, int);
template Tensor<double> conv2d<double>(const Tensor<double>&, const Tensor<double>&, const Tensor<double>&, int);

}  // namespace octoforce
