#pragma once

// Brute-force reference implementations used as independent oracles. Nothing
// here shares code with the library kernels it checks.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "octoforce/tensor.hpp"
#include "octoforce/volume.hpp"

namespace oracle {

// Six nested loops over output position and kernel tap, SAME padding with
// the smaller half of the padding before the data.
template <typename T>
std::vector<T> conv3d(const std::vector<T>& x, std::array<std::int64_t, 5> xs, const std::vector<T>& w, std::int64_t k,
                      std::int64_t cout, int stride, const std::vector<T>* bias = nullptr) {
  const auto [n, W, H, D, cin] = xs;
  const std::int64_t ow = (W + stride - 1) / stride, oh = (H + stride - 1) / stride, od = (D + stride - 1) / stride;
  auto pad_before = [&](std::int64_t in, std::int64_t out) {
    const std::int64_t total = std::max<std::int64_t>(0, (out - 1) * stride + k - in);
    return total / 2;
  };
  const std::int64_t pw = pad_before(W, ow), ph = pad_before(H, oh), pd = pad_before(D, od);
  std::vector<T> y(static_cast<std::size_t>(n * ow * oh * od * cout), T(0));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < ow; ++i)
      for (std::int64_t j = 0; j < oh; ++j)
        for (std::int64_t l = 0; l < od; ++l)
          for (std::int64_t co = 0; co < cout; ++co) {
            T acc = bias ? (*bias)[co] : T(0);
            for (std::int64_t a = 0; a < k; ++a)
              for (std::int64_t c = 0; c < k; ++c)
                for (std::int64_t e = 0; e < k; ++e) {
                  const std::int64_t xi = i * stride + a - pw, xj = j * stride + c - ph, xl = l * stride + e - pd;
                  if (xi < 0 || xj < 0 || xl < 0 || xi >= W || xj >= H || xl >= D) continue;
                  for (std::int64_t ci = 0; ci < cin; ++ci) {
                    acc += x[(((b * W + xi) * H + xj) * D + xl) * cin + ci] * w[(((a * k + c) * k + e) * cin + ci) * cout + co];
                  }
                }
            y[(((b * ow + i) * oh + j) * od + l) * cout + co] = acc;
          }
  return y;
}

template <typename T>
std::vector<T> conv2d(const std::vector<T>& x, std::array<std::int64_t, 4> xs, const std::vector<T>& w, std::int64_t k,
                      std::int64_t cout, int stride, const std::vector<T>* bias = nullptr) {
  const auto [n, W, H, cin] = xs;
  const std::int64_t ow = (W + stride - 1) / stride, oh = (H + stride - 1) / stride;
  auto pad_before = [&](std::int64_t in, std::int64_t out) {
    return std::max<std::int64_t>(0, (out - 1) * stride + k - in) / 2;
  };
  const std::int64_t pw = pad_before(W, ow), ph = pad_before(H, oh);
  std::vector<T> y(static_cast<std::size_t>(n * ow * oh * cout), T(0));
  for (std::int64_t b = 0; b < n; ++b)
    for (std::int64_t i = 0; i < ow; ++i)
      for (std::int64_t j = 0; j < oh; ++j)
        for (std::int64_t co = 0; co < cout; ++co) {
          T acc = bias ? (*bias)[co] : T(0);
          for (std::int64_t a = 0; a < k; ++a)
            for (std::int64_t c = 0; c < k; ++c) {
              const std::int64_t xi = i * stride + a - pw, xj = j * stride + c - ph;
              if (xi < 0 || xj < 0 || xi >= W || xj >= H) continue;
              for (std::int64_t ci = 0; ci < cin; ++ci) {
                acc += x[((b * W + xi) * H + xj) * cin + ci] * w[((a * k + c) * cin + ci) * cout + co];
              }
            }
          y[((b * ow + i) * oh + j) * cout + co] = acc;
        }
  return y;
}

// Block mean by explicit summation over each block.
inline std::vector<double> block_mean(const octoforce::Volume& v, octoforce::Extents3 target) {
  const std::int64_t fx = v.extents[0] / target[0], fy = v.extents[1] / target[1], fz = v.extents[2] / target[2];
  std::vector<double> out(static_cast<std::size_t>(target[0] * target[1] * target[2]));
  for (std::int64_t z = 0; z < target[2]; ++z)
    for (std::int64_t y = 0; y < target[1]; ++y)
      for (std::int64_t x = 0; x < target[0]; ++x) {
        double s = 0.0;
        for (std::int64_t c = 0; c < fz; ++c)
          for (std::int64_t b = 0; b < fy; ++b)
            for (std::int64_t a = 0; a < fx; ++a) s += v.at(x * fx + a, y * fy + b, z * fz + c);
        out[static_cast<std::size_t>(x + target[0] * (y + target[1] * z))] = s / static_cast<double>(fx * fy * fz);
      }
  return out;
}

struct PixelSurface {
  float mip;
  std::int64_t index;
};

// Scan one A-scan from the top, keeping the first maximum.
inline PixelSurface pixel_surface(const octoforce::Volume& v, std::int64_t x, std::int64_t y) {
  PixelSurface p{v.at(x, y, 0), 0};
  for (std::int64_t z = 1; z < v.extents[2]; ++z) {
    if (v.at(x, y, z) > p.mip) p = {v.at(x, y, z), z};
  }
  return p;
}

// Closed-form simple linear regression of y on x, then 1 - SS_res / SS_tot.
inline double least_squares_r2(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxx += x[i] * x[i];
    sxy += x[i] * y[i];
  }
  const double slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
  const double intercept = (sy - slope * sx) / n;
  const double my = sy / n;
  double ss_res = 0, ss_tot = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double f = intercept + slope * x[i];
    ss_res += (y[i] - f) * (y[i] - f);
    ss_tot += (y[i] - my) * (y[i] - my);
  }
  return 1.0 - ss_res / ss_tot;
}

// Quantile at p from a sorted copy, interpolating between neighbours.
inline double sorted_quantile(std::vector<double> v, double p) {
  std::sort(v.begin(), v.end());
  const double h = (static_cast<double>(v.size()) - 1.0) * p;
  const double lo = std::floor(h);
  const double hi = std::ceil(h);
  return v[static_cast<std::size_t>(lo)] + (h - lo) * (v[static_cast<std::size_t>(hi)] - v[static_cast<std::size_t>(lo)]);
}

// One-sample Kolmogorov-Smirnov statistic against U(a, b).
inline double ks_uniform(std::vector<double> v, double a, double b) {
  std::sort(v.begin(), v.end());
  const double n = static_cast<double>(v.size());
  double d = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    const double f = std::clamp((v[i] - a) / (b - a), 0.0, 1.0);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}

// Asymptotic Kolmogorov distribution tail: P(D_n > d).
inline double ks_pvalue(double d, std::size_t n) {
  const double sn = std::sqrt(static_cast<double>(n));
  const double lambda = (sn + 0.12 + 0.11 / sn) * d;
  double p = 0.0;
  for (int j = 1; j <= 100; ++j) {
    const double term = 2.0 * ((j % 2) ? 1.0 : -1.0) * std::exp(-2.0 * j * j * lambda * lambda);
    p += term;
    if (std::abs(term) < 1e-12) break;
  }
  return std::clamp(p, 0.0, 1.0);
}

template <typename T>
octoforce::Tensor<T> random_tensor(octoforce::Shape shape, std::mt19937_64& rng, bool requires_grad = false,
                                   double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<T> v(static_cast<std::size_t>(shape.numel()));
  for (auto& x : v) x = static_cast<T>(u(rng));
  return octoforce::Tensor<T>(std::move(shape), std::move(v), requires_grad);
}

template <typename T>
std::vector<T> to_vector(const octoforce::Tensor<T>& t) {
  const auto d = t.data();
  return {d.begin(), d.end()};
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace oracle
