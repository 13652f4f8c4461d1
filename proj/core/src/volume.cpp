#include "octoforce/volume.hpp"

#include <string>

#include "octoforce/errors.hpp"

namespace octoforce {

Volume Volume::zeros(Extents3 extents, std::array<double, 3> spacing_mm) {
  for (auto e : extents) {
    if (e <= 0) throw ShapeError("volume extents must be positive");
  }
  Volume v;
  v.extents = extents;
  v.spacing_mm = spacing_mm;
  v.data.assign(static_cast<std::size_t>(extents[0] * extents[1] * extents[2]), 0.0f);
  return v;
}

std::array<double, 3> Volume::fov_mm() const {
  return {extents[0] * spacing_mm[0], extents[1] * spacing_mm[1], extents[2] * spacing_mm[2]};
}

std::vector<float> to_network_layout(const Volume& volume) {
  const auto [w, h, d] = volume.extents;
  std::vector<float> out(volume.data.size());
  for (std::int64_t z = 0; z < d; ++z) {
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) out[(x * h + y) * d + z] = volume.at(x, y, z);
    }
  }
  return out;
}

Volume downsample(const Volume& volume, Extents3 target, DownsampleMethod method) {
  Extents3 factor{};
  for (int a = 0; a < 3; ++a) {
    if (target[a] <= 0 || volume.extents[a] % target[a] != 0) {
      throw ShapeError("downsample: target extent " + std::to_string(target[a]) + " does not divide " +
                       std::to_string(volume.extents[a]) + " on axis " + std::to_string(a));
    }
    factor[a] = volume.extents[a] / target[a];
  }
  Volume out = Volume::zeros(target, {volume.spacing_mm[0] * factor[0], volume.spacing_mm[1] * factor[1],
                                      volume.spacing_mm[2] * factor[2]});
  if (method == DownsampleMethod::stride) {
    for (std::int64_t z = 0; z < target[2]; ++z) {
      for (std::int64_t y = 0; y < target[1]; ++y) {
        for (std::int64_t x = 0; x < target[0]; ++x) {
          out.at(x, y, z) = volume.at(x * factor[0], y * factor[1], z * factor[2]);
        }
      }
    }
    return out;
  }
  std::vector<double> acc(out.data.size(), 0.0);
  for (std::int64_t z = 0; z < volume.extents[2]; ++z) {
    for (std::int64_t y = 0; y < volume.extents[1]; ++y) {
      const float* row = volume.data.data() + volume.index(0, y, z);
      double* dst = acc.data() + out.index(0, y / factor[1], z / factor[2]);
      for (std::int64_t x = 0; x < volume.extents[0]; ++x) dst[x / factor[0]] += row[x];
    }
  }
  const double inv = 1.0 / static_cast<double>(factor[0] * factor[1] * factor[2]);
  for (std::size_t i = 0; i < acc.size(); ++i) out.data[i] = static_cast<float>(acc[i] * inv);
  return out;
}

SurfaceMaps extract_surfaces(const Volume& volume) {
  const auto [w, h, d] = volume.extents;
  SurfaceMaps maps;
  maps.width = w;
  maps.height = h;
  const auto pixels = static_cast<std::size_t>(w * h);
  maps.mip.assign(pixels, 0.0f);
  maps.depth.assign(pixels, 0.0f);
  maps.depth_index.assign(pixels, 0);
  const float denom = d > 1 ? static_cast<float>(d - 1) : 1.0f;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) {
      std::int32_t best = 0;
      float best_value = volume.at(x, y, 0);
      for (std::int64_t z = 1; z < d; ++z) {
        const float v = volume.at(x, y, z);
        if (v > best_value) {
          best_value = v;
          best = static_cast<std::int32_t>(z);
        }
      }
      const auto p = static_cast<std::size_t>(x + w * y);
      maps.mip[p] = best_value;
      maps.depth_index[p] = best;
      maps.depth[p] = static_cast<float>(best) / denom;
    }
  }
  return maps;
}

}  // namespace octoforce
