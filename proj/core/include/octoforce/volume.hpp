#pragma once

#include <array>
#include <cstdint>
#include <vector>

namespace octoforce {

using Extents3 = std::array<std::int64_t, 3>;

// One OCT scan. Axes are (x, y) lateral and z axial (beam direction, depth
// increasing with z); the buffer is x-fastest.
struct Volume {
  Extents3 extents{};
  std::array<double, 3> spacing_mm{};
  std::vector<float> data;

  static Volume zeros(Extents3 extents, std::array<double, 3> spacing_mm);

  std::int64_t numel() const { return extents[0] * extents[1] * extents[2]; }
  std::size_t index(std::int64_t x, std::int64_t y, std::int64_t z) const {
    return static_cast<std::size_t>(x + extents[0] * (y + extents[1] * z));
  }
  float at(std::int64_t x, std::int64_t y, std::int64_t z) const { return data[index(x, y, z)]; }
  float& at(std::int64_t x, std::int64_t y, std::int64_t z) { return data[index(x, y, z)]; }
  std::array<double, 3> fov_mm() const;

  bool operator==(const Volume&) const = default;
};

// Copy in the network layout [W, H, D] with D fastest (one sample, one channel).
std::vector<float> to_network_layout(const Volume& volume);

enum class DownsampleMethod { block_mean, stride };

// Reduces each axis by an integer factor. Block averaging by default; the
// stride method keeps the first voxel of every block. Throws ShapeError when
// a target extent does not divide the source extent.
Volume downsample(const Volume& volume, Extents3 target, DownsampleMethod method = DownsampleMethod::block_mean);

// Per lateral pixel: maximum over depth, and the first (shallowest) depth
// index attaining it, normalized by (axial extent - 1). Maps are x-fastest.
struct SurfaceMaps {
  std::int64_t width = 0;
  std::int64_t height = 0;
  std::vector<float> mip;
  std::vector<float> depth;
  std::vector<std::int32_t> depth_index;

  bool operator==(const SurfaceMaps&) const = default;
};

SurfaceMaps extract_surfaces(const Volume& volume);

}  // namespace octoforce
