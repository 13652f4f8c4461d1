#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "octoforce/phantom.hpp"
#include "octoforce/volume.hpp"

namespace octoforce {

inline constexpr const char* kDatasetFormat = "octoforce-ds/1";
inline constexpr const char* kVolumeFormat = "octoforce-vol/1";

// Dataset container: <dir>/manifest.json plus <dir>/volumes.bin (16-byte
// magic, then little-endian float32 volumes, x-fastest). References are
// stored once per ROI and shared by their pairs on read.
void write_dataset(const std::filesystem::path& dir, const Dataset& dataset);
Dataset read_dataset(const std::filesystem::path& dir);

// Single-volume file used by `infer`.
void write_volume(const std::filesystem::path& file, const Volume& volume);
Volume read_volume(const std::filesystem::path& file);

bool same_content(const Dataset& a, const Dataset& b);

// Per-component min-max scaling to [0, 1]. A component with min == max maps to 0.5.
struct LabelScaler {
  std::vector<double> min;
  std::vector<double> max;

  std::size_t dim() const { return min.size(); }
  // Row-major [n, dim] in and out.
  std::vector<double> apply(const std::vector<double>& labels) const;
  std::vector<double> invert(const std::vector<double>& scaled) const;

  bool operator==(const LabelScaler&) const = default;
};

LabelScaler fit_scaler(const std::vector<double>& labels, std::size_t dim);

std::array<double, 3> to_array(const ForceVector& f);

struct SplitSpec {
  double train = 0.8;
  double val = 0.1;
  double test = 0.1;
  std::uint64_t seed = 1;
  bool group_aware = true;  // keep every ROI's pairs in one split

  bool operator==(const SplitSpec&) const = default;
};

void validate_split(const SplitSpec& spec);

struct SplitIndices {
  std::vector<std::int64_t> train;
  std::vector<std::int64_t> val;
  std::vector<std::int64_t> test;

  const std::vector<std::int64_t>& by_name(const std::string& name) const;
};

// Shuffles with the split seed. Target sizes are round(train * n) and
// round(val * n); the remainder is the test split. In group-aware mode whole
// groups are assigned in shuffled order until each target is reached.
SplitIndices split(std::size_t n, const SplitSpec& spec, const std::vector<std::int64_t>& groups = {});

}  // namespace octoforce
