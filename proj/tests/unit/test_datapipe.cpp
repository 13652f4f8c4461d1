#include <gtest/gtest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "octoforce/datapipe.hpp"
#include "octoforce/errors.hpp"
#include "support/oracles.hpp"

using namespace octoforce;
namespace fs = std::filesystem;

namespace {

Volume random_volume(Extents3 e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  auto v = Volume::zeros(e, {0.1, 0.1, 0.05});
  for (auto& x : v.data) x = u(rng);
  return v;
}

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("octoforce_test_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  return dir;
}

Dataset small_dataset() {
  PhantomSpec spec;
  spec.grid = {8, 8, 8};
  spec.raw_grid = {8, 8, 8};
  AcquisitionPlan plan;
  plan.deformations_per_roi = 3;
  plan.roi_count = 2;
  return run_protocol(spec, plan);
}

}  // namespace

TEST(Downsample, ConstantStaysConstant) {
  auto v = Volume::zeros({8, 8, 16}, {0.1, 0.1, 0.1});
  std::fill(v.data.begin(), v.data.end(), 0.3f);
  const auto d = downsample(v, {4, 2, 2});
  for (float x : d.data) EXPECT_EQ(x, 0.3f);
  EXPECT_DOUBLE_EQ(d.spacing_mm[0], 0.2);
  EXPECT_DOUBLE_EQ(d.spacing_mm[1], 0.4);
  EXPECT_DOUBLE_EQ(d.spacing_mm[2], 0.8);
}

TEST(Downsample, SingleBlockAverage) {
  auto v = Volume::zeros({2, 2, 2}, {1, 1, 1});
  std::fill(v.data.begin(), v.data.end(), 1.0f);
  v.at(1, 0, 1) = 0.0f;
  EXPECT_EQ(downsample(v, {1, 1, 1}).data[0], 7.0f / 8.0f);
}

TEST(Downsample, MatchesMeanOracle) {
  const auto v = random_volume({8, 8, 8}, 3);
  const auto d = downsample(v, {4, 4, 4});
  const auto ref = oracle::block_mean(v, {4, 4, 4});
  for (std::size_t i = 0; i < ref.size(); ++i) EXPECT_NEAR(d.data[i], ref[i], 1e-7);
  const auto anisotropic = downsample(random_volume({16, 16, 64}, 4), {8, 8, 8});
  EXPECT_EQ(anisotropic.extents, (Extents3{8, 8, 8}));
}

TEST(Downsample, PreservesMeanAndFov) {
  const auto v = random_volume({16, 8, 32}, 5);
  const auto d = downsample(v, {4, 4, 4});
  double m1 = 0, m2 = 0;
  for (float x : v.data) m1 += x;
  for (float x : d.data) m2 += x;
  EXPECT_NEAR(m1 / v.numel(), m2 / d.numel(), 1e-6);
  for (int a = 0; a < 3; ++a) EXPECT_NEAR(v.fov_mm()[a], d.fov_mm()[a], 1e-6);
}

TEST(Downsample, StrideKeepsFirstVoxel) {
  const auto v = random_volume({4, 4, 4}, 6);
  const auto d = downsample(v, {2, 2, 2}, DownsampleMethod::stride);
  EXPECT_EQ(d.at(1, 0, 1), v.at(2, 0, 2));
}

TEST(Downsample, NonDivisibleTargetIsError) {
  EXPECT_THROW(downsample(random_volume({6, 6, 6}, 1), {4, 4, 4}), ShapeError);
}

TEST(Surfaces, SingleBrightVoxel) {
  auto v = Volume::zeros({4, 4, 64}, {1, 1, 1});
  v.at(2, 1, 10) = 0.8f;
  const auto s = extract_surfaces(v);
  EXPECT_FLOAT_EQ(s.depth[2 + 4 * 1], 10.0f / 63.0f);
  EXPECT_EQ(s.mip[2 + 4 * 1], 0.8f);
}

TEST(Surfaces, ConstantVolumeTiesToShallowest) {
  auto v = Volume::zeros({3, 3, 5}, {1, 1, 1});
  std::fill(v.data.begin(), v.data.end(), 0.5f);
  const auto s = extract_surfaces(v);
  for (float d : s.depth) EXPECT_EQ(d, 0.0f);
}

TEST(Surfaces, MatchesPerPixelOracle) {
  for (std::uint64_t seed : {1, 2, 3}) {
    auto v = random_volume({7, 5, 9}, seed);
    for (std::size_t i = 0; i < v.data.size(); i += 3) v.data[i] = 1.0f;  // plant ties
    const auto s = extract_surfaces(v);
    for (std::int64_t y = 0; y < 5; ++y)
      for (std::int64_t x = 0; x < 7; ++x) {
        const auto o = oracle::pixel_surface(v, x, y);
        const auto i = static_cast<std::size_t>(x + 7 * y);
        EXPECT_EQ(s.mip[i], o.mip);
        EXPECT_EQ(s.depth_index[i], o.index);
        EXPECT_EQ(v.at(x, y, s.depth_index[i]), s.mip[i]);
        EXPECT_EQ(s.depth[i], static_cast<float>(static_cast<double>(o.index) / 8.0));
      }
  }
}

TEST(Scaler, ExtremesMapToZeroAndOne) {
  const std::vector<double> labels{-1, 0, 1, 1, 0.5, -1, 0, -1, 0.2};
  const auto s = fit_scaler(labels, 3);
  const auto scaled = s.apply(labels);
  for (int c = 0; c < 3; ++c) {
    double lo = 1e9, hi = -1e9;
    for (int r = 0; r < 3; ++r) {
      lo = std::min(lo, scaled[r * 3 + c]);
      hi = std::max(hi, scaled[r * 3 + c]);
    }
    EXPECT_EQ(lo, 0.0);
    EXPECT_EQ(hi, 1.0);
  }
}

TEST(Scaler, RoundTrip) {
  std::mt19937_64 rng(7);
  std::uniform_real_distribution<double> u(-3.0, 3.0);
  std::vector<double> labels(300);
  for (auto& x : labels) x = u(rng);
  const auto s = fit_scaler(labels, 3);
  const auto back = s.invert(s.apply(labels));
  for (std::size_t i = 0; i < labels.size(); ++i) EXPECT_NEAR(back[i], labels[i], 1e-6);
}

TEST(Scaler, DegenerateComponent) {
  const std::vector<double> labels{1.0, 2.0, 3.0, 1.0, 5.0, 4.0};
  const auto s = fit_scaler(labels, 3);
  const auto scaled = s.apply(labels);
  EXPECT_EQ(scaled[0], 0.5);
  EXPECT_EQ(scaled[3], 0.5);
  const auto back = s.invert(scaled);
  EXPECT_EQ(back[0], 1.0);
  EXPECT_EQ(back[3], 1.0);
}

TEST(Scaler, HeldOutValuesMayLeaveUnitRange) {
  const auto s = fit_scaler({0.0, 0.0, 0.0, 1.0, 1.0, 1.0}, 3);
  const auto out = s.apply({2.0, -1.0, 0.5});
  EXPECT_EQ(out[0], 2.0);
  EXPECT_EQ(out[1], -1.0);
  EXPECT_EQ(out[2], 0.5);
}

TEST(Split, PlainSizesAndCoverage) {
  SplitSpec spec;
  spec.group_aware = false;
  const auto s = split(100, spec);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
  EXPECT_EQ(s.test.size(), 10u);
  std::set<std::int64_t> all;
  for (const auto* part : {&s.train, &s.val, &s.test}) all.insert(part->begin(), part->end());
  EXPECT_EQ(all.size(), 100u);
  EXPECT_EQ(*all.begin(), 0);
  EXPECT_EQ(*all.rbegin(), 99);
}

TEST(Split, SeedDeterminesOrder) {
  SplitSpec spec;
  spec.group_aware = false;
  EXPECT_EQ(split(50, spec).train, split(50, spec).train);
  auto other = spec;
  other.seed = 2;
  EXPECT_NE(split(50, spec).train, split(50, other).train);
}

TEST(Split, GroupAwareKeepsRoisTogether) {
  std::vector<std::int64_t> groups;
  for (int g = 0; g < 20; ++g)
    for (int i = 0; i < 5; ++i) groups.push_back(g);
  const auto s = split(groups.size(), SplitSpec{}, groups);
  std::vector<int> where(20, -1);
  int part_id = 0;
  std::size_t total = 0;
  for (const auto* part : {&s.train, &s.val, &s.test}) {
    for (auto i : *part) {
      const auto g = groups[static_cast<std::size_t>(i)];
      EXPECT_TRUE(where[g] == -1 || where[g] == part_id);
      where[g] = part_id;
    }
    total += part->size();
    ++part_id;
  }
  EXPECT_EQ(total, 100u);
  EXPECT_EQ(s.train.size(), 80u);
  EXPECT_EQ(s.val.size(), 10u);
}

TEST(Split, FractionsMustSumToOne) {
  EXPECT_THROW(validate_split({0.5, 0.3, 0.1, 1, true}), ConfigError);
  EXPECT_THROW(split(10, {0.5, 0.3, 0.1, 1, true}), ConfigError);
}

TEST(Container, EmptyDatasetRoundTrips) {
  const auto dir = scratch("empty");
  Dataset ds;
  write_dataset(dir, ds);
  const auto back = read_dataset(dir);
  EXPECT_TRUE(same_content(ds, back));
  EXPECT_EQ(back.size(), 0u);
  fs::remove_all(dir);
}

TEST(Container, ProtocolOutputRoundTripsBitExactly) {
  const auto dir = scratch("pairs");
  const auto ds = small_dataset();
  write_dataset(dir, ds);
  const auto back = read_dataset(dir);
  EXPECT_TRUE(same_content(ds, back));
  EXPECT_EQ(back.pairs[0].reference.get(), back.pairs[2].reference.get());
  EXPECT_NE(back.pairs[0].reference.get(), back.pairs[3].reference.get());
  write_dataset(dir, back);
  EXPECT_TRUE(same_content(ds, read_dataset(dir)));
  fs::remove_all(dir);
}

TEST(Container, CorruptMagicIsFormatError) {
  const auto dir = scratch("magic");
  write_dataset(dir, small_dataset());
  {
    std::fstream f(dir / "volumes.bin", std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.write("XXXX", 4);
  }
  try {
    read_dataset(dir);
    FAIL();
  } catch (const FormatError& e) {
    EXPECT_EQ(e.error_class(), "format");
  }
  fs::remove_all(dir);
}

TEST(Container, ManifestFormatTagChecked) {
  const auto dir = scratch("tag");
  write_dataset(dir, small_dataset());
  {
    std::ifstream is(dir / "manifest.json");
    std::string text((std::istreambuf_iterator<char>(is)), {});
    text.replace(text.find("octoforce-ds/1"), 14, "octoforce-ds/9");
    std::ofstream(dir / "manifest.json") << text;
  }
  EXPECT_THROW(read_dataset(dir), FormatError);
  fs::remove_all(dir);
}

TEST(Container, VolumeFileRoundTrip) {
  const auto dir = scratch("vol");
  fs::create_directories(dir);
  const auto v = random_volume({3, 4, 5}, 9);
  write_volume(dir / "a.ofv", v);
  EXPECT_EQ(read_volume(dir / "a.ofv"), v);
  fs::resize_file(dir / "a.ofv", fs::file_size(dir / "a.ofv") - 4);
  EXPECT_THROW(read_volume(dir / "a.ofv"), FormatError);
  fs::remove_all(dir);
}
