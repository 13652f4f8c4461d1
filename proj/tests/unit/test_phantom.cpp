#include <gtest/gtest.h>

#include <cmath>
#include <set>

#include "octoforce/errors.hpp"
#include "octoforce/parallel.hpp"
#include "octoforce/phantom.hpp"
#include "support/oracles.hpp"

using namespace octoforce;

namespace {

PhantomSpec small_spec() {
  PhantomSpec s;
  s.grid = {32, 32, 32};
  s.raw_grid = {32, 32, 32};
  return s;
}

double region_mean(const Volume& v, double radius_mm) {
  const auto fov = v.fov_mm();
  double total = 0.0;
  std::int64_t n = 0;
  for (std::int64_t z = 0; z < v.extents[2]; ++z)
    for (std::int64_t y = 0; y < v.extents[1]; ++y)
      for (std::int64_t x = 0; x < v.extents[0]; ++x) {
        const double px = (x + 0.5) * v.spacing_mm[0] - 0.5 * fov[0];
        const double py = (y + 0.5) * v.spacing_mm[1] - 0.5 * fov[1];
        if (std::hypot(px, py) > radius_mm) continue;
        total += v.at(x, y, z);
        ++n;
      }
  return total / static_cast<double>(n);
}

}  // namespace

TEST(ForceOracle, UntiltedPoseIsAxial) {
  const ToolPose pose{0.0, 0.0, 0.0, 1.2};
  const auto f = force_oracle(pose, 0.8);
  EXPECT_EQ(f.fx, 0.0);
  EXPECT_EQ(f.fy, 0.0);
  EXPECT_DOUBLE_EQ(f.fz, 0.8 * std::pow(1.2, 1.5));
}

TEST(ForceOracle, LinearInStiffness) {
  const ToolPose pose{-17.0, 6.0, 4.0, 0.9};
  EXPECT_NEAR(force_oracle(pose, 2.4).magnitude(), 2.0 * force_oracle(pose, 1.2).magnitude(), 1e-12);
}

TEST(ForceOracle, HandEvaluatedNormalMagnitude) {
  EXPECT_NEAR(force_oracle({0, 0, 0, 1.0}, 1.0).magnitude(), 1.0, 1e-12);
  EXPECT_NEAR(force_oracle({0, 0, 0, 1.5}, 1.0).magnitude(), 1.8371173070873836, 1e-12);
  // Tilted: F_n along the axis plus 0.2 F_n along the in-plane tilt direction,
  // |F|^2 = F_n^2 (1 + 0.04 + 0.4 s) with s the in-plane length of the unit axis.
  const ToolPose tilted{20.0, 5.0, -3.0, 1.5};
  const double tx = 20.0 * M_PI / 180.0, ty = 5.0 * M_PI / 180.0;
  const double s = std::hypot(std::cos(tx) * std::sin(ty), std::sin(tx));
  EXPECT_NEAR(force_oracle(tilted, 1.0).magnitude(), 1.5 * std::sqrt(1.5) * std::sqrt(1.04 + 0.4 * s), 1e-12);
}

TEST(ForceOracle, TangentialShareIsLateral) {
  const ToolPose pose{12.0, 7.0, 2.0, 1.0};
  const auto a = tool_axis(pose);
  const auto f = force_oracle(pose, 1.0);
  const double along = f.fx * a[0] + f.fy * a[1] + f.fz * a[2];
  const double lateral = std::hypot(a[0], a[1]);
  const double tangential_expected = 0.2;
  EXPECT_NEAR(along, 1.0 + tangential_expected * lateral, 1e-12);
}

TEST(ToolPose, ValidationNamesField) {
  EXPECT_NO_THROW(validate_pose({30.0, 10.0, -10.0, 1.5}));
  try {
    validate_pose({0.0, 12.0, 0.0, 1.0});
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(std::string(e.what()).find("theta_y"), std::string::npos);
  }
  EXPECT_THROW(validate_pose({0.0, 0.0, 0.0, 0.4}), ConfigError);
  EXPECT_THROW(render_volume(small_spec(), {}, ToolPose{0.0, 0.0, 0.0, 2.0}), ConfigError);
  PoseRanges bad;
  bad.theta_x = {-40.0, 0.0};
  EXPECT_THROW(validate_pose_ranges(bad), ConfigError);
}

TEST(Render, NoiseFreeReferenceIsDeterministicAndInRange) {
  auto spec = small_spec();
  spec.speckle = 0.0;
  const auto a = render_volume(spec, {1.0, 2.0}, std::nullopt);
  const auto b = render_volume(spec, {1.0, 2.0}, std::nullopt);
  EXPECT_EQ(a, b);
  for (float v : a.data) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(a.fov_mm()[i], i < 2 ? spec.fov_lateral_mm : spec.fov_axial_mm, 1e-6);
}

TEST(Render, ThreadedRenderingIsBitIdentical) {
  const auto spec = small_spec();
  const ToolPose pose{10.0, 5.0, 0.0, 1.0};
  set_num_threads(1);
  const auto serial = render_volume(spec, {}, pose, 3);
  set_num_threads(4);
  const auto threaded = render_volume(spec, {}, pose, 3);
  set_num_threads(1);
  EXPECT_EQ(serial, threaded);
}

TEST(Render, DeeperIndentationReachesDeeper) {
  auto spec = small_spec();
  spec.speckle = 0.0;
  auto deepest = [&](double d) {
    const auto s = extract_surfaces(render_volume(spec, {}, ToolPose{0.0, 0.0, 0.0, d}));
    return *std::max_element(s.depth_index.begin(), s.depth_index.end());
  };
  EXPECT_GT(deepest(1.5), deepest(0.5));
}

TEST(Render, ShadowDarkensRegionUnderTool) {
  const auto spec = small_spec();
  const auto reference = render_volume(spec, {}, std::nullopt, 1);
  const auto deformed = render_volume(spec, {}, ToolPose{0.0, 0.0, 0.0, 0.5}, 1);
  EXPECT_LT(region_mean(deformed, 0.25), region_mean(reference, 0.25));
}

TEST(Render, SpeckleDependsOnStream) {
  const auto spec = small_spec();
  EXPECT_NE(render_volume(spec, {}, std::nullopt, 1), render_volume(spec, {}, std::nullopt, 2));
}

TEST(Render, HiddenStiffnessLeavesSurfaceMapsUnchanged) {
  auto soft = small_spec();
  soft.stiffness.values = {0.5};
  auto hard = soft;
  hard.stiffness.values = {1.5};
  const ToolPose pose{-8.0, 4.0, 3.0, 1.1};
  const auto vs = render_volume(soft, {}, pose, 5);
  const auto vh = render_volume(hard, {}, pose, 5);
  EXPECT_NE(vs, vh);
  EXPECT_EQ(extract_surfaces(vs), extract_surfaces(vh));
  EXPECT_NE(force_oracle(pose, contact_stiffness(soft, {})), force_oracle(pose, contact_stiffness(hard, {})));
}

TEST(Protocol, CountsAndSharedReferences) {
  auto spec = small_spec();
  spec.grid = {8, 8, 8};
  spec.raw_grid = {8, 8, 8};
  AcquisitionPlan plan;
  plan.deformations_per_roi = 3;
  plan.roi_count = 2;
  const auto ds = run_protocol(spec, plan);
  ASSERT_EQ(ds.size(), 6u);
  std::set<const Volume*> refs;
  for (const auto& p : ds.pairs) {
    refs.insert(p.reference.get());
    EXPECT_EQ(p.reference->extents, p.deformed->extents);
    EXPECT_EQ(p.label, force_oracle(p.pose, contact_stiffness(spec, p.roi)));
    EXPECT_EQ(p.stiffness, contact_stiffness(spec, p.roi));
    for (double c : {p.label.fx, p.label.fy, p.label.fz}) EXPECT_TRUE(std::isfinite(c));
  }
  EXPECT_EQ(refs.size(), 2u);
  EXPECT_EQ(ds.groups(), (std::vector<std::int64_t>{0, 0, 0, 1, 1, 1}));
}

TEST(Protocol, DegeneratePlanIsEmpty) {
  AcquisitionPlan plan;
  plan.deformations_per_roi = 0;
  EXPECT_EQ(run_protocol(small_spec(), plan).size(), 0u);
  plan.deformations_per_roi = 4;
  plan.roi_count = 0;
  EXPECT_EQ(run_protocol(small_spec(), plan).size(), 0u);
}

TEST(Protocol, SameSeedSameDataset) {
  auto spec = small_spec();
  spec.grid = {8, 8, 8};
  AcquisitionPlan plan;
  plan.deformations_per_roi = 2;
  plan.roi_count = 2;
  const auto a = run_protocol(spec, plan);
  set_num_threads(3);
  const auto b = run_protocol(spec, plan);
  set_num_threads(1);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(*a.pairs[i].deformed, *b.pairs[i].deformed);
    EXPECT_EQ(*a.pairs[i].reference, *b.pairs[i].reference);
    EXPECT_EQ(a.pairs[i].pose, b.pairs[i].pose);
  }
  plan.seed = 2;
  EXPECT_NE(run_protocol(spec, plan).pairs[0].pose, a.pairs[0].pose);
}

TEST(Protocol, RoiWalkStaysOnSample) {
  const auto spec = PhantomSpec{};
  AcquisitionPlan plan;
  plan.roi_count = 200;
  plan.move_mm = 6.0;
  const auto walk = roi_walk(spec, plan);
  ASSERT_EQ(walk.size(), 200u);
  const double span = spec.sample_size_mm - spec.fov_lateral_mm;
  for (std::size_t i = 0; i < walk.size(); ++i) {
    EXPECT_GE(walk[i].x_mm, 0.0);
    EXPECT_LE(walk[i].x_mm, span);
    EXPECT_GE(walk[i].y_mm, 0.0);
    EXPECT_LE(walk[i].y_mm, span);
    if (i > 0) {
      EXPECT_LE(std::abs(walk[i].x_mm - walk[i - 1].x_mm), 6.0 + 1e-12);
      EXPECT_LE(std::abs(walk[i].y_mm - walk[i - 1].y_mm), 6.0 + 1e-12);
    }
  }
}

TEST(Protocol, PoseMarginalsAreUniform) {
  const PoseRanges ranges;
  std::vector<double> tx, ty, tz, d;
  for (int i = 0; i < 10000; ++i) {
    const auto p = sample_pose(ranges, 1, i / 50, i % 50);
    tx.push_back(p.theta_x_deg);
    ty.push_back(p.theta_y_deg);
    tz.push_back(p.theta_z_deg);
    d.push_back(p.depth_mm);
  }
  EXPECT_GT(oracle::ks_pvalue(oracle::ks_uniform(tx, -30, 30), tx.size()), 0.01);
  EXPECT_GT(oracle::ks_pvalue(oracle::ks_uniform(ty, 0, 10), ty.size()), 0.01);
  EXPECT_GT(oracle::ks_pvalue(oracle::ks_uniform(tz, -10, 10), tz.size()), 0.01);
  EXPECT_GT(oracle::ks_pvalue(oracle::ks_uniform(d, 0.5, 1.5), d.size()), 0.01);
}

TEST(Stiffness, CheckerboardCells) {
  StiffnessField f;
  EXPECT_EQ(f.at(1.0, 1.0), 0.5);
  EXPECT_EQ(f.at(41.0, 1.0), 1.5);
  EXPECT_EQ(f.at(41.0, 41.0), 0.5);
  EXPECT_EQ(f.at(-1.0, 1.0), 1.5);
}

TEST(PhantomSpec, Validation) {
  auto spec = small_spec();
  spec.shadow_attenuation = 1.5;
  EXPECT_THROW(validate_spec(spec), ConfigError);
  AcquisitionPlan plan;
  plan.move_mm = -1.0;
  EXPECT_THROW(validate_plan(plan), ConfigError);
}
