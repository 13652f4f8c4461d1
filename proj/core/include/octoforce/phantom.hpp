#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "octoforce/volume.hpp"

namespace octoforce {

// Tool orientation (degrees) and indentation depth along the tool axis (mm).
struct ToolPose {
  double theta_x_deg = 0.0;
  double theta_y_deg = 0.0;
  double theta_z_deg = 0.0;
  double depth_mm = 0.5;

  bool operator==(const ToolPose&) const = default;
};

struct Range {
  double min = 0.0;
  double max = 0.0;

  bool contains(double v) const { return v >= min && v <= max; }
  bool operator==(const Range&) const = default;
};

struct PoseRanges {
  Range theta_x{-30.0, 30.0};
  Range theta_y{0.0, 10.0};
  Range theta_z{-10.0, 10.0};
  Range depth{0.5, 1.5};

  bool operator==(const PoseRanges&) const = default;
};

// The robot's reachable set; every rendered pose and configured range must lie inside it.
inline constexpr PoseRanges kToolPoseLimits{};

// Throws ConfigError naming the offending field.
void validate_pose(const ToolPose& pose);
void validate_pose_ranges(const PoseRanges& ranges, const std::string& field = "plan.pose_ranges");

// Force on the tissue in the OCT frame (x, y lateral, z along the beam), newtons.
struct ForceVector {
  double fx = 0.0;
  double fy = 0.0;
  double fz = 0.0;

  double magnitude() const;
  bool operator==(const ForceVector&) const = default;
};

inline constexpr double kContactExponent = 1.5;
inline constexpr double kFrictionCoefficient = 0.2;

// Unit tool axis pointing into the tissue: Rz(theta_z) Ry(theta_y) Rx(theta_x) e_z.
std::array<double, 3> tool_axis(const ToolPose& pose);

// Normal magnitude k * d^1.5 along the tool axis plus a tangential share
// mu * F_n along the lateral tilt direction.
ForceVector force_oracle(const ToolPose& pose, double stiffness);

// Checkerboard of stiffness values (N/mm^1.5) in sample coordinates.
struct StiffnessField {
  std::vector<double> values{0.5, 1.5};
  double cell_mm = 40.0;

  double at(double x_mm, double y_mm) const;
  bool operator==(const StiffnessField&) const = default;
};

struct PhantomSpec {
  double fov_lateral_mm = 10.0;
  double fov_axial_mm = 2.66;
  Extents3 grid{128, 128, 512};  // rendered grid
  Extents3 raw_grid{128, 128, 512};  // device grid; coarser grids integrate sub-samples at this pitch

  // Surface height field (depth below the top of the FOV).
  double surface_depth_mm = 0.35;
  double texture_amplitude_mm = 0.03;
  double texture_wavelength_mm = 2.0;
  int texture_components = 4;

  // Reflectivity profile along an A-scan.
  double background = 0.02;
  double surface_band_mm = 0.2;
  double surface_brightness = 0.9;
  double tissue_brightness = 0.15;
  double tissue_decay_mm = 0.8;

  // Subsurface layer: brightness and thickness grow linearly with local stiffness.
  StiffnessField stiffness;
  double layer_depth_mm = 1.0;
  double layer_brightness = 0.03;
  double layer_brightness_per_k = 0.3;
  double layer_thickness_mm = 0.1;
  double layer_thickness_per_k_mm = 0.3;

  // Tool footprint and occlusion.
  double tip_radius_mm = 0.8;
  double tip_elongation = 1.5;
  double tip_shift_gain = 1.0;
  double tool_radius_mm = 0.35;
  double shadow_taper = 0.15;
  double shaft_height_mm = 6.0;
  double shadow_attenuation = 0.6;

  double speckle = 0.05;
  double sample_size_mm = 120.0;  // lateral extent the ROI walk stays within
  std::uint64_t seed = 7;

  bool operator==(const PhantomSpec&) const = default;
};

void validate_spec(const PhantomSpec& spec);

// Offset of the FOV origin in sample coordinates.
struct RoiOffset {
  double x_mm = 0.0;
  double y_mm = 0.0;

  bool operator==(const RoiOffset&) const = default;
};

// Lateral contact point of the tool tip in FOV coordinates (the FOV center).
std::array<double, 2> contact_point(const PhantomSpec& spec);
double contact_stiffness(const PhantomSpec& spec, const RoiOffset& roi);

// Renders one scan. Without a pose the sample is undeformed (a reference).
// `noise_stream` selects the speckle realization; intensities lie in [0, 1].
Volume render_volume(const PhantomSpec& spec, const RoiOffset& roi, const std::optional<ToolPose>& pose,
                     std::uint64_t noise_stream = 0);

struct AcquisitionPlan {
  std::int64_t deformations_per_roi = 50;  // L
  std::int64_t roi_count = 20;             // M
  double move_mm = 2.0;                    // max lateral move per axis between ROIs
  PoseRanges pose_ranges;
  std::uint64_t seed = 1;

  std::int64_t total() const { return deformations_per_roi * roi_count; }
  bool operator==(const AcquisitionPlan&) const = default;
};

void validate_plan(const AcquisitionPlan& plan);

struct SamplePair {
  std::int64_t id = 0;
  std::int64_t roi_index = 0;
  RoiOffset roi;
  ToolPose pose;
  ForceVector label;
  double stiffness = 0.0;
  std::shared_ptr<const Volume> reference;
  std::shared_ptr<const Volume> deformed;
};

struct Dataset {
  PhantomSpec spec;
  AcquisitionPlan plan;
  std::vector<SamplePair> pairs;

  std::size_t size() const { return pairs.size(); }
  std::vector<std::int64_t> groups() const;  // ROI index per pair
};

// Deterministic per-(seed, roi, pose) draws used by the protocol.
ToolPose sample_pose(const PoseRanges& ranges, std::uint64_t seed, std::int64_t roi, std::int64_t index);
std::vector<RoiOffset> roi_walk(const PhantomSpec& spec, const AcquisitionPlan& plan);

// Replays the acquisition protocol: for each of M ROIs one reference scan,
// then L random poses each yielding a deformed scan and its oracle label.
Dataset run_protocol(const PhantomSpec& spec, const AcquisitionPlan& plan);

}  // namespace octoforce
