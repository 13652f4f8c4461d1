#include "octoforce/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>

#include "octoforce/errors.hpp"
#include "octoforce/parallel.hpp"
#include "random_util.hpp"

namespace octoforce {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

std::string fmt_range(const Range& r) { return "[" + std::to_string(r.min) + ", " + std::to_string(r.max) + "]"; }

void check_range(const Range& r, const Range& limit, const std::string& field) {
  if (!(r.min <= r.max)) throw ConfigError(field + ": min exceeds max in " + fmt_range(r));
  if (!limit.contains(r.min) || !limit.contains(r.max)) {
    throw ConfigError(field + ": " + fmt_range(r) + " outside the tool limits " + fmt_range(limit));
  }
}

void require_positive(double v, const char* field) {
  if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("phantom.") + field + " must be positive");
}

void require_nonnegative(double v, const char* field) {
  if (!(v >= 0.0) || !std::isfinite(v)) throw ConfigError(std::string("phantom.") + field + " must be non-negative");
}

double smoothstep(double e0, double e1, double x) {
  const double t = std::clamp((x - e0) / (e1 - e0), 0.0, 1.0);
  return t * t * (3.0 - 2.0 * t);
}

// Low-amplitude sinusoidal relief in sample coordinates, fixed by the phantom seed.
struct SurfaceRelief {
  struct Component {
    double kx, ky, phase;
  };
  std::vector<Component> components;
  double base = 0.0;
  double amplitude = 0.0;

  explicit SurfaceRelief(const PhantomSpec& spec) : base(spec.surface_depth_mm) {
    std::mt19937_64 rng(detail::mix_keys({spec.seed, 0x5ea1ULL}));
    std::uniform_real_distribution<double> angle(0.0, 2.0 * std::numbers::pi);
    std::uniform_real_distribution<double> scale(0.6, 1.4);
    const int n = std::max(spec.texture_components, 0);
    amplitude = n > 0 ? spec.texture_amplitude_mm / std::sqrt(static_cast<double>(n)) : 0.0;
    for (int c = 0; c < n; ++c) {
      const double dir = angle(rng);
      const double wavenumber = 2.0 * std::numbers::pi / (spec.texture_wavelength_mm * scale(rng));
      components.push_back({wavenumber * std::cos(dir), wavenumber * std::sin(dir), angle(rng)});
    }
  }

  double depth(double xs, double ys) const {
    double h = base;
    for (const auto& c : components) h += amplitude * std::sin(c.kx * xs + c.ky * ys + c.phase);
    return h;
  }
};

// Indentation bump and occlusion footprint of one tool pose, in FOV coordinates.
struct ToolFootprint {
  double depth = 0.0;
  double cx = 0.0, cy = 0.0;        // bump center
  double ex = 1.0, ey = 0.0;        // bump major axis
  double sigma_major = 1.0, sigma_minor = 1.0;
  double tip_x = 0.0, tip_y = 0.0;  // contact point
  double sx = 0.0, sy = 0.0;        // shaft direction projected on the surface (unit, or zero)
  double shaft_length = 0.0;        // projected shaft length
  double height_per_mm = 0.0;       // shaft height gained per projected mm
  double tool_radius = 0.0, taper = 0.0, attenuation = 0.0;

  ToolFootprint(const PhantomSpec& spec, const ToolPose& pose) {
    const auto a = tool_axis(pose);
    const double lateral = std::hypot(a[0], a[1]);
    const auto contact = contact_point(spec);
    tip_x = contact[0];
    tip_y = contact[1];
    depth = pose.depth_mm;
    if (lateral > 1e-12) {
      ex = a[0] / lateral;
      ey = a[1] / lateral;
    } else {
      ex = std::cos(pose.theta_z_deg * kDegToRad);
      ey = std::sin(pose.theta_z_deg * kDegToRad);
    }
    const double shift = spec.tip_shift_gain * pose.depth_mm * lateral / a[2];
    cx = tip_x + shift * ex;
    cy = tip_y + shift * ey;
    sigma_minor = spec.tip_radius_mm;
    sigma_major = spec.tip_radius_mm * (1.0 + spec.tip_elongation * lateral);

    if (lateral > 1e-12) {
      sx = -ex;
      sy = -ey;
      shaft_length = spec.shaft_height_mm * lateral / a[2];
      height_per_mm = a[2] / lateral;
    }
    tool_radius = spec.tool_radius_mm;
    taper = spec.shadow_taper;
    attenuation = spec.shadow_attenuation;
  }

  double indentation(double x, double y) const {
    const double dx = x - cx, dy = y - cy;
    const double along = dx * ex + dy * ey;
    const double across = -dx * ey + dy * ex;
    const double q = along * along / (sigma_major * sigma_major) + across * across / (sigma_minor * sigma_minor);
    return depth * std::exp(-0.5 * q);
  }

  // Multiplicative A-scan transmission under the tool shaft.
  double transmission(double x, double y) const {
    const double dx = x - tip_x, dy = y - tip_y;
    const double t = std::clamp(dx * sx + dy * sy, 0.0, shaft_length);
    const double rx = dx - t * sx, ry = dy - t * sy;
    const double dist = std::hypot(rx, ry);
    const double radius = tool_radius + taper * t * height_per_mm;
    constexpr double kEdge = 0.05;
    const double occlusion = 1.0 - smoothstep(radius - kEdge, radius + kEdge, dist);
    return 1.0 - attenuation * occlusion;
  }
};

}  // namespace

void validate_pose(const ToolPose& pose) {
  const auto& lim = kToolPoseLimits;
  auto check = [](double v, const Range& r, const char* field) {
    if (!std::isfinite(v) || !r.contains(v)) {
      throw ConfigError(std::string("pose.") + field + " = " + std::to_string(v) + " outside " + fmt_range(r));
    }
  };
  check(pose.theta_x_deg, lim.theta_x, "theta_x");
  check(pose.theta_y_deg, lim.theta_y, "theta_y");
  check(pose.theta_z_deg, lim.theta_z, "theta_z");
  check(pose.depth_mm, lim.depth, "depth");
}

void validate_pose_ranges(const PoseRanges& ranges, const std::string& field) {
  check_range(ranges.theta_x, kToolPoseLimits.theta_x, field + ".theta_x");
  check_range(ranges.theta_y, kToolPoseLimits.theta_y, field + ".theta_y");
  check_range(ranges.theta_z, kToolPoseLimits.theta_z, field + ".theta_z");
  check_range(ranges.depth, kToolPoseLimits.depth, field + ".depth");
}

double ForceVector::magnitude() const { return std::sqrt(fx * fx + fy * fy + fz * fz); }

std::array<double, 3> tool_axis(const ToolPose& pose) {
  const double tx = pose.theta_x_deg * kDegToRad;
  const double ty = pose.theta_y_deg * kDegToRad;
  const double tz = pose.theta_z_deg * kDegToRad;
  // Rx e_z = (0, -sin tx, cos tx); then Ry; then Rz.
  const double x1 = std::cos(tx) * std::sin(ty);
  const double y1 = -std::sin(tx);
  const double z1 = std::cos(tx) * std::cos(ty);
  return {std::cos(tz) * x1 - std::sin(tz) * y1, std::sin(tz) * x1 + std::cos(tz) * y1, z1};
}

ForceVector force_oracle(const ToolPose& pose, double stiffness) {
  const double normal = stiffness * std::pow(pose.depth_mm, kContactExponent);
  const auto a = tool_axis(pose);
  ForceVector f{normal * a[0], normal * a[1], normal * a[2]};
  const double lateral = std::hypot(a[0], a[1]);
  if (lateral > 1e-12) {
    const double tangential = kFrictionCoefficient * normal;
    f.fx += tangential * a[0] / lateral;
    f.fy += tangential * a[1] / lateral;
  }
  return f;
}

double StiffnessField::at(double x_mm, double y_mm) const {
  if (values.empty()) return 0.0;
  const auto cx = static_cast<std::int64_t>(std::floor(x_mm / cell_mm));
  const auto cy = static_cast<std::int64_t>(std::floor(y_mm / cell_mm));
  const auto n = static_cast<std::int64_t>(values.size());
  return values[static_cast<std::size_t>((((cx + cy) % n) + n) % n)];
}

void validate_spec(const PhantomSpec& spec) {
  require_positive(spec.fov_lateral_mm, "fov_lateral_mm");
  require_positive(spec.fov_axial_mm, "fov_axial_mm");
  for (int a = 0; a < 3; ++a) {
    if (spec.grid[a] <= 0) throw ConfigError("phantom.grid must have positive extents");
    if (spec.raw_grid[a] <= 0) throw ConfigError("phantom.raw_grid must have positive extents");
  }
  require_positive(spec.texture_wavelength_mm, "texture_wavelength_mm");
  require_nonnegative(spec.texture_amplitude_mm, "texture_amplitude_mm");
  require_positive(spec.surface_band_mm, "surface_band_mm");
  require_positive(spec.tissue_decay_mm, "tissue_decay_mm");
  require_positive(spec.tip_radius_mm, "tip_radius_mm");
  require_nonnegative(spec.tool_radius_mm, "tool_radius_mm");
  require_nonnegative(spec.speckle, "speckle");
  require_positive(spec.stiffness.cell_mm, "stiffness.cell_mm");
  if (spec.stiffness.values.empty()) throw ConfigError("phantom.stiffness.values must not be empty");
  for (double k : spec.stiffness.values) require_positive(k, "stiffness.values");
  if (spec.shadow_attenuation < 0.0 || spec.shadow_attenuation > 1.0) {
    throw ConfigError("phantom.shadow_attenuation must lie in [0, 1]");
  }
  if (spec.sample_size_mm < spec.fov_lateral_mm) throw ConfigError("phantom.sample_size_mm must cover the lateral FOV");
  const double floor_depth = spec.surface_depth_mm + spec.texture_amplitude_mm + kToolPoseLimits.depth.max;
  if (spec.surface_depth_mm < 0.0 || floor_depth >= spec.fov_axial_mm) {
    throw ConfigError("phantom.surface_depth_mm leaves no room for the deepest indentation");
  }
}

std::array<double, 2> contact_point(const PhantomSpec& spec) {
  return {0.5 * spec.fov_lateral_mm, 0.5 * spec.fov_lateral_mm};
}

double contact_stiffness(const PhantomSpec& spec, const RoiOffset& roi) {
  const auto c = contact_point(spec);
  return spec.stiffness.at(c[0] + roi.x_mm, c[1] + roi.y_mm);
}

Volume render_volume(const PhantomSpec& spec, const RoiOffset& roi, const std::optional<ToolPose>& pose,
                     std::uint64_t noise_stream) {
  validate_spec(spec);
  if (pose) validate_pose(*pose);

  const auto& grid = spec.grid;
  const double dx = spec.fov_lateral_mm / static_cast<double>(grid[0]);
  const double dy = spec.fov_lateral_mm / static_cast<double>(grid[1]);
  const double dz = spec.fov_axial_mm / static_cast<double>(grid[2]);
  Volume volume = Volume::zeros(grid, {dx, dy, dz});

  // Sub-samples per voxel so coarse grids integrate at the device pitch.
  std::array<std::int64_t, 3> sub{};
  for (int a = 0; a < 3; ++a) sub[a] = std::max<std::int64_t>(1, (spec.raw_grid[a] + grid[a] - 1) / grid[a]);
  const double inv_samples = 1.0 / static_cast<double>(sub[0] * sub[1] * sub[2]);

  const SurfaceRelief relief(spec);
  const std::optional<ToolFootprint> tool = pose ? std::optional<ToolFootprint>(ToolFootprint(spec, *pose)) : std::nullopt;
  const std::uint64_t noise_key = detail::mix_keys({spec.seed, noise_stream, 0x5eC1eULL});

  std::vector<double> depths(static_cast<std::size_t>(grid[2] * sub[2]));
  for (std::int64_t l = 0; l < grid[2]; ++l) {
    for (std::int64_t s = 0; s < sub[2]; ++s) {
      depths[l * sub[2] + s] = (static_cast<double>(l) + (static_cast<double>(s) + 0.5) / sub[2]) * dz;
    }
  }

  parallel_chunks(grid[1], [&](int, std::int64_t y0, std::int64_t y1) {
    std::vector<double> column(static_cast<std::size_t>(grid[2]));
    for (std::int64_t j = y0; j < y1; ++j) {
      for (std::int64_t i = 0; i < grid[0]; ++i) {
        std::fill(column.begin(), column.end(), 0.0);
        for (std::int64_t si = 0; si < sub[0]; ++si) {
          const double x = (static_cast<double>(i) + (static_cast<double>(si) + 0.5) / sub[0]) * dx;
          for (std::int64_t sj = 0; sj < sub[1]; ++sj) {
            const double y = (static_cast<double>(j) + (static_cast<double>(sj) + 0.5) / sub[1]) * dy;
            const double xs = x + roi.x_mm;
            const double ys = y + roi.y_mm;
            const double rest = relief.depth(xs, ys);
            const double indent = tool ? tool->indentation(x, y) : 0.0;
            const double surface = rest + indent;
            const double thickness = spec.fov_axial_mm - rest;
            const double stretch = thickness / (thickness - indent);  // deformed -> rest depth below surface
            const double k = spec.stiffness.at(xs, ys);
            const double layer_top = spec.layer_depth_mm;
            const double layer_bottom = layer_top + spec.layer_thickness_mm + spec.layer_thickness_per_k_mm * k;
            const double layer_value = spec.layer_brightness + spec.layer_brightness_per_k * k;
            const double transmission = tool ? tool->transmission(x, y) : 1.0;
            for (std::int64_t l = 0; l < grid[2]; ++l) {
              double acc = 0.0;
              for (std::int64_t s = 0; s < sub[2]; ++s) {
                const double z = depths[l * sub[2] + s];
                double value;
                if (z < surface) {
                  value = spec.background;
                } else if (z - surface < spec.surface_band_mm) {
                  value = spec.surface_brightness;
                } else {
                  const double below = (z - surface) * stretch;
                  value = spec.tissue_brightness * std::exp(-below / spec.tissue_decay_mm);
                  if (below >= layer_top && below < layer_bottom) value += layer_value;
                }
                acc += value;
              }
              column[l] += acc * transmission;
            }
          }
        }
        for (std::int64_t l = 0; l < grid[2]; ++l) {
          const auto idx = volume.index(i, j, l);
          const double factor = std::max(0.0, 1.0 + spec.speckle * detail::hashed_normal(noise_key, idx));
          volume.data[idx] = static_cast<float>(std::clamp(column[l] * inv_samples * factor, 0.0, 1.0));
        }
      }
    }
  });
  return volume;
}

void validate_plan(const AcquisitionPlan& plan) {
  if (plan.deformations_per_roi < 0) throw ConfigError("plan.deformations_per_roi must be >= 0");
  if (plan.roi_count < 0) throw ConfigError("plan.roi_count must be >= 0");
  if (!(plan.move_mm >= 0.0)) throw ConfigError("plan.move_mm must be >= 0");
  validate_pose_ranges(plan.pose_ranges);
}

std::vector<std::int64_t> Dataset::groups() const {
  std::vector<std::int64_t> g;
  g.reserve(pairs.size());
  for (const auto& p : pairs) g.push_back(p.roi_index);
  return g;
}

ToolPose sample_pose(const PoseRanges& ranges, std::uint64_t seed, std::int64_t roi, std::int64_t index) {
  std::mt19937_64 rng(detail::mix_keys({seed, static_cast<std::uint64_t>(roi), static_cast<std::uint64_t>(index), 0x9057ULL}));
  auto draw = [&rng](const Range& r) { return std::uniform_real_distribution<double>(r.min, r.max)(rng); };
  ToolPose pose;
  pose.theta_x_deg = draw(ranges.theta_x);
  pose.theta_y_deg = draw(ranges.theta_y);
  pose.theta_z_deg = draw(ranges.theta_z);
  pose.depth_mm = draw(ranges.depth);
  return pose;
}

std::vector<RoiOffset> roi_walk(const PhantomSpec& spec, const AcquisitionPlan& plan) {
  std::mt19937_64 rng(detail::mix_keys({plan.seed, 0x401ULL}));
  const double span = spec.sample_size_mm - spec.fov_lateral_mm;
  std::uniform_real_distribution<double> start(0.0, span);
  std::uniform_real_distribution<double> move(-plan.move_mm, plan.move_mm);
  // Reflect at the sample border so the FOV stays on the sample.
  auto reflect = [span](double v) {
    if (span <= 0.0) return 0.0;
    const double period = 2.0 * span;
    v = std::fmod(v, period);
    if (v < 0.0) v += period;
    return v <= span ? v : period - v;
  };
  std::vector<RoiOffset> offsets;
  offsets.reserve(static_cast<std::size_t>(plan.roi_count));
  RoiOffset pos{start(rng), start(rng)};
  for (std::int64_t m = 0; m < plan.roi_count; ++m) {
    if (m > 0) {
      const double mx = move(rng);
      const double my = move(rng);
      pos = {reflect(pos.x_mm + mx), reflect(pos.y_mm + my)};
    }
    offsets.push_back(pos);
  }
  return offsets;
}

Dataset run_protocol(const PhantomSpec& spec, const AcquisitionPlan& plan) {
  validate_spec(spec);
  validate_plan(plan);
  Dataset dataset;
  dataset.spec = spec;
  dataset.plan = plan;
  const std::int64_t L = plan.deformations_per_roi;
  const std::int64_t M = plan.roi_count;
  if (L == 0 || M == 0) return dataset;

  const auto offsets = roi_walk(spec, plan);
  const std::uint64_t ref_tag = ~std::uint64_t{0};
  std::vector<std::shared_ptr<const Volume>> references(static_cast<std::size_t>(M));
  dataset.pairs.resize(static_cast<std::size_t>(L * M));

  const std::int64_t total = M + L * M;
  auto work = [&](std::int64_t job) {
    if (job < M) {
      references[job] = std::make_shared<const Volume>(render_volume(
          spec, offsets[job], std::nullopt, detail::mix_keys({plan.seed, static_cast<std::uint64_t>(job), ref_tag})));
      return;
    }
    const std::int64_t id = job - M;
    const std::int64_t m = id / L;
    const std::int64_t l = id % L;
    auto& pair = dataset.pairs[id];
    pair.id = id;
    pair.roi_index = m;
    pair.roi = offsets[m];
    pair.pose = sample_pose(plan.pose_ranges, plan.seed, m, l);
    pair.stiffness = contact_stiffness(spec, pair.roi);
    pair.label = force_oracle(pair.pose, pair.stiffness);
    pair.deformed = std::make_shared<const Volume>(render_volume(
        spec, pair.roi, pair.pose,
        detail::mix_keys({plan.seed, static_cast<std::uint64_t>(m), static_cast<std::uint64_t>(l)})));
  };
  parallel_chunks(total, [&](int, std::int64_t j0, std::int64_t j1) {
    for (std::int64_t j = j0; j < j1; ++j) work(j);
  });
  for (auto& pair : dataset.pairs) pair.reference = references[pair.roi_index];
  return dataset;
}

}  // namespace octoforce
