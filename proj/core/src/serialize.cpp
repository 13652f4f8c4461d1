#include "octoforce/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "octoforce/errors.hpp"

namespace octoforce {

namespace detail {

void type_error(const std::string& path, const char* expected) {
  throw ConfigError(path + ": expected " + expected);
}

void read_scalar(const Json& j, double& v, const std::string& path) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "inf") {
      v = std::numeric_limits<double>::infinity();
      return;
    }
    if (s == "-inf") {
      v = -std::numeric_limits<double>::infinity();
      return;
    }
  }
  if (!j.is_number()) type_error(path, "a number");
  v = j.get<double>();
}

void read_scalar(const Json& j, std::int64_t& v, const std::string& path) {
  if (!j.is_number_integer()) type_error(path, "an integer");
  if (j.is_number_unsigned() && j.get<std::uint64_t>() > static_cast<std::uint64_t>(std::numeric_limits<std::int64_t>::max())) {
    type_error(path, "a signed 64-bit integer");
  }
  v = j.get<std::int64_t>();
}

void read_scalar(const Json& j, int& v, const std::string& path) {
  std::int64_t wide = 0;
  read_scalar(j, wide, path);
  if (wide < std::numeric_limits<int>::min() || wide > std::numeric_limits<int>::max()) type_error(path, "a 32-bit integer");
  v = static_cast<int>(wide);
}

void read_scalar(const Json& j, std::uint64_t& v, const std::string& path) {
  if (j.is_number_unsigned()) {
    v = j.get<std::uint64_t>();
  } else if (j.is_number_integer() && j.get<std::int64_t>() >= 0) {
    v = static_cast<std::uint64_t>(j.get<std::int64_t>());
  } else {
    type_error(path, "a non-negative integer");
  }
}

void read_scalar(const Json& j, bool& v, const std::string& path) {
  if (!j.is_boolean()) type_error(path, "a boolean");
  v = j.get<bool>();
}

void read_scalar(const Json& j, std::string& v, const std::string& path) {
  if (!j.is_string()) type_error(path, "a string");
  v = j.get<std::string>();
}

ObjectReader::ObjectReader(const Json& j, std::string path) : json_(j), path_(std::move(path)) {
  if (!json_.is_object()) type_error(path_.empty() ? "<root>" : path_, "an object");
}

const Json* ObjectReader::raw(const char* key) {
  claimed_.emplace_back(key);
  auto it = json_.find(key);
  return it == json_.end() ? nullptr : &*it;
}

std::string ObjectReader::child(const char* key) const { return path_.empty() ? key : path_ + "." + key; }

void ObjectReader::done() const {
  for (auto it = json_.begin(); it != json_.end(); ++it) {
    if (std::find(claimed_.begin(), claimed_.end(), it.key()) == claimed_.end()) {
      throw ConfigError(child(it.key().c_str()) + ": unknown field");
    }
  }
}

}  // namespace detail

using detail::ObjectReader;

void to_json(Json& j, const Range& v) { j = Json::array({v.min, v.max}); }

void read_json(const Json& j, Range& v, const std::string& path) {
  std::array<double, 2> pair{};
  detail::read_any(j, pair, path);
  v = {pair[0], pair[1]};
}

void to_json(Json& j, const PoseRanges& v) {
  j = Json{{"theta_x", v.theta_x}, {"theta_y", v.theta_y}, {"theta_z", v.theta_z}, {"depth", v.depth}};
}

void read_json(const Json& j, PoseRanges& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("theta_x", v.theta_x).field("theta_y", v.theta_y).field("theta_z", v.theta_z).field("depth", v.depth);
  r.done();
}

void to_json(Json& j, const ToolPose& v) {
  j = Json{{"theta_x", v.theta_x_deg}, {"theta_y", v.theta_y_deg}, {"theta_z", v.theta_z_deg}, {"depth", v.depth_mm}};
}

void read_json(const Json& j, ToolPose& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("theta_x", v.theta_x_deg).field("theta_y", v.theta_y_deg).field("theta_z", v.theta_z_deg).field("depth", v.depth_mm);
  r.done();
}

void to_json(Json& j, const ForceVector& v) { j = Json::array({v.fx, v.fy, v.fz}); }

void read_json(const Json& j, ForceVector& v, const std::string& path) {
  std::array<double, 3> f{};
  detail::read_any(j, f, path);
  v = {f[0], f[1], f[2]};
}

void to_json(Json& j, const RoiOffset& v) { j = Json::array({v.x_mm, v.y_mm}); }

void read_json(const Json& j, RoiOffset& v, const std::string& path) {
  std::array<double, 2> xy{};
  detail::read_any(j, xy, path);
  v = {xy[0], xy[1]};
}

void to_json(Json& j, const StiffnessField& v) { j = Json{{"values", v.values}, {"cell_mm", v.cell_mm}}; }

void read_json(const Json& j, StiffnessField& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("values", v.values).field("cell_mm", v.cell_mm);
  r.done();
}

void to_json(Json& j, const PhantomSpec& v) {
  j = Json{{"fov_lateral_mm", v.fov_lateral_mm},
           {"fov_axial_mm", v.fov_axial_mm},
           {"grid", v.grid},
           {"raw_grid", v.raw_grid},
           {"surface_depth_mm", v.surface_depth_mm},
           {"texture_amplitude_mm", v.texture_amplitude_mm},
           {"texture_wavelength_mm", v.texture_wavelength_mm},
           {"texture_components", v.texture_components},
           {"background", v.background},
           {"surface_band_mm", v.surface_band_mm},
           {"surface_brightness", v.surface_brightness},
           {"tissue_brightness", v.tissue_brightness},
           {"tissue_decay_mm", v.tissue_decay_mm},
           {"stiffness", v.stiffness},
           {"layer_depth_mm", v.layer_depth_mm},
           {"layer_brightness", v.layer_brightness},
           {"layer_brightness_per_k", v.layer_brightness_per_k},
           {"layer_thickness_mm", v.layer_thickness_mm},
           {"layer_thickness_per_k_mm", v.layer_thickness_per_k_mm},
           {"tip_radius_mm", v.tip_radius_mm},
           {"tip_elongation", v.tip_elongation},
           {"tip_shift_gain", v.tip_shift_gain},
           {"tool_radius_mm", v.tool_radius_mm},
           {"shadow_taper", v.shadow_taper},
           {"shaft_height_mm", v.shaft_height_mm},
           {"shadow_attenuation", v.shadow_attenuation},
           {"speckle", v.speckle},
           {"sample_size_mm", v.sample_size_mm},
           {"seed", v.seed}};
}

void read_json(const Json& j, PhantomSpec& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("fov_lateral_mm", v.fov_lateral_mm)
      .field("fov_axial_mm", v.fov_axial_mm)
      .field("grid", v.grid)
      .field("raw_grid", v.raw_grid)
      .field("surface_depth_mm", v.surface_depth_mm)
      .field("texture_amplitude_mm", v.texture_amplitude_mm)
      .field("texture_wavelength_mm", v.texture_wavelength_mm)
      .field("texture_components", v.texture_components)
      .field("background", v.background)
      .field("surface_band_mm", v.surface_band_mm)
      .field("surface_brightness", v.surface_brightness)
      .field("tissue_brightness", v.tissue_brightness)
      .field("tissue_decay_mm", v.tissue_decay_mm)
      .field("stiffness", v.stiffness)
      .field("layer_depth_mm", v.layer_depth_mm)
      .field("layer_brightness", v.layer_brightness)
      .field("layer_brightness_per_k", v.layer_brightness_per_k)
      .field("layer_thickness_mm", v.layer_thickness_mm)
      .field("layer_thickness_per_k_mm", v.layer_thickness_per_k_mm)
      .field("tip_radius_mm", v.tip_radius_mm)
      .field("tip_elongation", v.tip_elongation)
      .field("tip_shift_gain", v.tip_shift_gain)
      .field("tool_radius_mm", v.tool_radius_mm)
      .field("shadow_taper", v.shadow_taper)
      .field("shaft_height_mm", v.shaft_height_mm)
      .field("shadow_attenuation", v.shadow_attenuation)
      .field("speckle", v.speckle)
      .field("sample_size_mm", v.sample_size_mm)
      .field("seed", v.seed);
  r.done();
}

void to_json(Json& j, const AcquisitionPlan& v) {
  j = Json{{"deformations_per_roi", v.deformations_per_roi},
           {"roi_count", v.roi_count},
           {"move_mm", v.move_mm},
           {"pose_ranges", v.pose_ranges},
           {"seed", v.seed}};
}

void read_json(const Json& j, AcquisitionPlan& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("deformations_per_roi", v.deformations_per_roi)
      .field("roi_count", v.roi_count)
      .field("move_mm", v.move_mm)
      .field("pose_ranges", v.pose_ranges)
      .field("seed", v.seed);
  r.done();
}

void to_json(Json& j, const SplitSpec& v) {
  j = Json{{"train", v.train}, {"val", v.val}, {"test", v.test}, {"seed", v.seed}, {"group_aware", v.group_aware}};
}

void read_json(const Json& j, SplitSpec& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("train", v.train).field("val", v.val).field("test", v.test).field("seed", v.seed).field("group_aware", v.group_aware);
  r.done();
}

void to_json(Json& j, const LabelScaler& v) { j = Json{{"min", v.min}, {"max", v.max}}; }

void read_json(const Json& j, LabelScaler& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("min", v.min).field("max", v.max);
  r.done();
  if (v.min.size() != v.max.size()) throw ConfigError(path + ": min and max lengths differ");
}

Json number_or_inf(double v) {
  if (std::isinf(v)) return v > 0 ? Json("inf") : Json("-inf");
  return Json(v);
}

void to_json(Json& j, const BlockSpec& v) {
  j = Json{{"f_out", v.f_out}, {"stride", v.stride}, {"bottleneck_ratio", v.bottleneck_ratio}};
}

void read_json(const Json& j, BlockSpec& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("f_out", v.f_out).field("stride", v.stride).field("bottleneck_ratio", v.bottleneck_ratio);
  r.done();
}

void to_json(Json& j, const ArchSpec& v) {
  j = Json{{"input_extent", v.input_extent},
           {"init_channels", v.init_channels},
           {"path_blocks", v.path_blocks},
           {"joint_blocks", v.joint_blocks},
           {"output_dim", v.output_dim},
           {"mode", std::string(to_string(v.mode))},
           {"share_weights", v.share_weights},
           {"bn", Json{{"eps", v.bn.eps}, {"momentum", v.bn.momentum}}}};
}

void read_json(const Json& j, ArchSpec& v, const std::string& path) {
  ObjectReader r(j, path);
  std::string mode(to_string(v.mode));
  r.field("input_extent", v.input_extent)
      .field("init_channels", v.init_channels)
      .field("path_blocks", v.path_blocks)
      .field("joint_blocks", v.joint_blocks)
      .field("output_dim", v.output_dim)
      .field("mode", mode)
      .field("share_weights", v.share_weights);
  if (const Json* bn = r.raw("bn")) {
    ObjectReader b(*bn, r.child("bn"));
    b.field("eps", v.bn.eps).field("momentum", v.bn.momentum);
    b.done();
  }
  r.done();
  v.mode = parse_arch_mode(mode);
}

void to_json(Json& j, const TrainConfig& v) {
  j = Json{{"lr", v.lr},
           {"batch_size", v.batch_size},
           {"max_steps", v.max_steps},
           {"eval_interval", v.eval_interval},
           {"patience", v.patience},
           {"min_rel_improvement", number_or_inf(v.min_rel_improvement)},
           {"max_halvings", v.max_halvings},
           {"seed", v.seed},
           {"beta1", v.beta1},
           {"beta2", v.beta2},
           {"eps", v.eps}};
}

void read_json(const Json& j, TrainConfig& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("lr", v.lr)
      .field("batch_size", v.batch_size)
      .field("max_steps", v.max_steps)
      .field("eval_interval", v.eval_interval)
      .field("patience", v.patience)
      .field("min_rel_improvement", v.min_rel_improvement)
      .field("max_halvings", v.max_halvings)
      .field("seed", v.seed)
      .field("beta1", v.beta1)
      .field("beta2", v.beta2)
      .field("eps", v.eps);
  r.done();
}

void to_json(Json& j, const InputSpec& v) {
  j = Json{{"downsample", v.downsample == DownsampleMethod::block_mean ? "block_mean" : "stride"}};
}

void read_json(const Json& j, InputSpec& v, const std::string& path) {
  ObjectReader r(j, path);
  std::string method = v.downsample == DownsampleMethod::block_mean ? "block_mean" : "stride";
  r.field("downsample", method);
  r.done();
  if (method == "block_mean") {
    v.downsample = DownsampleMethod::block_mean;
  } else if (method == "stride") {
    v.downsample = DownsampleMethod::stride;
  } else {
    throw ConfigError(path + ".downsample: unknown method '" + method + "' (valid: block_mean, stride)");
  }
}

void to_json(Json& j, const TrainState& v) {
  j = Json{{"step", v.step},
           {"lr", v.lr},
           {"best_val", number_or_inf(v.best_val)},
           {"best_step", v.best_step},
           {"plateau_ref", number_or_inf(v.plateau_ref)},
           {"evals_without_improvement", v.evals_without_improvement},
           {"halvings_without_improvement", v.halvings_without_improvement},
           {"evals", v.evals},
           {"stopped", v.stopped},
           {"rng", v.rng},
           {"epoch_order", v.epoch_order},
           {"epoch_pos", v.epoch_pos}};
}

void read_json(const Json& j, TrainState& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("step", v.step)
      .field("lr", v.lr)
      .field("best_val", v.best_val)
      .field("best_step", v.best_step)
      .field("plateau_ref", v.plateau_ref)
      .field("evals_without_improvement", v.evals_without_improvement)
      .field("halvings_without_improvement", v.halvings_without_improvement)
      .field("evals", v.evals)
      .field("stopped", v.stopped)
      .field("rng", v.rng)
      .field("epoch_order", v.epoch_order)
      .field("epoch_pos", v.epoch_pos);
  r.done();
}

void to_json(Json& j, const TrainLogRecord& v) {
  j = Json{{"step", v.step}, {"train_loss", v.train_loss}, {"val_mae_N", v.val_mae_n}, {"lr", v.lr}};
}

void read_json(const Json& j, TrainLogRecord& v, const std::string& path) {
  ObjectReader r(j, path);
  r.field("step", v.step).field("train_loss", v.train_loss).field("val_mae_N", v.val_mae_n).field("lr", v.lr);
  r.done();
}

}  // namespace octoforce
