#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "octoforce/ops.hpp"
#include "octoforce/tensor.hpp"

namespace octoforce {

struct BlockSpec {
  std::int64_t f_out = 32;
  int stride = 1;
  int bottleneck_ratio = 4;

  bool operator==(const BlockSpec&) const = default;
};

enum class ArchMode { volumetric_siamese, volumetric_single, planar_siamese };
enum class Combine { subtract, add };
enum class SurfaceRep { mip, depth };
enum class ModelKind { siamcnn, diffcnn_minus, diffcnn_plus, surfcnn_mip, surfcnn_depth };

std::string_view to_string(ArchMode mode);
std::string_view to_string(ModelKind kind);
ModelKind parse_model_kind(std::string_view name);  // ConfigError lists the valid names
ArchMode parse_arch_mode(std::string_view name);
const std::vector<ModelKind>& all_model_kinds();
ArchMode mode_for(ModelKind kind);
bool is_planar(ModelKind kind);

struct ArchSpec {
  std::int64_t input_extent = 64;
  std::int64_t init_channels = 16;
  std::vector<BlockSpec> path_blocks{{32, 2, 4}, {32, 1, 4}, {64, 2, 4}};
  std::vector<BlockSpec> joint_blocks{{128, 2, 4}, {128, 1, 4}, {256, 2, 4}, {256, 1, 4}, {256, 2, 4}, {256, 1, 4}};
  std::int64_t output_dim = 3;
  ArchMode mode = ArchMode::volumetric_siamese;
  bool share_weights = true;
  BatchNormOptions bn;

  std::size_t block_count() const { return path_blocks.size() + joint_blocks.size(); }
  bool operator==(const ArchSpec& o) const;
};

// Default schedule for a model kind: 64-voxel inputs, nine blocks, concat after three.
ArchSpec default_arch(ModelKind kind);

void validate_arch(const ArchSpec& spec);

// Weights of one pre-activation bottleneck block. `proj` is left undefined
// for an identity skip.
template <typename T>
struct BlockWeights {
  Tensor<T> bn1_gamma, bn1_beta, squeeze;
  Tensor<T> bn2_gamma, bn2_beta, conv;
  Tensor<T> bn3_gamma, bn3_beta, expand;
  Tensor<T> proj;
};

// BN-ReLU-1^3 squeeze, BN-ReLU-3^3 (stride), BN-ReLU-1^3 expand, plus the skip
// (identity, or a strided 1^3 projection of the pre-activated input). Rank-5
// inputs use 3D kernels, rank-4 inputs 2D kernels.
template <typename T>
Tensor<T> bottleneck_block(const Tensor<T>& x, int stride, const BlockWeights<T>& w,
                           std::array<BatchNormState<T>*, 3> states, Mode mode, const BatchNormOptions& bn = {});

// A built network: named parameters, named BN running statistics and the
// spec it was built from. Siamese forward passes reuse one parameter set for
// both paths unless `share_weights` is off; the shared tower then runs once on
// the stacked [reference; sample] batch.
template <typename T>
class Model {
 public:
  Model(ModelKind kind, ArchSpec spec, std::uint64_t seed);

  // Copies are deep: the copy owns fresh parameter tensors.
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;

  ModelKind kind() const noexcept { return kind_; }
  const ArchSpec& spec() const noexcept { return spec_; }
  int spatial_dims() const noexcept { return spec_.mode == ArchMode::planar_siamese ? 2 : 3; }
  bool siamese() const noexcept { return spec_.mode != ArchMode::volumetric_single; }

  // [N, E, E, E, 1] volumes or [N, E, E, 1] maps.
  Shape input_shape(std::int64_t batch) const;

  // -> [N, output_dim]. Throws ShapeError on mismatched or malformed inputs.
  Tensor<T> forward(const Tensor<T>& reference, const Tensor<T>& sample, Mode mode);

  // Output of the per-path stack (initial conv and path blocks). `path` 0 is
  // the reference path, 1 the sample path; single-path models accept only 0.
  Tensor<T> path_forward(const Tensor<T>& input, int path, Mode mode);

  // Network input of a single-path model: sample - reference or sample + reference.
  Tensor<T> combine_inputs(const Tensor<T>& reference, const Tensor<T>& sample) const;

  std::vector<Tensor<T>>& parameters() noexcept { return params_; }
  const std::vector<Tensor<T>>& parameters() const noexcept { return params_; }
  const std::vector<std::string>& parameter_names() const noexcept { return param_names_; }
  Tensor<T>& parameter(const std::string& name);

  std::vector<BatchNormState<T>>& bn_states() noexcept { return bn_; }
  const std::vector<BatchNormState<T>>& bn_states() const noexcept { return bn_; }
  const std::vector<std::string>& bn_names() const noexcept { return bn_names_; }

  std::int64_t count_params() const;

  // Spatial extent after the initial conv and after every block, in order.
  const std::vector<std::int64_t>& extent_schedule() const noexcept { return extents_; }
  // Input channel count of every block, in order (the first joint block sees the concatenation).
  const std::vector<std::int64_t>& block_input_channels() const noexcept { return block_in_; }

  void zero_grad();

 private:
  struct Conv {
    std::size_t kernel;
    int stride;
  };
  struct Norm {
    std::size_t gamma, beta, state;
  };
  struct Block {
    Norm bn1, bn2, bn3;
    Conv squeeze, spatial, expand;
    bool projected = false;
    Conv proj{};
  };
  struct Path {
    Conv init{};
    std::vector<Block> blocks;
  };

  std::size_t add_param(const std::string& name, Shape shape, double stddev, std::uint64_t seed);
  std::size_t add_constant(const std::string& name, Shape shape, T value);
  Norm add_norm(const std::string& name, std::int64_t channels);
  Conv add_conv(const std::string& name, int k, std::int64_t cin, std::int64_t cout, int stride, std::uint64_t seed);
  Block add_block(const std::string& name, std::int64_t cin, const BlockSpec& b, std::uint64_t seed);
  Path add_path(const std::string& prefix, std::uint64_t seed);

  Tensor<T> conv(const Tensor<T>& x, const Conv& c) const;
  Tensor<T> norm_relu(const Tensor<T>& x, const Norm& n, Mode mode);
  Tensor<T> run_block(const Tensor<T>& x, const Block& b, Mode mode);
  void check_input(const Tensor<T>& x, const char* what) const;

  ModelKind kind_;
  ArchSpec spec_;
  std::vector<Tensor<T>> params_;
  std::vector<std::string> param_names_;
  std::vector<BatchNormState<T>> bn_;
  std::vector<std::string> bn_names_;
  std::vector<Path> paths_;
  std::vector<Block> joint_;
  Norm head_norm_{};
  std::size_t dense_w_ = 0, dense_b_ = 0;
  std::vector<std::int64_t> extents_;
  std::vector<std::int64_t> block_in_;
};

extern template class Model<float>;
extern template class Model<double>;

// Builders set the spec's mode from the model kind.
template <typename T = float>
Model<T> build_siamcnn(const ArchSpec& spec, std::uint64_t seed = 1);
template <typename T = float>
Model<T> build_diffcnn(const ArchSpec& spec, Combine combine, std::uint64_t seed = 1);
template <typename T = float>
Model<T> build_surfcnn(const ArchSpec& spec, SurfaceRep representation, std::uint64_t seed = 1);
template <typename T = float>
Model<T> build_model(ModelKind kind, ArchSpec spec, std::uint64_t seed = 1);

template <typename T>
std::int64_t count_params(const Model<T>& model) {
  return model.count_params();
}

}  // namespace octoforce
