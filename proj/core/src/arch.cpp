#include "octoforce/arch.hpp"

#include <array>
#include <cmath>

#include "octoforce/errors.hpp"
#include "random_util.hpp"

namespace octoforce {

namespace {

constexpr std::array<std::pair<ModelKind, std::string_view>, 5> kKindNames{{
    {ModelKind::siamcnn, "siamcnn"},
    {ModelKind::diffcnn_minus, "diffcnn-"},
    {ModelKind::diffcnn_plus, "diffcnn+"},
    {ModelKind::surfcnn_mip, "surfcnn-mip"},
    {ModelKind::surfcnn_depth, "surfcnn-depth"},
}};

constexpr std::array<std::pair<ArchMode, std::string_view>, 3> kModeNames{{
    {ArchMode::volumetric_siamese, "volumetric-siamese"},
    {ArchMode::volumetric_single, "volumetric-single"},
    {ArchMode::planar_siamese, "planar-siamese"},
}};

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::int64_t ceil_div(std::int64_t a, std::int64_t b) { return (a + b - 1) / b; }

}  // namespace

std::string_view to_string(ModelKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "unknown";
}

std::string_view to_string(ArchMode mode) {
  for (const auto& [m, name] : kModeNames) {
    if (m == mode) return name;
  }
  return "unknown";
}

ModelKind parse_model_kind(std::string_view name) {
  std::string valid;
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
    valid += (valid.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError("unknown model '" + std::string(name) + "' (valid: " + valid + ")");
}

ArchMode parse_arch_mode(std::string_view name) {
  std::string valid;
  for (const auto& [m, n] : kModeNames) {
    if (n == name) return m;
    valid += (valid.empty() ? "" : ", ") + std::string(n);
  }
  throw ConfigError("unknown arch mode '" + std::string(name) + "' (valid: " + valid + ")");
}

const std::vector<ModelKind>& all_model_kinds() {
  static const std::vector<ModelKind> kinds{ModelKind::siamcnn, ModelKind::diffcnn_minus, ModelKind::diffcnn_plus,
                                            ModelKind::surfcnn_mip, ModelKind::surfcnn_depth};
  return kinds;
}

ArchMode mode_for(ModelKind kind) {
  switch (kind) {
    case ModelKind::siamcnn:
      return ArchMode::volumetric_siamese;
    case ModelKind::diffcnn_minus:
    case ModelKind::diffcnn_plus:
      return ArchMode::volumetric_single;
    case ModelKind::surfcnn_mip:
    case ModelKind::surfcnn_depth:
      return ArchMode::planar_siamese;
  }
  return ArchMode::volumetric_siamese;
}

bool is_planar(ModelKind kind) { return mode_for(kind) == ArchMode::planar_siamese; }

bool ArchSpec::operator==(const ArchSpec& o) const {
  return input_extent == o.input_extent && init_channels == o.init_channels && path_blocks == o.path_blocks &&
         joint_blocks == o.joint_blocks && output_dim == o.output_dim && mode == o.mode &&
         share_weights == o.share_weights && bn.eps == o.bn.eps && bn.momentum == o.bn.momentum;
}

ArchSpec default_arch(ModelKind kind) {
  ArchSpec spec;
  spec.mode = mode_for(kind);
  return spec;
}

void validate_arch(const ArchSpec& spec) {
  if (spec.input_extent < 1) throw ConfigError("arch.input_extent must be >= 1");
  if (spec.init_channels < 1) throw ConfigError("arch.init_channels: input channel count of zero");
  if (spec.output_dim < 1) throw ConfigError("arch.output_dim must be >= 1");
  if (!(spec.bn.eps > 0.0)) throw ConfigError("arch.bn.eps must be positive");
  if (!(spec.bn.momentum >= 0.0 && spec.bn.momentum <= 1.0)) throw ConfigError("arch.bn.momentum must lie in [0, 1]");
  auto check = [](const std::vector<BlockSpec>& blocks, const char* field) {
    for (std::size_t i = 0; i < blocks.size(); ++i) {
      const auto& b = blocks[i];
      const std::string where = std::string("arch.") + field + "[" + std::to_string(i) + "]";
      if (b.stride != 1 && b.stride != 2) throw ConfigError(where + ".stride must be 1 or 2");
      if (b.bottleneck_ratio < 1) throw ConfigError(where + ".bottleneck_ratio must be >= 1");
      if (b.f_out < 1 || b.f_out % b.bottleneck_ratio != 0) {
        throw ConfigError(where + ".f_out must be a positive multiple of bottleneck_ratio");
      }
    }
  };
  check(spec.path_blocks, "path_blocks");
  check(spec.joint_blocks, "joint_blocks");
}

template <typename T>
Model<T>::Model(ModelKind kind, ArchSpec spec, std::uint64_t seed) : kind_(kind), spec_(std::move(spec)) {
  validate_arch(spec_);
  if (spec_.mode != mode_for(kind_)) {
    throw ConfigError("arch.mode " + std::string(to_string(spec_.mode)) + " does not fit model " +
                      std::string(to_string(kind_)));
  }
  if (siamese() && !spec_.share_weights) {
    paths_.push_back(add_path("ref.", seed));
    paths_.push_back(add_path("sample.", seed));
  } else {
    paths_.push_back(add_path("path.", seed));
  }

  std::int64_t channels = spec_.path_blocks.empty() ? spec_.init_channels : spec_.path_blocks.back().f_out;
  if (siamese()) channels *= 2;
  for (std::size_t j = 0; j < spec_.joint_blocks.size(); ++j) {
    joint_.push_back(add_block("joint.block" + std::to_string(j), channels, spec_.joint_blocks[j], seed));
    channels = spec_.joint_blocks[j].f_out;
  }
  head_norm_ = add_norm("head.bn", channels);
  dense_w_ = add_param("head.dense.weight", Shape{channels, spec_.output_dim}, std::sqrt(1.0 / channels), seed);
  // Scaled labels live in [0, 1]; start the regression at the middle of that range.
  dense_b_ = add_constant("head.dense.bias", Shape{spec_.output_dim}, T(0.5));

  channels = spec_.init_channels;
  for (const auto& b : spec_.path_blocks) {
    block_in_.push_back(channels);
    channels = b.f_out;
  }
  if (siamese()) channels *= 2;
  for (const auto& b : spec_.joint_blocks) {
    block_in_.push_back(channels);
    channels = b.f_out;
  }

  std::int64_t extent = spec_.input_extent;
  extents_.push_back(extent);
  for (const auto* blocks : {&spec_.path_blocks, &spec_.joint_blocks}) {
    for (const auto& b : *blocks) {
      extent = ceil_div(extent, b.stride);
      extents_.push_back(extent);
    }
  }
}

template <typename T>
Model<T>::Model(const Model& other)
    : kind_(other.kind_),
      spec_(other.spec_),
      param_names_(other.param_names_),
      bn_(other.bn_),
      bn_names_(other.bn_names_),
      paths_(other.paths_),
      joint_(other.joint_),
      head_norm_(other.head_norm_),
      dense_w_(other.dense_w_),
      dense_b_(other.dense_b_),
      extents_(other.extents_),
      block_in_(other.block_in_) {
  params_.reserve(other.params_.size());
  for (const auto& p : other.params_) params_.push_back(p.detach(true));
}

template <typename T>
Model<T>& Model<T>::operator=(const Model& other) {
  if (this != &other) {
    Model copy(other);
    *this = std::move(copy);
  }
  return *this;
}

template <typename T>
std::size_t Model<T>::add_param(const std::string& name, Shape shape, double stddev, std::uint64_t seed) {
  const std::uint64_t stream = detail::mix_keys({seed, fnv1a(name)});
  std::vector<T> values(static_cast<std::size_t>(shape.numel()));
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = static_cast<T>(stddev * detail::hashed_normal(stream, i));
  params_.emplace_back(std::move(shape), std::move(values), true);
  param_names_.push_back(name);
  return params_.size() - 1;
}

template <typename T>
std::size_t Model<T>::add_constant(const std::string& name, Shape shape, T value) {
  params_.push_back(Tensor<T>::full(std::move(shape), value, true));
  param_names_.push_back(name);
  return params_.size() - 1;
}

template <typename T>
typename Model<T>::Norm Model<T>::add_norm(const std::string& name, std::int64_t channels) {
  Norm n{};
  n.gamma = add_constant(name + ".gamma", Shape{channels}, T(1));
  n.beta = add_constant(name + ".beta", Shape{channels}, T(0));
  bn_.emplace_back(static_cast<std::size_t>(channels));
  bn_names_.push_back(name);
  n.state = bn_.size() - 1;
  return n;
}

template <typename T>
typename Model<T>::Conv Model<T>::add_conv(const std::string& name, int k, std::int64_t cin, std::int64_t cout,
                                           int stride, std::uint64_t seed) {
  std::vector<std::int64_t> dims(static_cast<std::size_t>(spatial_dims()), k);
  dims.push_back(cin);
  dims.push_back(cout);
  const double fan_in = std::pow(k, spatial_dims()) * static_cast<double>(cin);
  return Conv{add_param(name + ".kernel", Shape(std::move(dims)), std::sqrt(2.0 / fan_in), seed), stride};
}

template <typename T>
typename Model<T>::Block Model<T>::add_block(const std::string& name, std::int64_t cin, const BlockSpec& b,
                                             std::uint64_t seed) {
  if (cin < 1) throw ShapeError(name + ": input channel count of zero");
  const std::int64_t mid = b.f_out / b.bottleneck_ratio;
  Block block{};
  block.bn1 = add_norm(name + ".bn1", cin);
  block.squeeze = add_conv(name + ".squeeze", 1, cin, mid, 1, seed);
  block.bn2 = add_norm(name + ".bn2", mid);
  block.spatial = add_conv(name + ".conv", 3, mid, mid, b.stride, seed);
  block.bn3 = add_norm(name + ".bn3", mid);
  block.expand = add_conv(name + ".expand", 1, mid, b.f_out, 1, seed);
  block.projected = b.stride != 1 || cin != b.f_out;
  if (block.projected) block.proj = add_conv(name + ".proj", 1, cin, b.f_out, b.stride, seed);
  return block;
}

template <typename T>
typename Model<T>::Path Model<T>::add_path(const std::string& prefix, std::uint64_t seed) {
  Path path;
  path.init = add_conv(prefix + "init", 3, 1, spec_.init_channels, 1, seed);
  std::int64_t channels = spec_.init_channels;
  for (std::size_t i = 0; i < spec_.path_blocks.size(); ++i) {
    path.blocks.push_back(add_block(prefix + "block" + std::to_string(i), channels, spec_.path_blocks[i], seed));
    channels = spec_.path_blocks[i].f_out;
  }
  return path;
}

template <typename T>
Shape Model<T>::input_shape(std::int64_t batch) const {
  const auto e = spec_.input_extent;
  return spatial_dims() == 3 ? Shape{batch, e, e, e, 1} : Shape{batch, e, e, 1};
}

template <typename T>
void Model<T>::check_input(const Tensor<T>& x, const char* what) const {
  if (!x.defined()) throw ShapeError(std::string(what) + " is undefined");
  const auto& s = x.shape();
  const auto expected = input_shape(s.rank() > 0 ? s[0] : 0);
  if (s != expected) throw ShapeError(std::string(what) + " has shape " + s.str() + ", expected " + expected.str());
}

template <typename T>
Tensor<T> Model<T>::conv(const Tensor<T>& x, const Conv& c) const {
  return spatial_dims() == 3 ? conv3d(x, params_[c.kernel], Tensor<T>{}, c.stride)
                             : conv2d(x, params_[c.kernel], Tensor<T>{}, c.stride);
}

template <typename T>
Tensor<T> Model<T>::norm_relu(const Tensor<T>& x, const Norm& n, Mode mode) {
  return relu(batch_norm(x, params_[n.gamma], params_[n.beta], bn_[n.state], mode, spec_.bn));
}

template <typename T>
Tensor<T> bottleneck_block(const Tensor<T>& x, int stride, const BlockWeights<T>& w,
                           std::array<BatchNormState<T>*, 3> states, Mode mode, const BatchNormOptions& bn) {
  if (!x.defined() || x.shape().rank() < 4 || x.shape().rank() > 5) throw ShapeError("bottleneck_block: expected a rank-4 or rank-5 input");
  if (x.shape().channels() == 0) throw ShapeError("bottleneck_block: input channel count of zero");
  const bool volumetric = x.shape().rank() == 5;
  auto conv = [&](const Tensor<T>& in, const Tensor<T>& k, int s) {
    return volumetric ? conv3d(in, k, Tensor<T>{}, s) : conv2d(in, k, Tensor<T>{}, s);
  };
  auto norm_relu = [&](const Tensor<T>& in, const Tensor<T>& g, const Tensor<T>& b, BatchNormState<T>& st) {
    return relu(batch_norm(in, g, b, st, mode, bn));
  };
  const Tensor<T> pre = norm_relu(x, w.bn1_gamma, w.bn1_beta, *states[0]);
  const Tensor<T> skip = w.proj.defined() ? conv(pre, w.proj, stride) : x;
  Tensor<T> h = conv(pre, w.squeeze, 1);
  h = conv(norm_relu(h, w.bn2_gamma, w.bn2_beta, *states[1]), w.conv, stride);
  h = conv(norm_relu(h, w.bn3_gamma, w.bn3_beta, *states[2]), w.expand, 1);
  return add(h, skip);
}

template <typename T>
Tensor<T> Model<T>::run_block(const Tensor<T>& x, const Block& b, Mode mode) {
  BlockWeights<T> w{params_[b.bn1.gamma], params_[b.bn1.beta], params_[b.squeeze.kernel],
                    params_[b.bn2.gamma], params_[b.bn2.beta], params_[b.spatial.kernel],
                    params_[b.bn3.gamma], params_[b.bn3.beta], params_[b.expand.kernel],
                    b.projected ? params_[b.proj.kernel] : Tensor<T>{}};
  return bottleneck_block(x, b.spatial.stride, w, {&bn_[b.bn1.state], &bn_[b.bn2.state], &bn_[b.bn3.state]}, mode,
                          spec_.bn);
}

template <typename T>
Tensor<T> Model<T>::path_forward(const Tensor<T>& input, int path, Mode mode) {
  if (path < 0 || path > 1 || (!siamese() && path != 0)) throw ShapeError("invalid path index " + std::to_string(path));
  check_input(input, "path input");
  const Path& p = paths_[paths_.size() > 1 ? static_cast<std::size_t>(path) : 0];
  Tensor<T> x = conv(input, p.init);
  for (const auto& b : p.blocks) x = run_block(x, b, mode);
  return x;
}

template <typename T>
Tensor<T> Model<T>::combine_inputs(const Tensor<T>& reference, const Tensor<T>& sample) const {
  return kind_ == ModelKind::diffcnn_plus ? add(sample, reference) : sub(sample, reference);
}

template <typename T>
Tensor<T> Model<T>::forward(const Tensor<T>& reference, const Tensor<T>& sample, Mode mode) {
  check_input(reference, "reference");
  check_input(sample, "sample");
  if (reference.shape() != sample.shape()) {
    throw ShapeError("reference " + reference.shape().str() + " and sample " + sample.shape().str() + " differ");
  }
  Tensor<T> x;
  if (siamese() && paths_.size() == 1) {
    // One tower over the stacked pair, so shared BN layers see (and track) both inputs.
    const std::int64_t n = reference.shape()[0];
    const Tensor<T> both = path_forward(concat_batch(reference, sample), 0, mode);
    x = concat_channels(slice_batch(both, 0, n), slice_batch(both, n, 2 * n));
  } else if (siamese()) {
    x = concat_channels(path_forward(reference, 0, mode), path_forward(sample, 1, mode));
  } else {
    x = path_forward(combine_inputs(reference, sample), 0, mode);
  }
  for (const auto& b : joint_) x = run_block(x, b, mode);
  x = global_avg_pool(norm_relu(x, head_norm_, mode));
  return dense(x, params_[dense_w_], params_[dense_b_]);
}

template <typename T>
Tensor<T>& Model<T>::parameter(const std::string& name) {
  for (std::size_t i = 0; i < param_names_.size(); ++i) {
    if (param_names_[i] == name) return params_[i];
  }
  throw ConfigError("no parameter named '" + name + "'");
}

template <typename T>
std::int64_t Model<T>::count_params() const {
  std::int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

template <typename T>
void Model<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template Tensor<float> bottleneck_block(const Tensor<float>&, int, const BlockWeights<float>&,
                                         std::array<BatchNormState<float>*, 3>, Mode, const BatchNormOptions&);
template Tensor<double> bottleneck_block(const Tensor<double>&, int, const BlockWeights<double>&,
                                          std::array<BatchNormState<double>*, 3>, Mode, const BatchNormOptions&);
template class Model<float>;
template class Model<double>;

template <typename T>
Model<T> build_model(ModelKind kind, ArchSpec spec, std::uint64_t seed) {
  spec.mode = mode_for(kind);
  return Model<T>(kind, std::move(spec), seed);
}

template <typename T>
Model<T> build_siamcnn(const ArchSpec& spec, std::uint64_t seed) {
  return build_model<T>(ModelKind::siamcnn, spec, seed);
}

template <typename T>
Model<T> build_diffcnn(const ArchSpec& spec, Combine combine, std::uint64_t seed) {
  return build_model<T>(combine == Combine::subtract ? ModelKind::diffcnn_minus : ModelKind::diffcnn_plus, spec, seed);
}

template <typename T>
Model<T> build_surfcnn(const ArchSpec& spec, SurfaceRep representation, std::uint64_t seed) {
  return build_model<T>(representation == SurfaceRep::mip ? ModelKind::surfcnn_mip : ModelKind::surfcnn_depth, spec, seed);
}


#define OCTOFORCE_INSTANTIATE_BUILDERS(T)                                        \
  template Model<T> build_siamcnn<T>(const ArchSpec&, std::uint64_t);            \
  template Model<T> build_diffcnn<T>(const ArchSpec&, Combine, std::uint64_t);   \
  template Model<T> build_surfcnn<T>(const ArchSpec&, SurfaceRep, std::uint64_t); \
  template Model<T> build_model<T>(ModelKind, ArchSpec, std::uint64_t);

OCTOFORCE_INSTANTIATE_BUILDERS(float)
OCTOFORCE_INSTANTIATE_BUILDERS(double)

}  // namespace octoforce
