#include "octoforce/trainer.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <optional>
#include <random>
#include <sstream>

#include "octoforce/autodiff.hpp"
#include "octoforce/errors.hpp"
#include "octoforce/serialize.hpp"
#include "random_util.hpp"

namespace octoforce {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

void validate_train_config(const TrainConfig& c) {
  if (!(c.lr > 0.0) || !std::isfinite(c.lr)) throw ConfigError("train.lr must be positive");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (c.max_steps < 0) throw ConfigError("train.max_steps must be >= 0");
  if (c.eval_interval < 1) throw ConfigError("train.eval_interval must be >= 1");
  if (c.patience < 1) throw ConfigError("train.patience must be >= 1");
  if (!(c.min_rel_improvement >= 0.0)) throw ConfigError("train.min_rel_improvement must be >= 0");
  if (c.max_halvings < 0) throw ConfigError("train.max_halvings must be >= 0");
  if (!(c.beta1 >= 0.0 && c.beta1 < 1.0)) throw ConfigError("train.beta1 must lie in [0, 1)");
  if (!(c.beta2 >= 0.0 && c.beta2 < 1.0)) throw ConfigError("train.beta2 must lie in [0, 1)");
  if (!(c.eps > 0.0)) throw ConfigError("train.eps must be positive");
}

std::vector<float> prepare_input(const Volume& volume, ModelKind kind, std::int64_t extent, const InputSpec& spec) {
  const Extents3 target{extent, extent, extent};
  const Volume scaled = volume.extents == target ? volume : downsample(volume, target, spec.downsample);
  if (!is_planar(kind)) return to_network_layout(scaled);
  const auto maps = extract_surfaces(scaled);
  const auto& map = kind == ModelKind::surfcnn_mip ? maps.mip : maps.depth;
  std::vector<float> out(map.size());
  for (std::int64_t y = 0; y < maps.height; ++y) {
    for (std::int64_t x = 0; x < maps.width; ++x) out[x * maps.height + y] = map[x + maps.width * y];
  }
  return out;
}

std::vector<Example> prepare_examples(const Dataset& dataset, const std::vector<std::int64_t>& indices, ModelKind kind,
                                      std::int64_t extent, const InputSpec& spec) {
  std::map<const Volume*, InputBuffer> cache;
  auto input_of = [&](const std::shared_ptr<const Volume>& v) {
    if (!v) throw FormatError("pair without a volume");
    auto it = cache.find(v.get());
    if (it == cache.end()) {
      it = cache.emplace(v.get(), std::make_shared<const std::vector<float>>(prepare_input(*v, kind, extent, spec))).first;
    }
    return it->second;
  };
  std::vector<Example> out;
  out.reserve(indices.size());
  for (auto i : indices) {
    if (i < 0 || static_cast<std::size_t>(i) >= dataset.pairs.size()) throw ShapeError("pair index out of range");
    const auto& p = dataset.pairs[static_cast<std::size_t>(i)];
    out.push_back(Example{input_of(p.reference), input_of(p.deformed), to_array(p.label)});
  }
  return out;
}

Checkpoint::Checkpoint(ModelKind kind_, ArchSpec arch_, std::uint64_t model_seed_)
    : kind(kind_), arch(std::move(arch_)), model_seed(model_seed_), model(build_model<float>(kind_, arch, model_seed_)) {
  arch = model.spec();
}

Checkpoint init_checkpoint(ModelKind kind, const ArchSpec& arch, const TrainConfig& config) {
  validate_train_config(config);
  Checkpoint cp(kind, arch, detail::mix_keys({config.seed, 0x6d6f64656cULL}));
  cp.config = config;
  cp.state.lr = config.lr;
  return cp;
}

namespace {

Tensorf batch_tensor(const Model<float>& model, const std::vector<const Example*>& batch, bool sample) {
  const Shape shape = model.input_shape(static_cast<std::int64_t>(batch.size()));
  const std::size_t item = static_cast<std::size_t>(shape.numel()) / batch.size();
  std::vector<float> values(static_cast<std::size_t>(shape.numel()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& src = sample ? batch[b]->sample : batch[b]->reference;
    if (!src || src->size() != item) throw ShapeError("example input does not match the model input extent");
    std::copy(src->begin(), src->end(), values.begin() + static_cast<std::ptrdiff_t>(b * item));
  }
  return Tensorf(shape, std::move(values));
}

std::string engine_state(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

std::mt19937_64 engine_from(const std::string& state, std::uint64_t seed) {
  std::mt19937_64 rng(detail::mix_keys({seed, 0x64617461ULL}));
  if (!state.empty()) {
    std::istringstream is(state);
    is >> rng;
    if (!is) throw FormatError("corrupt data-order state");
  }
  return rng;
}

void reshuffle(std::vector<std::int64_t>& order, std::size_t n, std::mt19937_64& rng) {
  order.resize(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = static_cast<std::int64_t>(i);
  for (std::size_t i = n; i > 1; --i) {
    const std::uint64_t bound = i;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() - std::numeric_limits<std::uint64_t>::max() % bound;
    std::uint64_t r;
    do {
      r = rng();
    } while (r >= limit);
    std::swap(order[i - 1], order[static_cast<std::size_t>(r % bound)]);
  }
}

}  // namespace

std::array<double, 3> predict(Model<float>& model, const LabelScaler& scaler, const Example& example) {
  NoGradGuard guard;
  const std::vector<const Example*> batch{&example};
  const Tensorf out = model.forward(batch_tensor(model, batch, false), batch_tensor(model, batch, true), Mode::infer);
  const auto data = out.data();
  if (data.size() != 3 || scaler.dim() != 3) throw ShapeError("force models have three outputs");
  const auto newtons = scaler.invert({data[0], data[1], data[2]});
  return {newtons[0], newtons[1], newtons[2]};
}

std::array<double, 3> predict(Checkpoint& checkpoint, const Example& example) {
  return predict(checkpoint.model, checkpoint.scaler, example);
}

std::array<double, 3> predict(Checkpoint& checkpoint, const Volume& reference, const Volume& sample) {
  if (reference.extents != sample.extents) throw ShapeError("reference and sample extents differ");
  const auto extent = checkpoint.arch.input_extent;
  Example ex{std::make_shared<const std::vector<float>>(prepare_input(reference, checkpoint.kind, extent, checkpoint.input)),
             std::make_shared<const std::vector<float>>(prepare_input(sample, checkpoint.kind, extent, checkpoint.input)),
             {}};
  return predict(checkpoint, ex);
}

std::vector<std::array<double, 3>> predict_all(Model<float>& model, const LabelScaler& scaler,
                                               const std::vector<Example>& examples) {
  std::vector<std::array<double, 3>> out;
  out.reserve(examples.size());
  for (const auto& e : examples) out.push_back(predict(model, scaler, e));
  return out;
}

double mean_component_mae(const std::vector<std::array<double, 3>>& preds, const std::vector<Example>& examples) {
  if (preds.size() != examples.size() || preds.empty()) throw ShapeError("prediction and example counts differ");
  double total = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double s = 0.0;
    for (int c = 0; c < 3; ++c) s += std::abs(examples[i].label[c] - preds[i][c]);
    total += s / 3.0;
  }
  return total / static_cast<double>(preds.size());
}

TrainResult train(Checkpoint cp, const TrainData& data, const TrainHooks& hooks) {
  validate_train_config(cp.config);
  if (data.train.empty()) throw TrainingError("empty training split");
  const auto& cfg = cp.config;
  const auto& val = data.val.empty() ? data.train : data.val;
  auto& st = cp.state;

  if (cp.scaler.dim() == 0) {
    std::vector<double> labels;
    for (const auto& e : data.train) labels.insert(labels.end(), e.label.begin(), e.label.end());
    cp.scaler = fit_scaler(labels, 3);
  }
  std::vector<float> scaled_labels;
  {
    std::vector<double> labels;
    for (const auto& e : data.train) labels.insert(labels.end(), e.label.begin(), e.label.end());
    const auto s = cp.scaler.apply(labels);
    scaled_labels.assign(s.begin(), s.end());
  }

  std::mt19937_64 rng = engine_from(st.rng, cfg.seed);
  const std::size_t n = data.train.size();
  if (st.epoch_order.size() != n) {
    st.epoch_order.clear();
    st.epoch_pos = 0;
  }

  std::optional<Checkpoint> best;
  std::vector<TrainLogRecord> log;
  double loss_sum = 0.0;
  std::int64_t loss_count = 0;
  std::vector<const Example*> batch;
  std::vector<float> target;

  auto evaluate = [&] {
    const double metric = hooks.validation ? hooks.validation(st.step, cp.model)
                                           : mean_component_mae(predict_all(cp.model, cp.scaler, val), val);
    if (!std::isfinite(metric)) {
      throw TrainingError("non-finite validation MAE at step " + std::to_string(st.step) + " (lr " + std::to_string(st.lr) + ")");
    }
    TrainLogRecord rec{st.step, loss_count > 0 ? loss_sum / static_cast<double>(loss_count) : 0.0, metric, st.lr};
    log.push_back(rec);
    if (hooks.on_eval) hooks.on_eval(rec);
    loss_sum = 0.0;
    loss_count = 0;
    ++st.evals;

    if (metric < st.best_val) {
      st.best_val = metric;
      st.best_step = st.step;
      st.rng = engine_state(rng);
      best.emplace(cp);
    }
    const bool first = std::isinf(st.plateau_ref);
    const double delta = cfg.min_rel_improvement;
    const bool improved = first || (std::isfinite(delta) && metric < st.plateau_ref - delta * st.plateau_ref);
    if (improved) {
      st.plateau_ref = metric;
      st.evals_without_improvement = 0;
      st.halvings_without_improvement = 0;
    } else if (++st.evals_without_improvement >= cfg.patience) {
      st.evals_without_improvement = 0;
      if (st.halvings_without_improvement >= cfg.max_halvings) {
        st.stopped = true;
      } else {
        st.lr *= 0.5;
        ++st.halvings_without_improvement;
      }
    }
  };

  while (!st.stopped && st.step < cfg.max_steps) {
    if (st.epoch_pos >= static_cast<std::int64_t>(st.epoch_order.size())) {
      reshuffle(st.epoch_order, n, rng);
      st.epoch_pos = 0;
    }
    const auto take = std::min<std::int64_t>(cfg.batch_size, static_cast<std::int64_t>(n) - st.epoch_pos);
    batch.clear();
    target.clear();
    for (std::int64_t b = 0; b < take; ++b) {
      const auto idx = static_cast<std::size_t>(st.epoch_order[static_cast<std::size_t>(st.epoch_pos + b)]);
      batch.push_back(&data.train[idx]);
      target.insert(target.end(), scaled_labels.begin() + static_cast<std::ptrdiff_t>(3 * idx),
                    scaled_labels.begin() + static_cast<std::ptrdiff_t>(3 * idx + 3));
    }
    st.epoch_pos += take;

    cp.model.zero_grad();
    const Tensorf pred = cp.model.forward(batch_tensor(cp.model, batch, false), batch_tensor(cp.model, batch, true), Mode::train);
    const Tensorf loss = mse_loss(pred, Tensorf(Shape{take, 3}, target));
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw TrainingError("non-finite loss at step " + std::to_string(st.step + 1) + " (lr " + std::to_string(st.lr) + ")");
    }
    backward(loss);
    AdamOptions opts{st.lr, cfg.beta1, cfg.beta2, cfg.eps};
    adam_step<float>(cp.model.parameters(), cp.adam, opts);
    ++st.step;
    loss_sum += value;
    ++loss_count;
    if (st.step % cfg.eval_interval == 0 || st.step == cfg.max_steps) evaluate();
  }
  st.rng = engine_state(rng);

  const bool improved = best.has_value();
  TrainResult result{improved ? std::move(*best) : cp, cp, std::move(log), improved};
  return result;
}

// ---- checkpoint file -------------------------------------------------------

namespace {

template <typename U>
void put(std::ostream& os, U v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(U));
}

template <typename U>
U get(std::istream& is, const std::filesystem::path& file) {
  U v{};
  is.read(reinterpret_cast<char*>(&v), sizeof(U));
  if (!is) throw FormatError(file.string() + ": truncated checkpoint");
  return v;
}

struct RawTensor {
  std::vector<std::int64_t> dims;
  std::vector<float> data;
};

void put_tensor(std::ostream& os, const std::string& name, const std::vector<std::int64_t>& dims, std::span<const float> data) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(name.size()));
  os.write(name.data(), static_cast<std::streamsize>(name.size()));
  put<std::uint32_t>(os, static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) put<std::int64_t>(os, d);
  os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size() * sizeof(float)));
}

}  // namespace

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& cp) {
  const auto& model = cp.model;
  Json meta{{"format", kCheckpointFormat},
            {"kind", std::string(to_string(cp.kind))},
            {"arch", cp.arch},
            {"config", cp.config},
            {"input", cp.input},
            {"split", cp.split},
            {"scaler", cp.scaler},
            {"model_seed", cp.model_seed},
            {"state", cp.state},
            {"adam_step", cp.adam.step}};
  const std::string text = meta.dump();

  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  char magic[16] = {};
  std::memcpy(magic, kCheckpointFormat, std::strlen(kCheckpointFormat));
  os.write(magic, sizeof(magic));
  put<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));

  const auto& names = model.parameter_names();
  const auto& params = model.parameters();
  const bool has_adam = !cp.adam.m.empty();
  const std::size_t count = params.size() * (has_adam ? 3 : 1) + 2 * model.bn_states().size();
  put<std::uint32_t>(os, static_cast<std::uint32_t>(count));
  for (std::size_t i = 0; i < params.size(); ++i) {
    put_tensor(os, "param/" + names[i], params[i].shape().dims(), params[i].data());
  }
  for (std::size_t i = 0; i < model.bn_states().size(); ++i) {
    const auto& s = model.bn_states()[i];
    const std::vector<std::int64_t> dims{static_cast<std::int64_t>(s.running_mean.size())};
    put_tensor(os, "bn/" + model.bn_names()[i] + "/running_mean", dims, s.running_mean);
    put_tensor(os, "bn/" + model.bn_names()[i] + "/running_var", dims, s.running_var);
  }
  if (has_adam) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      put_tensor(os, "adam_m/" + names[i], params[i].shape().dims(), cp.adam.m[i]);
      put_tensor(os, "adam_v/" + names[i], params[i].shape().dims(), cp.adam.v[i]);
    }
  }
  if (!os) throw IoError("failed writing " + file.string());
}

Checkpoint load_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw IoError("cannot open " + file.string());
  char magic[16] = {};
  char expected[16] = {};
  std::memcpy(expected, kCheckpointFormat, std::strlen(kCheckpointFormat));
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, expected, sizeof(magic)) != 0) {
    throw FormatError(file.string() + ": bad magic, expected " + kCheckpointFormat);
  }
  const auto file_size = std::filesystem::file_size(file);
  const auto meta_len = get<std::uint64_t>(is, file);
  if (meta_len > file_size) throw FormatError(file.string() + ": bad metadata length");
  std::string text(meta_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(meta_len));
  if (!is) throw FormatError(file.string() + ": truncated metadata");

  Json meta;
  try {
    meta = Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(file.string() + ": " + e.what());
  }

  std::string format, kind_name;
  ArchSpec arch;
  TrainConfig config;
  InputSpec input;
  SplitSpec split;
  LabelScaler scaler;
  std::uint64_t model_seed = 0;
  TrainState state;
  std::int64_t adam_step = 0;
  try {
    detail::ObjectReader r(meta, "");
    r.field("format", format)
        .field("kind", kind_name)
        .field("arch", arch)
        .field("config", config)
        .field("input", input)
        .field("split", split)
        .field("scaler", scaler)
        .field("model_seed", model_seed)
        .field("state", state)
        .field("adam_step", adam_step);
    r.done();
  } catch (const ConfigError& e) {
    throw FormatError(file.string() + ": " + e.what());
  }
  if (format != kCheckpointFormat) throw FormatError(file.string() + ": unsupported format '" + format + "'");

  Checkpoint cp(parse_model_kind(kind_name), arch, model_seed);
  cp.config = config;
  cp.input = input;
  cp.split = split;
  cp.scaler = scaler;
  cp.state = state;
  cp.adam.step = adam_step;

  std::map<std::string, RawTensor> table;
  const auto count = get<std::uint32_t>(is, file);
  for (std::uint32_t t = 0; t < count; ++t) {
    const auto name_len = get<std::uint32_t>(is, file);
    if (name_len > 4096) throw FormatError(file.string() + ": bad tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    const auto rank = get<std::uint32_t>(is, file);
    if (rank > 8) throw FormatError(file.string() + ": bad tensor rank");
    RawTensor raw;
    std::uint64_t numel = 1;
    for (std::uint32_t a = 0; a < rank; ++a) {
      raw.dims.push_back(get<std::int64_t>(is, file));
      if (raw.dims.back() < 0) throw FormatError(file.string() + ": negative extent in " + name);
      numel *= static_cast<std::uint64_t>(raw.dims.back());
    }
    if (numel * sizeof(float) > file_size) throw FormatError(file.string() + ": tensor " + name + " exceeds the file");
    raw.data.resize(numel);
    is.read(reinterpret_cast<char*>(raw.data.data()), static_cast<std::streamsize>(numel * sizeof(float)));
    if (!is) throw FormatError(file.string() + ": truncated tensor " + name);
    table.emplace(std::move(name), std::move(raw));
  }

  auto take = [&](const std::string& name, const std::vector<std::int64_t>& dims) -> std::vector<float>& {
    auto it = table.find(name);
    if (it == table.end()) throw FormatError(file.string() + ": missing tensor " + name);
    if (it->second.dims != dims) throw FormatError(file.string() + ": shape mismatch for " + name);
    return it->second.data;
  };
  auto& model = cp.model;
  const auto& names = model.parameter_names();
  for (std::size_t i = 0; i < names.size(); ++i) {
    auto& p = model.parameters()[i];
    const auto& src = take("param/" + names[i], p.shape().dims());
    auto dst = p.mutable_data();
    std::copy(src.begin(), src.end(), dst.begin());
  }
  for (std::size_t i = 0; i < model.bn_states().size(); ++i) {
    auto& s = model.bn_states()[i];
    const std::vector<std::int64_t> dims{static_cast<std::int64_t>(s.running_mean.size())};
    s.running_mean = take("bn/" + model.bn_names()[i] + "/running_mean", dims);
    s.running_var = take("bn/" + model.bn_names()[i] + "/running_var", dims);
  }
  if (table.contains("adam_m/" + names.front())) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const auto& dims = model.parameters()[i].shape().dims();
      cp.adam.m.push_back(take("adam_m/" + names[i], dims));
      cp.adam.v.push_back(take("adam_v/" + names[i], dims));
    }
  }
  return cp;
}

std::string to_jsonl(const TrainLogRecord& record) { return Json(record).dump(); }

void write_log(const std::filesystem::path& file, const std::vector<TrainLogRecord>& log) {
  std::ofstream os(file, std::ios::trunc);
  if (!os) throw IoError("cannot open " + file.string() + " for writing");
  for (const auto& r : log) os << to_jsonl(r) << '\n';
  if (!os) throw IoError("failed writing " + file.string());
}

std::vector<TrainLogRecord> read_log(const std::filesystem::path& file) {
  std::ifstream is(file);
  if (!is) throw IoError("cannot open " + file.string());
  std::vector<TrainLogRecord> out;
  std::string line;
  std::size_t n = 0;
  while (std::getline(is, line)) {
    ++n;
    if (line.empty()) continue;
    try {
      TrainLogRecord r;
      read_json(Json::parse(line), r, file.string() + ":" + std::to_string(n));
      out.push_back(r);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(file.string() + ":" + std::to_string(n) + ": " + e.what());
    }
  }
  return out;
}

}  // namespace octoforce
