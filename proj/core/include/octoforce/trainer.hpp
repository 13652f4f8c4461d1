#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <memory>
#include <string>
#include <vector>

#include "octoforce/arch.hpp"
#include "octoforce/datapipe.hpp"
#include "octoforce/optim.hpp"

namespace octoforce {

struct TrainConfig {
  double lr = 1e-4;
  std::int64_t batch_size = 8;
  std::int64_t max_steps = 20000;
  std::int64_t eval_interval = 100;
  int patience = 5;                      // P, in evaluations
  double min_rel_improvement = 1e-3;     // delta; infinity disables improvement
  int max_halvings = 4;                  // H
  std::uint64_t seed = 1;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  bool operator==(const TrainConfig&) const = default;
};

void validate_train_config(const TrainConfig& config);

// How raw scans become network inputs.
struct InputSpec {
  DownsampleMethod downsample = DownsampleMethod::block_mean;

  bool operator==(const InputSpec&) const = default;
};

// One network input in its layout ([E, E, E] D-fastest, or [E, E] H-fastest).
using InputBuffer = std::shared_ptr<const std::vector<float>>;

// Downsamples to the model's extent when needed; planar models get the MIP
// or depth map of the downsampled volume.
std::vector<float> prepare_input(const Volume& volume, ModelKind kind, std::int64_t extent, const InputSpec& spec = {});

struct Example {
  InputBuffer reference;
  InputBuffer sample;
  std::array<double, 3> label{};  // newtons
};

// Inputs for the selected pairs; reference inputs are shared between pairs of an ROI.
std::vector<Example> prepare_examples(const Dataset& dataset, const std::vector<std::int64_t>& indices, ModelKind kind,
                                      std::int64_t extent, const InputSpec& spec = {});

struct TrainLogRecord {
  std::int64_t step = 0;
  double train_loss = 0.0;
  double val_mae_n = 0.0;
  double lr = 0.0;

  bool operator==(const TrainLogRecord&) const = default;
};

// Scheduler and data-order state carried across resumes.
struct TrainState {
  std::int64_t step = 0;
  double lr = 1e-4;
  double best_val = std::numeric_limits<double>::infinity();
  std::int64_t best_step = -1;
  double plateau_ref = std::numeric_limits<double>::infinity();
  int evals_without_improvement = 0;
  int halvings_without_improvement = 0;
  std::int64_t evals = 0;
  bool stopped = false;
  std::string rng;                       // serialized engine
  std::vector<std::int64_t> epoch_order;
  std::int64_t epoch_pos = 0;
};

// Everything needed to resume training or run inference.
struct Checkpoint {
  ModelKind kind;
  ArchSpec arch;
  TrainConfig config;
  InputSpec input;
  SplitSpec split;
  LabelScaler scaler;
  std::uint64_t model_seed = 1;
  TrainState state;
  Model<float> model;
  AdamState<float> adam;

  Checkpoint(ModelKind kind, ArchSpec arch, std::uint64_t model_seed);
};

inline constexpr const char* kCheckpointFormat = "octoforce-ckpt/1";

void save_checkpoint(const std::filesystem::path& file, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& file);

// Validation metric hook; the default is the unscaled MAE on the validation examples.
using ValidationFn = std::function<double(std::int64_t step, Model<float>& model)>;

struct TrainData {
  std::vector<Example> train;
  std::vector<Example> val;  // empty: the training examples are used for validation
};

struct TrainResult {
  Checkpoint best;   // parameters at the best validation MAE
  Checkpoint last;   // state at the final step, for resuming
  std::vector<TrainLogRecord> log;
  bool improved = false;  // false: no evaluation of this run beat the starting best, `best` is `last`
};

struct TrainHooks {
  ValidationFn validation;
  std::function<void(const TrainLogRecord&)> on_eval;
};

// Starts from `start` (fresh or resumed). Labels are scaled with start.scaler,
// which is fitted on `data.train` when empty.
TrainResult train(Checkpoint start, const TrainData& data, const TrainHooks& hooks = {});

// Fresh checkpoint with an initialized model; the model seed derives from config.seed.
Checkpoint init_checkpoint(ModelKind kind, const ArchSpec& arch, const TrainConfig& config);

// Infer-mode forward of single pairs, labels in newtons.
std::array<double, 3> predict(Checkpoint& checkpoint, const Example& example);
std::array<double, 3> predict(Model<float>& model, const LabelScaler& scaler, const Example& example);
std::array<double, 3> predict(Checkpoint& checkpoint, const Volume& reference, const Volume& sample);
std::vector<std::array<double, 3>> predict_all(Model<float>& model, const LabelScaler& scaler,
                                               const std::vector<Example>& examples);

double mean_component_mae(const std::vector<std::array<double, 3>>& preds, const std::vector<Example>& examples);

std::string to_jsonl(const TrainLogRecord& record);
void write_log(const std::filesystem::path& file, const std::vector<TrainLogRecord>& log);
std::vector<TrainLogRecord> read_log(const std::filesystem::path& file);

}  // namespace octoforce
