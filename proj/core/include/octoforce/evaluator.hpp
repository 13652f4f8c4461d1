#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "octoforce/trainer.hpp"

namespace octoforce {

using Vec3 = std::array<double, 3>;

enum class MaeNorm { component_mean, l2 };

struct MaeStats {
  std::vector<double> per_sample;  // newtons
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1); 0 for a single sample
};

// Per sample: mean absolute component error, or the Euclidean error norm.
MaeStats mae(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets, MaeNorm norm = MaeNorm::component_mean);

// Pearson correlation per component, averaged. A component where either side
// has zero variance contributes 0 and appends a note to `warnings`.
double acc(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets, std::vector<std::string>* warnings = nullptr);

struct R2Result {
  double r2 = 0.0;
  std::vector<Vec3> residuals;  // target - prediction
};

// Least-squares line of targets on predictions, pooled over all components:
// R^2 = 1 - SS_res / SS_tot of that fit. Constant predictions give 0.
R2Result r2_and_residuals(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets);

struct BoxplotStats {
  double min = 0.0, q1 = 0.0, median = 0.0, q3 = 0.0, max = 0.0;

  bool operator==(const BoxplotStats&) const = default;
};

// Quartiles by linear interpolation between order statistics (inclusive method).
BoxplotStats boxplot_stats(std::vector<double> values);
double quantile_inclusive(const std::vector<double>& sorted, double p);

struct TimingStats {
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::int64_t warmup = 0;
  std::int64_t trials = 0;
  int threads = 1;
  std::int64_t input_extent = 0;
  std::string cpu;
};

std::string cpu_description();

// Wall clock of single-pair infer-mode forwards. Throws ConfigError when trials < 1.
TimingStats time_inference(Checkpoint& checkpoint, const Example& example, std::int64_t warmup, std::int64_t trials);

struct EvalOptions {
  std::string split = "test";
  MaeNorm norm = MaeNorm::component_mean;
  std::int64_t timing_warmup = 3;
  std::int64_t timing_trials = 20;
};

struct EvalReport {
  std::string dataset_id;
  std::string model_id;
  std::string split;
  std::int64_t count = 0;
  MaeStats mae;
  MaeNorm norm = MaeNorm::component_mean;
  double acc = 0.0;
  double r2 = 0.0;
  std::vector<Vec3> predictions;
  std::vector<Vec3> targets;
  std::vector<Vec3> residuals;
  BoxplotStats box_train;
  BoxplotStats box_eval;
  TimingStats timing;
  std::vector<std::string> warnings;
};

// Splits `dataset` with the checkpoint's split spec, prepares inputs the way
// the checkpoint's model expects and scores the requested split.
EvalReport evaluate(Checkpoint& checkpoint, const Dataset& dataset, const std::string& dataset_id,
                    const EvalOptions& options = {});

// Metric part of the report (everything but timing), as JSON text.
std::string metrics_json(const EvalReport& report);

// report.json plus per_sample_mae.tsv and residuals.tsv column files.
void write_report(const std::filesystem::path& dir, const EvalReport& report);

}  // namespace octoforce
