#include "octoforce/evaluator.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "octoforce/errors.hpp"
#include "octoforce/parallel.hpp"
#include "octoforce/serialize.hpp"

namespace octoforce {

namespace {

void check_pairs(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets) {
  if (preds.size() != targets.size()) throw ShapeError("prediction and target counts differ");
  if (preds.empty()) throw ShapeError("no samples to score");
}

double sample_std(const std::vector<double>& v, double mean) {
  if (v.size() < 2) return 0.0;
  double ss = 0.0;
  for (double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

MaeStats mae(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets, MaeNorm norm) {
  check_pairs(preds, targets);
  MaeStats s;
  s.per_sample.reserve(preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    double e = 0.0;
    if (norm == MaeNorm::component_mean) {
      for (int c = 0; c < 3; ++c) e += std::abs(targets[i][c] - preds[i][c]);
      e /= 3.0;
    } else {
      for (int c = 0; c < 3; ++c) e += (targets[i][c] - preds[i][c]) * (targets[i][c] - preds[i][c]);
      e = std::sqrt(e);
    }
    s.per_sample.push_back(e);
  }
  double total = 0.0;
  for (double e : s.per_sample) total += e;
  s.mean = total / static_cast<double>(s.per_sample.size());
  s.std = sample_std(s.per_sample, s.mean);
  return s;
}

double acc(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets, std::vector<std::string>* warnings) {
  check_pairs(preds, targets);
  const auto n = static_cast<double>(preds.size());
  double total = 0.0;
  for (int c = 0; c < 3; ++c) {
    double mp = 0.0, mt = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      mp += preds[i][c];
      mt += targets[i][c];
    }
    mp /= n;
    mt /= n;
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      const double a = preds[i][c] - mp;
      const double b = targets[i][c] - mt;
      sxy += a * b;
      sxx += a * a;
      syy += b * b;
    }
    if (sxx > 0.0 && syy > 0.0) {
      total += std::clamp(sxy / std::sqrt(sxx * syy), -1.0, 1.0);
    } else if (warnings) {
      warnings->push_back("component " + std::to_string(c) + " has zero variance; its correlation counts as 0");
    }
  }
  return total / 3.0;
}

R2Result r2_and_residuals(const std::vector<Vec3>& preds, const std::vector<Vec3>& targets) {
  check_pairs(preds, targets);
  R2Result out;
  out.residuals.reserve(preds.size());
  double mx = 0.0, my = 0.0;
  const auto n = static_cast<double>(3 * preds.size());
  for (std::size_t i = 0; i < preds.size(); ++i) {
    Vec3 r{};
    for (int c = 0; c < 3; ++c) {
      mx += preds[i][c];
      my += targets[i][c];
      r[c] = targets[i][c] - preds[i][c];
    }
    out.residuals.push_back(r);
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int c = 0; c < 3; ++c) {
      const double a = preds[i][c] - mx;
      const double b = targets[i][c] - my;
      sxy += a * b;
      sxx += a * a;
      syy += b * b;
    }
  }
  out.r2 = (sxx > 0.0 && syy > 0.0) ? std::min(1.0, sxy * sxy / (sxx * syy)) : 0.0;
  return out;
}

double quantile_inclusive(const std::vector<double>& sorted, double p) {
  if (sorted.empty()) throw ShapeError("quantile of an empty list");
  const double pos = p * static_cast<double>(sorted.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, sorted.size() - 1);
  const double frac = pos - static_cast<double>(lo);
  return sorted[lo] + frac * (sorted[hi] - sorted[lo]);
}

BoxplotStats boxplot_stats(std::vector<double> values) {
  if (values.empty()) throw ShapeError("boxplot of an empty list");
  std::sort(values.begin(), values.end());
  return {values.front(), quantile_inclusive(values, 0.25), quantile_inclusive(values, 0.5),
          quantile_inclusive(values, 0.75), values.back()};
}

std::string cpu_description() {
  std::ifstream is("/proc/cpuinfo");
  std::string line;
  while (std::getline(is, line)) {
    if (line.rfind("model name", 0) == 0) {
      const auto colon = line.find(':');
      if (colon != std::string::npos) {
        auto name = line.substr(colon + 1);
        name.erase(0, name.find_first_not_of(' '));
        return name;
      }
    }
  }
  return "unknown CPU";
}

TimingStats time_inference(Checkpoint& checkpoint, const Example& example, std::int64_t warmup, std::int64_t trials) {
  if (trials < 1) throw ConfigError("timing needs at least one trial");
  if (warmup < 0) throw ConfigError("warmup count must be >= 0");
  for (std::int64_t i = 0; i < warmup; ++i) predict(checkpoint, example);
  std::vector<double> ms;
  ms.reserve(static_cast<std::size_t>(trials));
  for (std::int64_t i = 0; i < trials; ++i) {
    const auto t0 = std::chrono::steady_clock::now();
    predict(checkpoint, example);
    ms.push_back(std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count());
  }
  TimingStats t;
  double total = 0.0;
  for (double v : ms) total += v;
  t.mean_ms = total / static_cast<double>(ms.size());
  t.std_ms = sample_std(ms, t.mean_ms);
  t.warmup = warmup;
  t.trials = trials;
  t.threads = num_threads();
  t.input_extent = checkpoint.arch.input_extent;
  t.cpu = cpu_description();
  return t;
}

EvalReport evaluate(Checkpoint& cp, const Dataset& dataset, const std::string& dataset_id, const EvalOptions& options) {
  const auto parts = split(dataset.size(), cp.split, dataset.groups());
  const auto& indices = parts.by_name(options.split);
  if (indices.empty()) throw ConfigError("split '" + options.split + "' is empty");
  const auto extent = cp.arch.input_extent;

  EvalReport r;
  r.dataset_id = dataset_id;
  r.model_id = std::string(to_string(cp.kind));
  r.split = options.split;
  r.norm = options.norm;

  const auto examples = prepare_examples(dataset, indices, cp.kind, extent, cp.input);
  r.predictions = predict_all(cp.model, cp.scaler, examples);
  for (const auto& e : examples) r.targets.push_back(e.label);
  r.count = static_cast<std::int64_t>(examples.size());
  r.mae = mae(r.predictions, r.targets, options.norm);
  r.acc = acc(r.predictions, r.targets, &r.warnings);
  auto fit = r2_and_residuals(r.predictions, r.targets);
  r.r2 = fit.r2;
  r.residuals = std::move(fit.residuals);
  r.box_eval = boxplot_stats(r.mae.per_sample);

  if (options.split == "train") {
    r.box_train = r.box_eval;
  } else if (!parts.train.empty()) {
    const auto train_examples = prepare_examples(dataset, parts.train, cp.kind, extent, cp.input);
    std::vector<Vec3> targets;
    for (const auto& e : train_examples) targets.push_back(e.label);
    r.box_train = boxplot_stats(mae(predict_all(cp.model, cp.scaler, train_examples), targets, options.norm).per_sample);
  }
  r.timing = time_inference(cp, examples.front(), options.timing_warmup, options.timing_trials);
  return r;
}

namespace {

Json box_json(const BoxplotStats& b) {
  return Json{{"min", b.min}, {"q1", b.q1}, {"median", b.median}, {"q3", b.q3}, {"max", b.max}};
}

Json metrics(const EvalReport& r) {
  return Json{{"dataset_id", r.dataset_id},
              {"model_id", r.model_id},
              {"split", r.split},
              {"count", r.count},
              {"mae_N", Json{{"mean", r.mae.mean}, {"std", r.mae.std},
                             {"norm", r.norm == MaeNorm::component_mean ? "component_mean" : "l2"}}},
              {"acc", r.acc},
              {"r2", r.r2},
              {"boxplot_mae_N", Json{{"train", box_json(r.box_train)}, {r.split == "train" ? "train_eval" : r.split, box_json(r.box_eval)}}},
              {"warnings", r.warnings}};
}

}  // namespace

std::string metrics_json(const EvalReport& report) { return metrics(report).dump(2); }

void write_report(const std::filesystem::path& dir, const EvalReport& r) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  Json j = metrics(r);
  j["timing_ms"] = Json{{"mean", r.timing.mean_ms},     {"std", r.timing.std_ms},
                        {"warmup", r.timing.warmup},    {"trials", r.timing.trials},
                        {"threads", r.timing.threads},  {"input_extent", r.timing.input_extent},
                        {"cpu", r.timing.cpu},          {"device", "cpu"}};
  {
    std::ofstream os(dir / "report.json", std::ios::trunc);
    if (!os) throw IoError("cannot write " + (dir / "report.json").string());
    os << j.dump(2) << '\n';
  }
  auto number = [](double v) {
    std::ostringstream s;
    s << std::setprecision(17) << v;
    return s.str();
  };
  {
    std::ofstream os(dir / "per_sample_mae.tsv", std::ios::trunc);
    if (!os) throw IoError("cannot write per_sample_mae.tsv");
    os << "index\tmae_N\n";
    for (std::size_t i = 0; i < r.mae.per_sample.size(); ++i) os << i << '\t' << number(r.mae.per_sample[i]) << '\n';
  }
  {
    std::ofstream os(dir / "residuals.tsv", std::ios::trunc);
    if (!os) throw IoError("cannot write residuals.tsv");
    os << "index\tpred_fx\tpred_fy\tpred_fz\ttrue_fx\ttrue_fy\ttrue_fz\tres_fx\tres_fy\tres_fz\n";
    for (std::size_t i = 0; i < r.residuals.size(); ++i) {
      os << i;
      for (const auto* v : {&r.predictions[i], &r.targets[i], &r.residuals[i]}) {
        for (int c = 0; c < 3; ++c) os << '\t' << number((*v)[c]);
      }
      os << '\n';
    }
  }
}

}  // namespace octoforce
