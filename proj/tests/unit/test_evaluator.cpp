#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>

#include "octoforce/errors.hpp"
#include "octoforce/evaluator.hpp"
#include "support/oracles.hpp"

using namespace octoforce;
namespace fs = std::filesystem;

namespace {

std::vector<Vec3> random_vecs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<Vec3> v(n);
  for (auto& x : v) x = {g(rng), g(rng), g(rng)};
  return v;
}

}  // namespace

TEST(Mae, ZeroForPerfectPredictions) {
  const auto t = random_vecs(5, 1);
  const auto s = mae(t, t);
  for (double e : s.per_sample) EXPECT_EQ(e, 0.0);
  EXPECT_EQ(s.mean, 0.0);
  EXPECT_EQ(s.std, 0.0);
}

TEST(Mae, HandEvaluatedSample) {
  const auto s = mae({{0.0, 0.0, 0.0}}, {{0.003, -0.006, 0.012}});
  EXPECT_NEAR(s.per_sample[0], 0.007, 1e-15);
  const auto l2 = mae({{0.0, 0.0, 0.0}}, {{3.0, 4.0, 0.0}}, MaeNorm::l2);
  EXPECT_DOUBLE_EQ(l2.per_sample[0], 5.0);
}

TEST(Mae, PermutationInvariant) {
  auto p = random_vecs(9, 2), t = random_vecs(9, 3);
  const auto a = mae(p, t);
  std::reverse(p.begin(), p.end());
  std::reverse(t.begin(), t.end());
  const auto b = mae(p, t);
  EXPECT_NEAR(a.mean, b.mean, 1e-15);
  EXPECT_NEAR(a.std, b.std, 1e-15);
}

TEST(Acc, PerfectNegatedAndAffine) {
  const auto t = random_vecs(20, 4);
  EXPECT_NEAR(acc(t, t), 1.0, 1e-12);
  auto neg = t;
  for (auto& v : neg)
    for (auto& c : v) c = -c;
  EXPECT_NEAR(acc(neg, t), -1.0, 1e-12);
  auto affine = t;
  for (auto& v : affine) v = {2.0 * v[0] + 1.0, 0.5 * v[1] - 3.0, 7.0 * v[2]};
  EXPECT_NEAR(acc(affine, t), 1.0, 1e-12);
  EXPECT_GT(mae(affine, t).mean, 0.1);
}

TEST(Acc, ZeroVarianceComponentCountsAsZeroWithWarning) {
  auto t = random_vecs(10, 5);
  auto p = t;
  for (auto& v : p) v[2] = 1.0;
  std::vector<std::string> warnings;
  EXPECT_NEAR(acc(p, t, &warnings), 2.0 / 3.0, 1e-12);
  EXPECT_EQ(warnings.size(), 1u);
}

TEST(R2, PerfectAndConstantPredictor) {
  const auto t = random_vecs(12, 6);
  EXPECT_NEAR(r2_and_residuals(t, t).r2, 1.0, 1e-12);
  double mean = 0.0;
  for (const auto& v : t) mean += v[0] + v[1] + v[2];
  mean /= 36.0;
  std::vector<Vec3> constant(t.size(), Vec3{mean, mean, mean});
  EXPECT_NEAR(r2_and_residuals(constant, t).r2, 0.0, 1e-12);
}

TEST(R2, MatchesLeastSquaresOracle) {
  for (std::uint64_t seed = 10; seed < 15; ++seed) {
    const auto p = random_vecs(7, seed);
    auto t = random_vecs(7, seed + 100);
    for (std::size_t i = 0; i < t.size(); ++i)
      for (int c = 0; c < 3; ++c) t[i][c] += 0.8 * p[i][c];
    std::vector<double> x, y;
    for (std::size_t i = 0; i < p.size(); ++i)
      for (int c = 0; c < 3; ++c) {
        x.push_back(p[i][c]);
        y.push_back(t[i][c]);
      }
    const auto r = r2_and_residuals(p, t);
    EXPECT_NEAR(r.r2, oracle::least_squares_r2(x, y), 1e-9);
    EXPECT_LE(r.r2, 1.0);
    ASSERT_EQ(r.residuals.size(), p.size());
    EXPECT_EQ(r.residuals[3][1], t[3][1] - p[3][1]);
  }
}

TEST(Boxplot, SmallLists) {
  EXPECT_EQ(boxplot_stats({5, 3, 1, 4, 2}), (BoxplotStats{1, 2, 3, 4, 5}));
  EXPECT_EQ(boxplot_stats({2.5}), (BoxplotStats{2.5, 2.5, 2.5, 2.5, 2.5}));
  EXPECT_THROW(boxplot_stats({}), ShapeError);
}

TEST(Boxplot, MatchesSortOracle) {
  std::mt19937_64 rng(20);
  std::uniform_real_distribution<double> u(0.0, 10.0);
  for (std::size_t n : {2u, 7u, 10u, 33u}) {
    std::vector<double> v(n);
    for (auto& x : v) x = u(rng);
    const auto b = boxplot_stats(v);
    EXPECT_EQ(b.min, oracle::sorted_quantile(v, 0.0));
    EXPECT_NEAR(b.q1, oracle::sorted_quantile(v, 0.25), 1e-12);
    EXPECT_NEAR(b.median, oracle::sorted_quantile(v, 0.5), 1e-12);
    EXPECT_NEAR(b.q3, oracle::sorted_quantile(v, 0.75), 1e-12);
    EXPECT_EQ(b.max, oracle::sorted_quantile(v, 1.0));
  }
}

namespace {

struct Fixture {
  Dataset dataset;
  Checkpoint cp{ModelKind::siamcnn, {}, 1};

  explicit Fixture(ModelKind kind) {
    PhantomSpec spec;
    spec.grid = {8, 8, 8};
    spec.raw_grid = {8, 8, 8};
    AcquisitionPlan plan;
    plan.deformations_per_roi = 4;
    plan.roi_count = 5;
    dataset = run_protocol(spec, plan);
    ArchSpec arch;
    arch.input_extent = 8;
    arch.init_channels = 4;
    arch.path_blocks = {{8, 2, 4}};
    arch.joint_blocks = {{8, 2, 4}};
    cp = init_checkpoint(kind, arch, {});
    cp.split.train = 0.6;
    cp.split.val = 0.2;
    cp.split.test = 0.2;
    std::vector<double> labels;
    for (const auto& p : dataset.pairs) {
      const auto a = to_array(p.label);
      labels.insert(labels.end(), a.begin(), a.end());
    }
    cp.scaler = fit_scaler(labels, 3);
  }
};

}  // namespace

TEST(Evaluate, ReportIsCompleteAndRepeatable) {
  Fixture f(ModelKind::siamcnn);
  EvalOptions opts;
  opts.timing_trials = 3;
  opts.timing_warmup = 1;
  const auto a = evaluate(f.cp, f.dataset, "ds", opts);
  const auto b = evaluate(f.cp, f.dataset, "ds", opts);
  EXPECT_EQ(a.count, 4);
  EXPECT_EQ(a.mae.per_sample.size(), 4u);
  EXPECT_LE(std::abs(a.acc), 1.0);
  EXPECT_LE(a.r2, 1.0);
  EXPECT_EQ(a.model_id, "siamcnn");
  EXPECT_EQ(metrics_json(a), metrics_json(b));
  EXPECT_EQ(a.timing.input_extent, 8);
  EXPECT_GE(a.timing.threads, 1);
  EXPECT_FALSE(a.timing.cpu.empty());
}

TEST(Evaluate, SurfaceModelsExtractSurfacesFromVolumes) {
  Fixture f(ModelKind::surfcnn_depth);
  EvalOptions opts;
  opts.timing_trials = 1;
  opts.timing_warmup = 0;
  const auto r = evaluate(f.cp, f.dataset, "ds", opts);
  EXPECT_EQ(r.model_id, "surfcnn-depth");
  EXPECT_EQ(r.count, 4);
}

TEST(Evaluate, PredictionsMatchDirectInference) {
  Fixture f(ModelKind::siamcnn);
  EvalOptions opts;
  opts.timing_trials = 1;
  const auto r = evaluate(f.cp, f.dataset, "ds", opts);
  const auto parts = split(f.dataset.size(), f.cp.split, f.dataset.groups());
  const auto& pair = f.dataset.pairs[static_cast<std::size_t>(parts.test[0])];
  EXPECT_EQ(predict(f.cp, *pair.reference, *pair.deformed), r.predictions[0]);
}

TEST(Timing, RequiresTrials) {
  Fixture f(ModelKind::siamcnn);
  const auto ex = prepare_examples(f.dataset, {0}, f.cp.kind, 8);
  EXPECT_THROW(time_inference(f.cp, ex[0], 0, 0), ConfigError);
  const auto t = time_inference(f.cp, ex[0], 1, 5);
  EXPECT_GT(t.mean_ms, 0.0);
  EXPECT_EQ(t.trials, 5);
}

TEST(Report, WritesFiles) {
  Fixture f(ModelKind::siamcnn);
  EvalOptions opts;
  opts.timing_trials = 1;
  const auto r = evaluate(f.cp, f.dataset, "ds", opts);
  const auto dir = fs::temp_directory_path() / ("octoforce_report_" + std::to_string(::getpid()));
  write_report(dir, r);
  EXPECT_TRUE(fs::exists(dir / "report.json"));
  EXPECT_TRUE(fs::exists(dir / "per_sample_mae.tsv"));
  EXPECT_TRUE(fs::exists(dir / "residuals.tsv"));
  fs::remove_all(dir);
}
