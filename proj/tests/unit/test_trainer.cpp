#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <random>

#include "octoforce/errors.hpp"
#include "octoforce/trainer.hpp"
#include "support/oracles.hpp"

using namespace octoforce;
namespace fs = std::filesystem;

namespace {

ArchSpec tiny_arch() {
  ArchSpec s;
  s.input_extent = 8;
  s.init_channels = 4;
  s.path_blocks = {{8, 2, 4}};
  s.joint_blocks = {{8, 2, 4}};
  return s;
}

std::vector<Example> random_examples(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::uniform_real_distribution<double> f(-1.0, 1.0);
  std::vector<Example> out;
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<float> r(512), s(512);
    for (auto& v : r) v = u(rng);
    for (auto& v : s) v = u(rng);
    out.push_back({std::make_shared<const std::vector<float>>(r), std::make_shared<const std::vector<float>>(s),
                   {f(rng), f(rng), f(rng)}});
  }
  return out;
}

Checkpoint fresh(TrainConfig cfg) { return init_checkpoint(ModelKind::siamcnn, tiny_arch(), cfg); }

fs::path scratch(const std::string& name) {
  auto dir = fs::temp_directory_path() / ("octoforce_trainer_" + name + "_" + std::to_string(::getpid()));
  fs::remove_all(dir);
  fs::create_directories(dir);
  return dir;
}

}  // namespace

TEST(TrainConfig, Validation) {
  TrainConfig c;
  EXPECT_NO_THROW(validate_train_config(c));
  c.lr = 0.0;
  EXPECT_THROW(validate_train_config(c), ConfigError);
  c = {};
  c.patience = 0;
  EXPECT_THROW(validate_train_config(c), ConfigError);
  c = {};
  c.min_rel_improvement = -0.1;
  EXPECT_THROW(validate_train_config(c), ConfigError);
  c = {};
  c.min_rel_improvement = std::numeric_limits<double>::infinity();
  EXPECT_NO_THROW(validate_train_config(c));
}

TEST(Train, EmptyTrainingSplitIsError) {
  EXPECT_THROW(train(fresh({}), TrainData{}), TrainingError);
}

TEST(Train, MemorizesSinglePair) {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.batch_size = 1;
  cfg.max_steps = 500;
  cfg.eval_interval = 50;
  cfg.min_rel_improvement = 0.0;
  auto cp = fresh(cfg);
  cp.scaler = LabelScaler{{-1.0, -1.0, -1.0}, {1.0, 1.0, 1.0}};
  auto data = random_examples(1, 3);
  const auto result = train(cp, {data, {}});
  ASSERT_FALSE(result.log.empty());
  EXPECT_LT(result.log.back().train_loss, 1e-4);
}

TEST(Train, InfiniteDeltaHalvesEveryPatienceEvals) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 1000;
  cfg.eval_interval = 1;
  cfg.patience = 2;
  cfg.max_halvings = 3;
  cfg.min_rel_improvement = std::numeric_limits<double>::infinity();
  auto data = random_examples(4, 5);
  TrainHooks hooks;
  hooks.validation = [](std::int64_t step, Model<float>&) { return 10.0 - 0.01 * static_cast<double>(step); };
  const auto result = train(fresh(cfg), {data, {}}, hooks);
  std::vector<double> lrs;
  for (const auto& r : result.log) lrs.push_back(r.lr);
  const std::vector<double> expected{1e-4, 1e-4, 1e-4, 5e-5, 5e-5, 2.5e-5, 2.5e-5, 1.25e-5, 1.25e-5};
  EXPECT_EQ(lrs, expected);
  EXPECT_TRUE(result.last.state.stopped);
  for (std::size_t i = 1; i < lrs.size(); ++i) EXPECT_TRUE(lrs[i] == lrs[i - 1] || lrs[i] == 0.5 * lrs[i - 1]);
}

TEST(Train, EarlyStoppingReturnsBestParameters) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 6;
  cfg.eval_interval = 1;
  cfg.lr = 1e-2;
  const std::vector<double> metrics{5.0, 3.0, 1.0, 4.0, 6.0, 2.0};
  std::vector<float> at_best;
  TrainHooks hooks;
  hooks.validation = [&](std::int64_t step, Model<float>& m) {
    if (step == 3) at_best = oracle::to_vector(m.parameters()[0]);
    return metrics[static_cast<std::size_t>(step - 1)];
  };
  const auto result = train(fresh(cfg), {random_examples(4, 6), {}}, hooks);
  EXPECT_TRUE(result.improved);
  EXPECT_EQ(result.best.state.best_step, 3);
  EXPECT_EQ(result.best.state.best_val, 1.0);
  EXPECT_EQ(oracle::to_vector(result.best.model.parameters()[0]), at_best);
  EXPECT_NE(oracle::to_vector(result.last.model.parameters()[0]), at_best);
  EXPECT_EQ(result.last.state.step, 6);
}

TEST(Train, SameSeedSameLog) {
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.max_steps = 12;
  cfg.eval_interval = 4;
  auto data = random_examples(7, 8);
  const auto a = train(fresh(cfg), {data, {}});
  const auto b = train(fresh(cfg), {data, {}});
  EXPECT_EQ(a.log, b.log);
  EXPECT_EQ(oracle::to_vector(a.last.model.parameters().back()), oracle::to_vector(b.last.model.parameters().back()));
}

TEST(Train, ResumeContinuesStepCounterAndMatchesUninterrupted) {
  TrainConfig cfg;
  cfg.batch_size = 3;
  cfg.max_steps = 10;
  cfg.eval_interval = 5;
  auto data = random_examples(5, 9);
  auto whole_cfg = cfg;
  whole_cfg.max_steps = 20;
  const auto whole = train(fresh(whole_cfg), {data, {}});

  const auto first = train(fresh(cfg), {data, {}});
  const auto dir = scratch("resume");
  save_checkpoint(dir / "last.ckpt", first.last);
  auto resumed = load_checkpoint(dir / "last.ckpt");
  resumed.config.max_steps = 20;
  const auto second = train(resumed, {data, {}});
  ASSERT_FALSE(second.log.empty());
  EXPECT_EQ(second.log.front().step, 15);
  EXPECT_EQ(second.last.state.step, 20);
  EXPECT_EQ(oracle::to_vector(second.last.model.parameters()[0]), oracle::to_vector(whole.last.model.parameters()[0]));
  fs::remove_all(dir);
}

TEST(Train, NonFiniteLossAborts) {
  TrainConfig cfg;
  cfg.batch_size = 1;
  cfg.max_steps = 3;
  auto data = random_examples(1, 10);
  auto bad = std::vector<float>(*data[0].sample);
  bad[7] = std::numeric_limits<float>::quiet_NaN();
  data[0].sample = std::make_shared<const std::vector<float>>(bad);
  try {
    train(fresh(cfg), {data, {}});
    FAIL();
  } catch (const TrainingError& e) {
    EXPECT_NE(std::string(e.what()).find("step 1"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("lr"), std::string::npos);
  }
}

TEST(Train, OneAdamStepChangesBatchLoss) {
  auto cp = fresh({});
  auto data = random_examples(2, 11);
  cp.scaler = fit_scaler({data[0].label[0], data[0].label[1], data[0].label[2], data[1].label[0], data[1].label[1],
                          data[1].label[2]},
                         3);
  auto loss_of = [&](Model<float>& m) {
    std::vector<double> preds;
    for (const auto& e : data) {
      const auto p = predict(m, cp.scaler, e);
      preds.insert(preds.end(), p.begin(), p.end());
    }
    double s = 0.0;
    for (std::size_t i = 0; i < 6; ++i) s += std::pow(preds[i] - data[i / 3].label[i % 3], 2);
    return s;
  };
  const double before = loss_of(cp.model);
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.max_steps = 1;
  cp.config = cfg;
  auto result = train(cp, {data, {}});
  EXPECT_NE(loss_of(result.last.model), before);
}

TEST(Predict, DeterministicAndCheckpointRoundTrip) {
  auto cp = fresh({});
  cp.scaler = LabelScaler{{-1, -2, 0}, {1, 2, 3}};
  auto data = random_examples(1, 12);
  // one BN update so running statistics are not the identity
  cp.config.max_steps = 2;
  cp.config.batch_size = 1;
  auto trained = train(cp, {data, {}}).last;
  const auto a = predict(trained, data[0]);
  EXPECT_EQ(a, predict(trained, data[0]));
  const auto dir = scratch("ckpt");
  save_checkpoint(dir / "m.ckpt", trained);
  auto back = load_checkpoint(dir / "m.ckpt");
  EXPECT_EQ(predict(back, data[0]), a);
  EXPECT_EQ(back.state.step, trained.state.step);
  EXPECT_EQ(back.scaler, trained.scaler);
  EXPECT_EQ(back.arch, trained.arch);
  EXPECT_EQ(back.config, trained.config);
  EXPECT_EQ(back.adam.step, trained.adam.step);
  ASSERT_EQ(back.adam.m.size(), trained.adam.m.size());
  for (std::size_t i = 0; i < back.adam.m.size(); ++i) {
    EXPECT_EQ(back.adam.m[i], trained.adam.m[i]);
    EXPECT_EQ(back.adam.v[i], trained.adam.v[i]);
  }
  for (std::size_t i = 0; i < back.model.bn_states().size(); ++i) {
    EXPECT_EQ(back.model.bn_states()[i].running_mean, trained.model.bn_states()[i].running_mean);
    EXPECT_EQ(back.model.bn_states()[i].running_var, trained.model.bn_states()[i].running_var);
  }
  fs::remove_all(dir);
}

TEST(Predict, VolumeOverloadChecksExtents) {
  auto cp = fresh({});
  cp.scaler = LabelScaler{{0, 0, 0}, {1, 1, 1}};
  const auto a = Volume::zeros({8, 8, 8}, {1, 1, 1});
  const auto b = Volume::zeros({8, 8, 16}, {1, 1, 1});
  EXPECT_THROW(predict(cp, a, b), ShapeError);
  EXPECT_NO_THROW(predict(cp, a, a));
}

TEST(Checkpoint, CorruptFileIsFormatError) {
  const auto dir = scratch("corrupt");
  auto cp = fresh({});
  cp.scaler = LabelScaler{{0, 0, 0}, {1, 1, 1}};
  save_checkpoint(dir / "m.ckpt", cp);
  {
    std::fstream f(dir / "m.ckpt", std::ios::in | std::ios::out | std::ios::binary);
    f.write("garbage!", 8);
  }
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
  save_checkpoint(dir / "m.ckpt", cp);
  fs::resize_file(dir / "m.ckpt", fs::file_size(dir / "m.ckpt") - 10);
  EXPECT_THROW(load_checkpoint(dir / "m.ckpt"), FormatError);
  fs::remove_all(dir);
}

TEST(PrepareInput, PlanarModelsGetSurfaceMaps) {
  auto v = Volume::zeros({8, 8, 8}, {1, 1, 1});
  v.at(3, 5, 6) = 1.0f;
  const auto depth = prepare_input(v, ModelKind::surfcnn_depth, 8);
  const auto mip = prepare_input(v, ModelKind::surfcnn_mip, 8);
  ASSERT_EQ(depth.size(), 64u);
  // network layout [W, H], H fastest
  EXPECT_FLOAT_EQ(depth[3 * 8 + 5], 6.0f / 7.0f);
  EXPECT_EQ(mip[3 * 8 + 5], 1.0f);
  EXPECT_EQ(mip[5 * 8 + 3], 0.0f);
  const auto vol = prepare_input(v, ModelKind::siamcnn, 4);
  EXPECT_EQ(vol.size(), 64u);
}

TEST(TrainLog, JsonLinesRoundTrip) {
  const auto dir = scratch("log");
  const std::vector<TrainLogRecord> log{{100, 0.25, 0.125, 1e-4}, {200, 0.0625, 0.1, 5e-5}};
  write_log(dir / "train_log.jsonl", log);
  EXPECT_EQ(read_log(dir / "train_log.jsonl"), log);
  EXPECT_NE(to_jsonl(log[0]).find("\"val_mae_N\""), std::string::npos);
  fs::remove_all(dir);
}
