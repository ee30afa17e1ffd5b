#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "saelab/container.hpp"
#include "saelab/metrics.hpp"
#include "saelab/trainer.hpp"
#include "test_util.hpp"

using namespace saelab;
namespace fs = std::filesystem;

namespace {

struct Small {
  GroundTruthSpec spec;
  Dictionary gt;
  Dataset data;
  Small() {
    spec.m = 6;
    spec.d_gt = 10;
    spec.k = 2;
    spec.n = 2000;
    spec.seed = 3;
    gt = sample_ground_truth(spec);
    data = sample_dataset(spec, gt);
  }
};

const Small& small() {
  static const Small s;
  return s;
}

TrainConfig quick(std::size_t steps = 200) {
  TrainConfig c;
  c.steps = steps;
  c.batch_size = 128;
  c.lr = 0.01;
  c.warmup_steps = 10;
  c.lr_decay_steps = {steps};
  c.eval_interval = 20;
  c.seeds = {0, 1};
  return c;
}

ArchParams params_for(Arch a) {
  ArchParams p;
  p.k = 2;
  p.sparsity_coeff = a == Arch::JumpReLU ? 0.01 : 0.05;
  p.lambda_s = 0.05;
  p.target_l0 = 2.0;
  return p;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("saelab_trainer_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

}  // namespace

TEST(Schedule, WarmupMidpoint) {
  TrainConfig c;
  EXPECT_DOUBLE_EQ(learning_rate(c, 500), 0.02);
  EXPECT_DOUBLE_EQ(learning_rate(c, 0), 0.0);
}

TEST(Schedule, ClosedFormEverywhere) {
  TrainConfig c;
  c.steps = 3000;
  c.lr = 0.5;
  c.warmup_steps = 100;
  c.lr_decay_factor = 0.1;
  c.lr_decay_steps = {1000, 2000};
  c.min_lr = 0.004;
  for (std::size_t s = 0; s < c.steps; ++s) {
    double expect;
    if (s < 100) expect = 0.5 * static_cast<double>(s) / 100.0;
    else if (s < 1000) expect = 0.5;
    else if (s < 2000) expect = 0.05;
    else expect = 0.005;
    ASSERT_NEAR(learning_rate(c, s), expect, 1e-15) << s;
  }
  c.min_lr = 0.01;
  EXPECT_DOUBLE_EQ(learning_rate(c, 2500), 0.01);
}

TEST(Schedule, SparsityWarmup) {
  TrainConfig c;
  EXPECT_EQ(sparsity_scale(c, 0), 1.0);
  c.sparsity_warmup_steps = 100;
  EXPECT_DOUBLE_EQ(sparsity_scale(c, 25), 0.25);
  EXPECT_EQ(sparsity_scale(c, 100), 1.0);
}

TEST(Config, Validation) {
  TrainConfig c = quick();
  c.steps = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick();
  c.warmup_steps = c.steps;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick();
  c.min_lr = 1.0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = quick();
  c.batch_size = 0;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(AdamOptimizer, ZeroGradientLeavesParameters) {
  Eigen::VectorXd p = Eigen::VectorXd::LinSpaced(5, -1, 1), g = Eigen::VectorXd::Zero(5);
  const Eigen::VectorXd before = p;
  Adam adam(0.9, 0.999, 1e-8);
  std::vector<Eigen::Map<Eigen::VectorXd>> ps{Eigen::Map<Eigen::VectorXd>(p.data(), 5)};
  std::vector<Eigen::Map<const Eigen::VectorXd>> gs{Eigen::Map<const Eigen::VectorXd>(g.data(), 5)};
  for (int i = 0; i < 10; ++i) adam.step(ps, gs, 0.1);
  EXPECT_TRUE((p.array() == before.array()).all());
  EXPECT_EQ(adam.iterations(), 10u);
}

TEST(AdamOptimizer, FirstStepMovesByLearningRate) {
  // bias-corrected first step is lr * g / (|g| + eps)
  Eigen::VectorXd p = Eigen::VectorXd::Zero(3), g(3);
  g << 2.0, -0.5, 1e-3;
  Adam adam(0.9, 0.999, 1e-8);
  std::vector<Eigen::Map<Eigen::VectorXd>> ps{Eigen::Map<Eigen::VectorXd>(p.data(), 3)};
  std::vector<Eigen::Map<const Eigen::VectorXd>> gs{Eigen::Map<const Eigen::VectorXd>(g.data(), 3)};
  adam.step(ps, gs, 0.01);
  for (int i = 0; i < 3; ++i) EXPECT_NEAR(p(i), -0.01 * g(i) / (std::abs(g(i)) + 1e-8), 1e-12);
}

TEST(Train, BitIdenticalForSameSeed) {
  const auto& s = small();
  const auto cfg = quick(120);
  for (std::uint64_t seed : {42u, 43u, 44u}) {
    const auto p = params_for(Arch::TopK);
    const auto a = train(init_model(Arch::TopK, 6, 10, p, seed), s.data, cfg, &s.gt, seed);
    const auto b = train(init_model(Arch::TopK, 6, 10, p, seed), s.data, cfg, &s.gt, seed);
    EXPECT_TRUE((a.model.W_dec.array() == b.model.W_dec.array()).all());
    EXPECT_TRUE((a.model.W_enc.array() == b.model.W_enc.array()).all());
    ASSERT_EQ(a.trace.records.size(), b.trace.records.size());
    for (std::size_t i = 0; i < a.trace.records.size(); ++i)
      EXPECT_EQ(a.trace.records[i].recon_loss, b.trace.records[i].recon_loss);
  }
}

TEST(Train, DifferentSeedsDiffer) {
  const auto& s = small();
  auto cfg = quick(50);
  cfg.seeds = {0, 1};
  const auto runs = train_multi_seed(Arch::TopK, params_for(Arch::TopK), 10, s.data, cfg);
  EXPECT_GT((runs[0].model.W_dec - runs[1].model.W_dec).norm(), 0.0);
}

TEST(Train, MultiSeedIndependentOfWorkers) {
  const auto& s = small();
  auto cfg = quick(60);
  cfg.seeds = {0, 1, 2};
  const auto a = train_multi_seed(Arch::Standard, params_for(Arch::Standard), 10, s.data, cfg, &s.gt, 1);
  const auto b = train_multi_seed(Arch::Standard, params_for(Arch::Standard), 10, s.data, cfg, &s.gt, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_TRUE((a[i].model.W_dec.array() == b[i].model.W_dec.array()).all());
}

TEST(Train, FiveSeedsGiveTenPairs) {
  const auto& s = small();
  auto cfg = quick(30);
  cfg.seeds = {0, 1, 2, 3, 4};
  const auto runs = train_multi_seed(Arch::TopK, params_for(Arch::TopK), 10, s.data, cfg);
  std::vector<Dictionary> dicts;
  for (const auto& r : runs) dicts.push_back(r.model.W_dec);
  EXPECT_EQ(pw_mcc(dicts).pairwise.size(), 10u);
}

TEST(Train, RejectsSingleSeedMultiRun) {
  const auto& s = small();
  auto cfg = quick(30);
  cfg.seeds = {7};
  EXPECT_THROW(train_multi_seed(Arch::TopK, params_for(Arch::TopK), 10, s.data, cfg), std::invalid_argument);
}

TEST(Train, ReconstructionImprovesForEveryArch) {
  const auto& s = small();
  const auto cfg = quick(300);
  for (Arch a : {Arch::Standard, Arch::TopK, Arch::BatchTopK, Arch::Gated, Arch::PAnneal, Arch::JumpReLU}) {
    const auto p = params_for(a);
    const auto r = train(init_model(a, 6, 10, p, 1), s.data, cfg, &s.gt, 1);
    ASSERT_GE(r.trace.records.size(), 2u);
    EXPECT_LT(r.trace.records.back().recon_loss, r.trace.records.front().recon_loss) << to_string(a);
    EXPECT_EQ(r.trace.records.back().step, cfg.steps);
    EXPECT_TRUE(r.trace.records.back().gt_mcc.has_value());
  }
}

TEST(Train, PAnnealKeepsUnitDecoderColumns) {
  const auto& s = small();
  const auto p = params_for(Arch::PAnneal);
  const auto r = train(init_model(Arch::PAnneal, 6, 10, p, 2), s.data, quick(150), nullptr, 2);
  for (Eigen::Index j = 0; j < 10; ++j) EXPECT_NEAR(r.model.W_dec.col(j).norm(), 1.0, 1e-9);
  EXPECT_LT(r.model.params.p_current, 1.0);
}

TEST(Train, JumpReLUThresholdsStayPositive) {
  const auto& s = small();
  const auto p = params_for(Arch::JumpReLU);
  const auto r = train(init_model(Arch::JumpReLU, 6, 10, p, 2), s.data, quick(150), nullptr, 2);
  EXPECT_GT(r.model.threshold.minCoeff(), 0.0);
}

TEST(Train, DivergenceReportsSeedAndStep) {
  const auto& s = small();
  auto cfg = quick(40);
  cfg.lr = 1e300;
  cfg.warmup_steps = 0;
  cfg.standard_clip_norm = 0.0;
  try {
    train(init_model(Arch::Standard, 6, 10, params_for(Arch::Standard), 9), s.data, cfg, nullptr, 9);
    FAIL() << "expected divergence";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.seed, 9u);
    EXPECT_LE(e.step, cfg.steps);
  }
}

TEST(Train, TraceCsvAndCheckpoints) {
  const auto& s = small();
  auto cfg = quick(100);
  const auto dir = scratch("ckpt");
  cfg.checkpoint_interval = 50;
  cfg.checkpoint_dir = dir;
  const auto r = train(init_model(Arch::TopK, 6, 10, params_for(Arch::TopK), 0), s.data, cfg, &s.gt, 0);
  ASSERT_EQ(r.trace.checkpoints.size(), 2u);
  EXPECT_TRUE(fs::exists(dir / "model_step0000050.saec"));
  const auto last = read_model(dir / "model_step0000100.saec");
  EXPECT_LT((last.W_dec - r.model.W_dec).cwiseAbs().maxCoeff(), 1e-6);

  write_trace_csv(r.trace, dir / "trace.csv");
  std::ifstream in(dir / "trace.csv");
  std::string header;
  std::getline(in, header);
  EXPECT_EQ(header, "step,recon_loss,sparsity_loss,mean_l0,lr,gt_mcc");
  std::size_t rows = 0;
  for (std::string line; std::getline(in, line);) ++rows;
  EXPECT_EQ(rows, r.trace.records.size());
  fs::remove_all(dir);
}

TEST(Train, SnapshotsAlignWithRecords) {
  const auto& s = small();
  auto cfg = quick(60);
  cfg.keep_snapshots = true;
  const auto r = train(init_model(Arch::TopK, 6, 10, params_for(Arch::TopK), 0), s.data, cfg, nullptr, 0);
  EXPECT_EQ(r.trace.snapshots.size(), r.trace.records.size());
  EXPECT_TRUE((r.trace.snapshots.back().array() == r.model.W_dec.array()).all());
}

TEST(Train, FinalGtMccAveragesLastRecords) {
  TrainTrace t;
  for (std::size_t i = 0; i < 10; ++i) {
    TraceRecord r;
    r.step = i * 20;
    r.gt_mcc = static_cast<double>(i);
    t.records.push_back(r);
  }
  EXPECT_DOUBLE_EQ(t.final_gt_mcc(20), (5 + 6 + 7 + 8 + 9) / 5.0);
  EXPECT_DOUBLE_EQ(t.final_gt_mcc(200), 9.0);
}

TEST(KSweep, ReturnsOneRowPerK) {
  GroundTruthSpec spec;
  spec.m = 6;
  spec.d_gt = 10;
  spec.k = 3;
  spec.n = 1000;
  auto cfg = quick(40);
  const std::vector<std::size_t> ks{1, 3};
  const auto rows = k_sweep(spec, ks, 10, cfg);
  ASSERT_EQ(rows.size(), 2u);
  EXPECT_EQ(rows[1].k, 3u);
  EXPECT_EQ(rows[0].per_seed.size(), cfg.seeds.size());
  for (const auto& r : rows) EXPECT_TRUE(r.mean_gt_mcc > 0.0 && r.mean_gt_mcc <= 1.0);
}
