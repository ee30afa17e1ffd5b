#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/datagen.hpp"
#include "saelab/sae.hpp"

namespace saelab {

struct TrainConfig {
  std::size_t steps = 20000;
  std::size_t batch_size = 4096;
  double lr = 0.04;
  std::size_t warmup_steps = 1000;
  double lr_decay_factor = 0.1;
  std::vector<std::size_t> lr_decay_steps{20000};
  double min_lr = 1e-5;
  std::size_t sparsity_warmup_steps = 0;
  /// Overrides the model's sparsity coefficient when set.
  std::optional<double> sparsity_coeff;
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::size_t checkpoint_interval = 0;  // 0 disables checkpoints
  std::filesystem::path checkpoint_dir;
  std::size_t eval_interval = 200;
  /// Keep a copy of W_dec at every eval record (needed for PW-MCC curves).
  bool keep_snapshots = false;
  /// Global-norm clip for the Standard architecture; <= 0 disables.
  double standard_clip_norm = 1.0;
  /// Adam constants.
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;

  void validate() const;
};

/// Learning rate at a 0-based step: linear warmup lr*step/warmup, then
/// lr times decay_factor per passed decay step, floored at min_lr.
double learning_rate(const TrainConfig& cfg, std::size_t step);
/// Sparsity coefficient multiplier in [0, 1].
double sparsity_scale(const TrainConfig& cfg, std::size_t step);

struct TraceRecord {
  std::size_t step = 0;
  double recon_loss = 0.0;
  double sparsity_loss = 0.0;
  double mean_l0 = 0.0;
  double lr = 0.0;
  std::optional<double> gt_mcc;
};

struct TrainTrace {
  std::uint64_t seed = 0;
  std::vector<TraceRecord> records;
  std::vector<Eigen::MatrixXd> snapshots;  // aligned with records when kept
  std::vector<std::filesystem::path> checkpoints;

  /// Mean GT-MCC over the final ceil(100 / eval_interval) records.
  double final_gt_mcc(std::size_t eval_interval) const;
};

/// Thrown when the loss becomes non-finite.
class TrainingDiverged : public std::runtime_error {
 public:
  TrainingDiverged(std::uint64_t seed, std::size_t step);
  std::uint64_t seed;
  std::size_t step;
};

/// Adam over a flat list of parameter blocks.
class Adam {
 public:
  Adam(double beta1, double beta2, double eps) : beta1_(beta1), beta2_(beta2), eps_(eps) {}
  /// Applies one update to every block; grads[i] must match params[i].
  void step(const std::vector<Eigen::Map<Eigen::VectorXd>>& params,
            const std::vector<Eigen::Map<const Eigen::VectorXd>>& grads, double lr);
  std::size_t iterations() const { return t_; }

 private:
  double beta1_, beta2_, eps_;
  std::size_t t_ = 0;
  std::vector<Eigen::VectorXd> m_, v_;
};

struct TrainResult {
  SaeModel model;
  TrainTrace trace;
};

/// Trains `model` in place on `data`. Batch order comes from `seed`.
TrainResult train(SaeModel model, const Dataset& data, const TrainConfig& cfg,
                  const Dictionary* ground_truth = nullptr, std::uint64_t seed = 0);

/// One independent run per cfg.seeds entry over identical data. Model
/// initialization and batch order both derive from the run's seed.
std::vector<TrainResult> train_multi_seed(Arch arch, const ArchParams& params, std::size_t d_sae,
                                          const Dataset& data, const TrainConfig& cfg,
                                          const Dictionary* ground_truth = nullptr,
                                          std::size_t workers = 1);

struct KSweepRow {
  std::size_t k = 0;
  double mean_gt_mcc = 0.0;
  std::vector<double> per_seed;
};

/// Trains TopK SAEs with each k on data drawn from `spec` and reports the
/// smoothed final GT-MCC averaged over seeds.
std::vector<KSweepRow> k_sweep(const GroundTruthSpec& spec, std::span<const std::size_t> k_values,
                               std::size_t d_sae, const TrainConfig& cfg, std::size_t workers = 1);

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path);

}  // namespace saelab
