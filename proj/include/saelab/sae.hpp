#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <Eigen/SparseCore>

namespace saelab {

enum class Arch : std::uint8_t { Standard = 0, TopK = 1, BatchTopK = 2, Gated = 3, PAnneal = 4, JumpReLU = 5 };

std::string to_string(Arch arch);
/// Accepts the names produced by to_string, case-insensitively.
Arch parse_arch(const std::string& name);
bool uses_sparsity_penalty(Arch arch);

/// Per-architecture hyperparameters and mutable training state. Fields that
/// do not apply to a model's architecture are ignored.
struct ArchParams {
  /// lambda for Standard, Gated, PAnneal (initial lambda_s) and JumpReLU.
  double sparsity_coeff = 0.1;
  /// TopK / BatchTopK active count.
  std::size_t k = 0;

  // BatchTopK
  double ema_threshold = 0.0;
  double ema_decay = 0.99;
  bool ema_initialized = false;

  // PAnneal
  double p_current = 1.0;
  double p_end = 0.2;
  double lambda_s = 0.1;
  std::size_t anneal_interval = 100;

  // JumpReLU
  double target_l0 = 1.0;
  double bandwidth = 0.001;
  double initial_threshold = 0.001;
};

struct SaeModel {
  Arch arch = Arch::TopK;
  ArchParams params;
  Eigen::MatrixXd W_enc;  // d_sae x m
  Eigen::VectorXd b_enc;  // d_sae
  Eigen::MatrixXd W_dec;  // m x d_sae, columns are the learned dictionary
  Eigen::VectorXd b_dec;  // m
  Eigen::VectorXd r_mag;      // Gated: log-scale of the magnitude pathway
  Eigen::VectorXd b_gate;     // Gated: gate pathway bias
  Eigen::VectorXd threshold;  // JumpReLU: per-feature theta > 0

  std::size_t m() const { return static_cast<std::size_t>(W_dec.rows()); }
  std::size_t d_sae() const { return static_cast<std::size_t>(W_dec.cols()); }
  /// Throws std::invalid_argument if shapes or arch parameters are inconsistent.
  void validate() const;
};

/// Gaussian unit-norm decoder columns, encoder = decoder transpose, zero
/// biases. Deterministic in `seed`.
SaeModel init_model(Arch arch, std::size_t m, std::size_t d_sae, const ArchParams& params,
                    std::uint64_t seed);

using SparseActs = Eigen::SparseMatrix<double, Eigen::ColMajor>;

struct ForwardOptions {
  /// BatchTopK: global selection and EMA update instead of thresholding.
  bool training = false;
  /// Multiplier on the sparsity coefficient (sparsity warmup).
  double lambda_scale = 1.0;
  /// Gated: decoder copy the auxiliary reconstruction runs through. When
  /// unset the live decoder is used (values are identical; gradients are
  /// never propagated into it either way).
  const Eigen::MatrixXd* aux_decoder = nullptr;
  const Eigen::VectorXd* aux_decoder_bias = nullptr;
};

struct ForwardResult {
  SparseActs f;                // d_sae x B, non-negative
  Eigen::MatrixXd x_hat;       // m x B
  Eigen::VectorXd recon_loss;  // per sample squared error
  Eigen::VectorXd penalty;     // per sample sparsity penalty
  std::vector<std::size_t> active;
  /// Batch sparsity term entering the total loss.
  double sparsity_loss = 0.0;
  /// Gated auxiliary reconstruction loss (batch mean).
  double aux_loss = 0.0;

  // Intermediates kept for the backward pass.
  Eigen::MatrixXd pre;       // encoder pre-activations (magnitude path for Gated)
  Eigen::MatrixXd gate_pre;  // Gated gate path
  Eigen::MatrixXd wx;        // Gated W_enc x

  double mean_recon() const { return recon_loss.size() ? recon_loss.mean() : 0.0; }
  double mean_l0() const;
  double total_loss() const { return mean_recon() + sparsity_loss + aux_loss; }
};

Eigen::MatrixXd encoder_preactivations(const SaeModel& model, const Eigen::MatrixXd& x);
/// x_hat = W_dec f + b_dec.
Eigen::MatrixXd decode(const SaeModel& model, const SparseActs& f);

/// ReLU then per-column top-k; ties go to the lower feature index.
SparseActs topk_select(const Eigen::MatrixXd& pre, std::size_t k);
/// ReLU then the B*k largest entries over the whole batch (ties by flat index).
/// Returns the smallest kept value through `min_kept` (0 when nothing kept).
SparseActs batch_topk_select(const Eigen::MatrixXd& pre, std::size_t k, double* min_kept);

ForwardResult forward_standard(const SaeModel& model, const Eigen::MatrixXd& x,
                               const ForwardOptions& opt = {});
ForwardResult forward_topk(const SaeModel& model, const Eigen::MatrixXd& x,
                           const ForwardOptions& opt = {});
/// Training mode mutates the model's EMA threshold.
ForwardResult forward_batchtopk(SaeModel& model, const Eigen::MatrixXd& x, bool training,
                                const ForwardOptions& opt = {});
ForwardResult forward_gated(const SaeModel& model, const Eigen::MatrixXd& x,
                            const ForwardOptions& opt = {});
/// Uses the model's current exponent p_s and coefficient lambda_s.
ForwardResult forward_panneal(const SaeModel& model, const Eigen::MatrixXd& x,
                              const ForwardOptions& opt = {});
ForwardResult forward_jumprelu(const SaeModel& model, const Eigen::MatrixXd& x,
                               const ForwardOptions& opt = {});

/// Dispatches on model.arch. Only BatchTopK in training mode mutates.
ForwardResult forward(SaeModel& model, const Eigen::MatrixXd& x, const ForwardOptions& opt = {});
/// Evaluation-mode forward that never mutates.
ForwardResult forward_eval(const SaeModel& model, const Eigen::MatrixXd& x);

/// Linear p-anneal schedule: 1.0 at step 0, p_end at total_steps.
double panneal_exponent(std::size_t step, std::size_t total_steps, double p_end);

/// Rectangular STE kernel used for the JumpReLU threshold gradients.
inline double rectangle(double u) { return (u > -0.5 && u < 0.5) ? 1.0 : 0.0; }
/// Pseudo-derivative of H(pi - theta) with respect to theta.
inline double heaviside_threshold_grad(double pi, double theta, double bandwidth) {
  return -rectangle((pi - theta) / bandwidth) / bandwidth;
}

struct Gradients {
  Eigen::MatrixXd W_enc, W_dec;
  Eigen::VectorXd b_enc, b_dec, r_mag, b_gate, threshold;

  double squared_norm() const;
  void scale(double s);
};

/// Gradient of ForwardResult::total_loss with respect to every trainable
/// parameter, given the forward pass that produced `fwd` on `x`.
Gradients backward(const SaeModel& model, const Eigen::MatrixXd& x, const ForwardResult& fwd,
                   const ForwardOptions& opt = {});

}  // namespace saelab
