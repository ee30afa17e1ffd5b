#include "saelab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "saelab/container.hpp"
#include "saelab/metrics.hpp"
#include "saelab/parallel.hpp"
#include "saelab/rng.hpp"

namespace saelab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

void TrainConfig::validate() const {
  if (steps == 0) throw std::invalid_argument("train config: steps must be positive");
  if (warmup_steps >= steps) throw std::invalid_argument("train config: warmup_steps must be < steps");
  if (min_lr > lr) throw std::invalid_argument("train config: min_lr must be <= lr");
  if (batch_size == 0) throw std::invalid_argument("train config: batch_size must be >= 1");
  if (eval_interval == 0) throw std::invalid_argument("train config: eval_interval must be >= 1");
}

double learning_rate(const TrainConfig& cfg, std::size_t step) {
  if (step < cfg.warmup_steps)
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  double lr = cfg.lr;
  for (std::size_t s : cfg.lr_decay_steps)
    if (step >= s) lr *= cfg.lr_decay_factor;
  return std::max(lr, cfg.min_lr);
}

double sparsity_scale(const TrainConfig& cfg, std::size_t step) {
  if (cfg.sparsity_warmup_steps == 0 || step >= cfg.sparsity_warmup_steps) return 1.0;
  return static_cast<double>(step) / static_cast<double>(cfg.sparsity_warmup_steps);
}

double TrainTrace::final_gt_mcc(std::size_t eval_interval) const {
  const std::size_t want = (100 + eval_interval - 1) / std::max<std::size_t>(1, eval_interval);
  double sum = 0.0;
  std::size_t count = 0;
  for (auto it = records.rbegin(); it != records.rend() && count < want; ++it)
    if (it->gt_mcc) {
      sum += *it->gt_mcc;
      ++count;
    }
  return count ? sum / static_cast<double>(count) : std::nan("");
}

TrainingDiverged::TrainingDiverged(std::uint64_t s, std::size_t st)
    : std::runtime_error("training diverged (non-finite loss) for seed " + std::to_string(s) + " at step " +
                         std::to_string(st)),
      seed(s),
      step(st) {}

void Adam::step(const std::vector<Eigen::Map<VectorXd>>& params,
                const std::vector<Eigen::Map<const VectorXd>>& grads, double lr) {
  if (m_.empty()) {
    for (const auto& p : params) {
      m_.push_back(VectorXd::Zero(p.size()));
      v_.push_back(VectorXd::Zero(p.size()));
    }
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params.size(); ++i) {
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * grads[i];
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * grads[i].cwiseProduct(grads[i]);
    Eigen::Map<VectorXd> target = params[i];
    target.array() -= lr * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
  }
}

namespace {

// Shuffle-and-cycle over a fixed dataset, one seed-derived permutation per epoch.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::uint64_t seed) : n_(n), seed_(seed) { reshuffle(); }
  void next(std::vector<std::size_t>& out, std::size_t batch) {
    out.resize(batch);
    for (auto& idx : out) {
      if (pos_ == n_) {
        ++epoch_;
        reshuffle();
      }
      idx = perm_[pos_++];
    }
  }

 private:
  void reshuffle() {
    perm_.resize(n_);
    std::iota(perm_.begin(), perm_.end(), 0);
    CounterRng rng(seed_, Stream::BatchOrder, epoch_);
    for (std::size_t i = n_; i > 1; --i) std::swap(perm_[i - 1], perm_[rng.below(i)]);
    pos_ = 0;
  }
  std::size_t n_;
  std::uint64_t seed_;
  std::uint64_t epoch_ = 0;
  std::size_t pos_ = 0;
  std::vector<std::size_t> perm_;
};

template <typename M>
Eigen::Map<VectorXd> flat(M& m) {
  return {m.data(), m.size()};
}
template <typename M>
Eigen::Map<const VectorXd> cflat(const M& m) {
  return {m.data(), m.size()};
}

TraceRecord make_record(std::size_t step, const ForwardResult& fwd, double lr, const SaeModel& model,
                        const Dictionary* gt) {
  TraceRecord r;
  r.step = step;
  r.recon_loss = fwd.mean_recon();
  r.sparsity_loss = fwd.sparsity_loss;
  r.mean_l0 = fwd.mean_l0();
  r.lr = lr;
  if (gt) r.gt_mcc = gt_mcc(model.W_dec, *gt).mean;
  return r;
}

// Rescales lambda_s so the penalty on this batch is unchanged by the switch to p_new.
void adapt_panneal(SaeModel& model, const ForwardResult& fwd, double p_new) {
  auto& p = model.params;
  double old_sum = 0.0, new_sum = 0.0;
  const double* v = fwd.f.valuePtr();
  for (Index i = 0; i < fwd.f.nonZeros(); ++i) {
    old_sum += std::pow(v[i], p.p_current);
    new_sum += std::pow(v[i], p_new);
  }
  if (old_sum > 0.0 && new_sum > 0.0) p.lambda_s *= old_sum / new_sum;
  p.p_current = p_new;
}

}  // namespace

TrainResult train(SaeModel model, const Dataset& data, const TrainConfig& cfg, const Dictionary* gt,
                  std::uint64_t seed) {
  cfg.validate();
  model.validate();
  if (data.m() != model.m()) throw std::invalid_argument("train: data dimension does not match model");
  if (data.n() == 0) throw std::invalid_argument("train: empty dataset");
  if (cfg.sparsity_coeff) {
    model.params.sparsity_coeff = *cfg.sparsity_coeff;
    if (model.arch == Arch::PAnneal) model.params.lambda_s = *cfg.sparsity_coeff;
  }
  if (!cfg.checkpoint_dir.empty() && cfg.checkpoint_interval > 0)
    std::filesystem::create_directories(cfg.checkpoint_dir);

  TrainResult res;
  res.trace.seed = seed;
  BatchSampler sampler(data.n(), seed);
  Adam adam(cfg.beta1, cfg.beta2, cfg.adam_eps);
  std::vector<std::size_t> idx;
  MatrixXd xb(static_cast<Index>(data.m()), static_cast<Index>(cfg.batch_size));
  VectorXd log_threshold;
  if (model.arch == Arch::JumpReLU) log_threshold = model.threshold.array().log();

  const auto record = [&](TraceRecord r) {
    res.trace.records.push_back(std::move(r));
    if (cfg.keep_snapshots) res.trace.snapshots.push_back(model.W_dec);
  };

  for (std::size_t step = 0; step < cfg.steps; ++step) {
    sampler.next(idx, cfg.batch_size);
    for (std::size_t t = 0; t < idx.size(); ++t) xb.col(static_cast<Index>(t)) = data.X.col(static_cast<Index>(idx[t]));

    const double lr = learning_rate(cfg, step);
    ForwardOptions opt;
    opt.training = true;
    opt.lambda_scale = sparsity_scale(cfg, step);
    ForwardResult fwd = forward(model, xb, opt);
    if (!std::isfinite(fwd.total_loss())) throw TrainingDiverged(seed, step);
    if (step % cfg.eval_interval == 0) record(make_record(step, fwd, lr, model, gt));

    Gradients g = backward(model, xb, fwd, opt);
    if (model.arch == Arch::Standard && cfg.standard_clip_norm > 0.0) {
      const double norm = std::sqrt(g.squared_norm());
      if (norm > cfg.standard_clip_norm) g.scale(cfg.standard_clip_norm / norm);
    }
    if (!std::isfinite(g.squared_norm())) throw TrainingDiverged(seed, step);

    std::vector<Eigen::Map<VectorXd>> params{flat(model.W_enc), flat(model.b_enc), flat(model.W_dec), flat(model.b_dec)};
    std::vector<Eigen::Map<const VectorXd>> grads{cflat(g.W_enc), cflat(g.b_enc), cflat(g.W_dec), cflat(g.b_dec)};
    VectorXd g_log_threshold;
    if (model.arch == Arch::Gated) {
      params.push_back(flat(model.r_mag));
      params.push_back(flat(model.b_gate));
      grads.push_back(cflat(g.r_mag));
      grads.push_back(cflat(g.b_gate));
    }
    if (model.arch == Arch::JumpReLU) {
      g_log_threshold = g.threshold.cwiseProduct(model.threshold);
      params.push_back(flat(log_threshold));
      grads.push_back(cflat(g_log_threshold));
    }
    adam.step(params, grads, lr);

    if (model.arch == Arch::JumpReLU) model.threshold = log_threshold.array().exp();
    if (model.arch == Arch::PAnneal) {
      for (Index j = 0; j < model.W_dec.cols(); ++j) {
        const double nrm = model.W_dec.col(j).norm();
        if (nrm > 0.0) model.W_dec.col(j) /= nrm;
      }
    }
    if (model.arch == Arch::PAnneal) {
      const std::size_t next = step + 1;
      if (next % model.params.anneal_interval == 0) {
        const double p_new = panneal_exponent(next, cfg.steps, model.params.p_end);
        if (p_new != model.params.p_current) adapt_panneal(model, fwd, p_new);
      }
    }

    if (cfg.checkpoint_interval > 0 && !cfg.checkpoint_dir.empty() && (step + 1) % cfg.checkpoint_interval == 0) {
      char name[64];
      std::snprintf(name, sizeof name, "model_step%07zu.saec", step + 1);
      const auto path = cfg.checkpoint_dir / name;
      write_model(path, model);
      res.trace.checkpoints.push_back(path);
    }
  }

  // Final record reflects the trained model on the last batch.
  if (res.trace.records.empty() || res.trace.records.back().step != cfg.steps) {
    const ForwardResult fwd = forward_eval(model, xb);
    if (!std::isfinite(fwd.total_loss())) throw TrainingDiverged(seed, cfg.steps);
    record(make_record(cfg.steps, fwd, learning_rate(cfg, cfg.steps - 1), model, gt));
  }
  res.model = std::move(model);
  return res;
}

std::vector<TrainResult> train_multi_seed(Arch arch, const ArchParams& params, std::size_t d_sae,
                                          const Dataset& data, const TrainConfig& cfg, const Dictionary* gt,
                                          std::size_t workers) {
  if (cfg.seeds.size() < 2) throw std::invalid_argument("train_multi_seed: need at least two seeds");
  std::vector<TrainResult> out(cfg.seeds.size());
  parallel_for(cfg.seeds.size(), workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      const auto seed = cfg.seeds[i];
      try {
        out[i] = train(init_model(arch, data.m(), d_sae, params, seed), data, cfg, gt, seed);
      } catch (const TrainingDiverged&) {
        throw;
      } catch (const std::exception& e) {
        throw std::runtime_error("seed " + std::to_string(seed) + ": " + e.what());
      }
    }
  });
  return out;
}

std::vector<KSweepRow> k_sweep(const GroundTruthSpec& spec, std::span<const std::size_t> k_values, std::size_t d_sae,
                               const TrainConfig& cfg, std::size_t workers) {
  const Dictionary a_gt = sample_ground_truth(spec);
  const Dataset data = sample_dataset(spec, a_gt, workers);
  std::vector<KSweepRow> rows;
  for (std::size_t k : k_values) {
    ArchParams p;
    p.k = k;
    const auto runs = train_multi_seed(Arch::TopK, p, d_sae, data, cfg, &a_gt, workers);
    KSweepRow row;
    row.k = k;
    for (const auto& r : runs) row.per_seed.push_back(r.trace.final_gt_mcc(cfg.eval_interval));
    row.mean_gt_mcc = std::accumulate(row.per_seed.begin(), row.per_seed.end(), 0.0) /
                      static_cast<double>(row.per_seed.size());
    rows.push_back(std::move(row));
  }
  return rows;
}

void write_trace_csv(const TrainTrace& trace, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open '" + path.string() + "' for writing");
  out << "step,recon_loss,sparsity_loss,mean_l0,lr,gt_mcc\n";
  char line[256];
  for (const auto& r : trace.records) {
    std::snprintf(line, sizeof line, "%zu,%.10g,%.10g,%.10g,%.10g,", r.step, r.recon_loss, r.sparsity_loss,
                  r.mean_l0, r.lr);
    out << line;
    if (r.gt_mcc) {
      std::snprintf(line, sizeof line, "%.10g", *r.gt_mcc);
      out << line;
    }
    out << '\n';
  }
}

}  // namespace saelab
