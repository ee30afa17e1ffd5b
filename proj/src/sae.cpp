#include "saelab/sae.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "saelab/rng.hpp"

namespace saelab {

namespace {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

// Builds column-compressed activations from (row, value) lists already in
// ascending row order per column.
class ActsBuilder {
 public:
  ActsBuilder(Index rows, Index cols, Index reserve) : acts_(rows, cols) { acts_.reserve(reserve); }
  void start(Index col) { acts_.startVec(col); }
  void push(Index row, Index col, double v) { acts_.insertBack(row, col) = v; }
  SparseActs finish() {
    acts_.finalize();
    return std::move(acts_);
  }

 private:
  SparseActs acts_;
};

// Positive entries of each column strictly above a per-row cutoff.
template <typename Cutoff>
SparseActs select_above(const MatrixXd& pre, Cutoff cutoff) {
  ActsBuilder b(pre.rows(), pre.cols(), pre.size() / 4 + 1);
  for (Index c = 0; c < pre.cols(); ++c) {
    b.start(c);
    for (Index r = 0; r < pre.rows(); ++r) {
      const double v = pre(r, c);
      if (v > 0.0 && v > cutoff(r)) b.push(r, c, v);
    }
  }
  return b.finish();
}

void finish_forward(const SaeModel& model, const MatrixXd& x, ForwardResult& out) {
  out.x_hat = decode(model, out.f);
  out.recon_loss = (out.x_hat - x).colwise().squaredNorm().transpose();
  out.active.assign(static_cast<std::size_t>(x.cols()), 0);
  for (Index c = 0; c < out.f.outerSize(); ++c)
    out.active[static_cast<std::size_t>(c)] =
        static_cast<std::size_t>(out.f.outerIndexPtr()[c + 1] - out.f.outerIndexPtr()[c]);
  if (out.penalty.size() != x.cols()) out.penalty = VectorXd::Zero(x.cols());
}

VectorXd decoder_norms(const SaeModel& model) { return model.W_dec.colwise().norm().transpose(); }

void check_input(const SaeModel& model, const MatrixXd& x) {
  if (static_cast<std::size_t>(x.rows()) != model.m())
    throw std::invalid_argument("forward: input rows do not match model input dimension");
}

// lambda * sum_j f_j * ||a_j||, per sample.
VectorXd norm_weighted_l1(const SparseActs& f, const VectorXd& norms, double lambda) {
  VectorXd pen = VectorXd::Zero(f.cols());
  for (Index c = 0; c < f.outerSize(); ++c)
    for (SparseActs::InnerIterator it(f, c); it; ++it) pen[c] += std::abs(it.value()) * norms[it.row()];
  return lambda * pen;
}

}  // namespace

std::string to_string(Arch arch) {
  switch (arch) {
    case Arch::Standard: return "standard";
    case Arch::TopK: return "topk";
    case Arch::BatchTopK: return "batchtopk";
    case Arch::Gated: return "gated";
    case Arch::PAnneal: return "panneal";
    case Arch::JumpReLU: return "jumprelu";
  }
  return "unknown";
}

Arch parse_arch(const std::string& name) {
  std::string s;
  for (char ch : name)
    if (ch != '-' && ch != '_') s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(ch))));
  for (Arch a : {Arch::Standard, Arch::TopK, Arch::BatchTopK, Arch::Gated, Arch::PAnneal, Arch::JumpReLU})
    if (to_string(a) == s) return a;
  throw std::invalid_argument("unknown architecture '" + name + "'");
}

bool uses_sparsity_penalty(Arch arch) {
  return arch == Arch::Standard || arch == Arch::Gated || arch == Arch::PAnneal || arch == Arch::JumpReLU;
}

void SaeModel::validate() const {
  const Index d = W_dec.cols(), mm = W_dec.rows();
  if (d == 0 || mm == 0) throw std::invalid_argument("model dimensions must be positive");
  if (W_enc.rows() != d || W_enc.cols() != mm || b_enc.size() != d || b_dec.size() != mm)
    throw std::invalid_argument("model weight shapes are inconsistent");
  switch (arch) {
    case Arch::TopK:
    case Arch::BatchTopK:
      if (params.k < 1 || params.k > static_cast<std::size_t>(d))
        throw std::invalid_argument("TopK/BatchTopK need 1 <= k <= d_sae");
      if (arch == Arch::BatchTopK && !(params.ema_decay > 0.0 && params.ema_decay < 1.0))
        throw std::invalid_argument("BatchTopK ema_decay must lie in (0, 1)");
      if (params.ema_threshold < 0.0) throw std::invalid_argument("BatchTopK threshold must be >= 0");
      break;
    case Arch::Gated:
      if (r_mag.size() != d || b_gate.size() != d) throw std::invalid_argument("Gated parameter shapes");
      break;
    case Arch::PAnneal:
      if (!(params.p_end > 0.0 && params.p_end <= 1.0) || !(params.p_current >= params.p_end) ||
          params.p_current > 1.0)
        throw std::invalid_argument("PAnneal needs 1 >= p_s >= p_end > 0");
      if (params.anneal_interval == 0) throw std::invalid_argument("PAnneal interval must be positive");
      break;
    case Arch::JumpReLU:
      if (threshold.size() != d || (threshold.array() <= 0.0).any())
        throw std::invalid_argument("JumpReLU thresholds must be positive");
      if (!(params.target_l0 > 0.0) || !(params.bandwidth > 0.0))
        throw std::invalid_argument("JumpReLU target L0 and bandwidth must be positive");
      break;
    case Arch::Standard: break;
  }
  if (params.sparsity_coeff < 0.0) throw std::invalid_argument("sparsity coefficient must be >= 0");
}

SaeModel init_model(Arch arch, std::size_t m, std::size_t d_sae, const ArchParams& params,
                    std::uint64_t seed) {
  if (m == 0 || d_sae == 0) throw std::invalid_argument("init_model: dimensions must be positive");
  SaeModel model;
  model.arch = arch;
  model.params = params;
  CounterRng rng(seed, Stream::ModelInit);
  model.W_dec.resize(static_cast<Index>(m), static_cast<Index>(d_sae));
  for (Index j = 0; j < model.W_dec.cols(); ++j)
    for (Index i = 0; i < model.W_dec.rows(); ++i) model.W_dec(i, j) = rng.normal();
  model.W_dec.colwise().normalize();
  model.W_enc = model.W_dec.transpose();
  model.b_enc = VectorXd::Zero(static_cast<Index>(d_sae));
  model.b_dec = VectorXd::Zero(static_cast<Index>(m));
  if (arch == Arch::Gated) {
    model.r_mag = VectorXd::Zero(static_cast<Index>(d_sae));
    model.b_gate = VectorXd::Zero(static_cast<Index>(d_sae));
  }
  if (arch == Arch::JumpReLU)
    model.threshold = VectorXd::Constant(static_cast<Index>(d_sae), params.initial_threshold);
  if (arch == Arch::PAnneal) {
    model.params.p_current = 1.0;
    model.params.lambda_s = params.sparsity_coeff;
  }
  if (arch == Arch::BatchTopK) {
    model.params.ema_threshold = 0.0;
    model.params.ema_initialized = false;
  }
  model.validate();
  return model;
}

double ForwardResult::mean_l0() const {
  if (active.empty()) return 0.0;
  return static_cast<double>(std::accumulate(active.begin(), active.end(), std::size_t{0})) /
         static_cast<double>(active.size());
}

MatrixXd encoder_preactivations(const SaeModel& model, const MatrixXd& x) {
  MatrixXd pre = model.W_enc * x;
  pre.colwise() += model.b_enc;
  return pre;
}

MatrixXd decode(const SaeModel& model, const SparseActs& f) {
  MatrixXd x_hat = model.W_dec * f;
  x_hat.colwise() += model.b_dec;
  return x_hat;
}

SparseActs topk_select(const MatrixXd& pre, std::size_t k) {
  const Index rows = pre.rows();
  ActsBuilder b(rows, pre.cols(), pre.cols() * static_cast<Index>(k));
  std::vector<Index> cand;
  cand.reserve(static_cast<std::size_t>(rows));
  // Small k: one pass with a sorted insertion buffer. Rows are visited in
  // increasing order and only strictly larger values displace, so ties keep
  // the lower index.
  constexpr std::size_t kInsertionLimit = 32;
  std::vector<double> top_val(std::min(k, kInsertionLimit));
  std::vector<Index> top_idx(top_val.size());
  for (Index c = 0; c < pre.cols(); ++c) {
    const double* col = pre.col(c).data();
    cand.clear();
    if (k <= kInsertionLimit) {
      std::size_t filled = 0;
      for (Index r = 0; r < rows; ++r) {
        const double v = col[r];
        if (!(v > 0.0) || (filled == k && !(v > top_val[k - 1]))) continue;
        std::size_t pos = filled < k ? filled++ : k - 1;
        while (pos > 0 && v > top_val[pos - 1]) {
          top_val[pos] = top_val[pos - 1];
          top_idx[pos] = top_idx[pos - 1];
          --pos;
        }
        top_val[pos] = v;
        top_idx[pos] = r;
      }
      cand.assign(top_idx.begin(), top_idx.begin() + static_cast<std::ptrdiff_t>(filled));
    } else {
      // Strict weak order: larger value first, then lower index.
      const auto better = [col](Index a, Index b2) { return col[a] > col[b2] || (col[a] == col[b2] && a < b2); };
      for (Index r = 0; r < rows; ++r)
        if (col[r] > 0.0) cand.push_back(r);
      if (cand.size() > k) {
        std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(k - 1), cand.end(), better);
        cand.resize(k);
      }
    }
    std::sort(cand.begin(), cand.end());
    b.start(c);
    for (Index r : cand) b.push(r, c, col[r]);
  }
  return b.finish();
}

SparseActs batch_topk_select(const MatrixXd& pre, std::size_t k, double* min_kept) {
  const double* data = pre.data();
  std::vector<Index> cand;
  cand.reserve(static_cast<std::size_t>(pre.size() / 4 + 1));
  for (Index i = 0; i < pre.size(); ++i)
    if (data[i] > 0.0) cand.push_back(i);
  const std::size_t budget = k * static_cast<std::size_t>(pre.cols());
  const auto better = [data](Index a, Index b2) { return data[a] > data[b2] || (data[a] == data[b2] && a < b2); };
  if (cand.size() > budget) {
    std::nth_element(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(budget - 1), cand.end(), better);
    cand.resize(budget);
  }
  double lowest = 0.0;
  if (!cand.empty()) {
    lowest = data[cand.front()];
    for (Index i : cand) lowest = std::min(lowest, data[i]);
  }
  if (min_kept) *min_kept = lowest;
  std::sort(cand.begin(), cand.end());  // column-major flat order
  ActsBuilder b(pre.rows(), pre.cols(), static_cast<Index>(cand.size()));
  std::size_t pos = 0;
  for (Index c = 0; c < pre.cols(); ++c) {
    b.start(c);
    for (; pos < cand.size() && cand[pos] / pre.rows() == c; ++pos) b.push(cand[pos] % pre.rows(), c, data[cand[pos]]);
  }
  return b.finish();
}

ForwardResult forward_standard(const SaeModel& model, const MatrixXd& x, const ForwardOptions& opt) {
  check_input(model, x);
  ForwardResult out;
  out.pre = encoder_preactivations(model, x);
  out.f = select_above(out.pre, [](Index) { return 0.0; });
  out.penalty = norm_weighted_l1(out.f, decoder_norms(model), model.params.sparsity_coeff * opt.lambda_scale);
  finish_forward(model, x, out);
  out.sparsity_loss = out.penalty.mean();
  return out;
}

ForwardResult forward_topk(const SaeModel& model, const MatrixXd& x, const ForwardOptions&) {
  check_input(model, x);
  ForwardResult out;
  out.pre = encoder_preactivations(model, x);
  out.f = topk_select(out.pre, model.params.k);
  finish_forward(model, x, out);
  return out;
}

namespace {

ForwardResult threshold_batchtopk(const SaeModel& model, const MatrixXd& x) {
  ForwardResult out;
  out.pre = encoder_preactivations(model, x);
  const double t = model.params.ema_threshold;
  out.f = select_above(out.pre, [t](Index) { return t; });
  finish_forward(model, x, out);
  return out;
}

}  // namespace

ForwardResult forward_batchtopk(SaeModel& model, const MatrixXd& x, bool training, const ForwardOptions&) {
  check_input(model, x);
  if (x.cols() == 0) throw std::invalid_argument("forward_batchtopk: empty batch");
  auto& p = model.params;
  if (training) {
    ForwardResult out;
    out.pre = encoder_preactivations(model, x);
    double min_kept = 0.0;
    out.f = batch_topk_select(out.pre, p.k, &min_kept);
    if (out.f.nonZeros() > 0) {
      if (!p.ema_initialized) {
        p.ema_threshold = min_kept;
        p.ema_initialized = true;
      } else {
        p.ema_threshold = p.ema_decay * p.ema_threshold + (1.0 - p.ema_decay) * min_kept;
      }
    }
    finish_forward(model, x, out);
    return out;
  }
  return threshold_batchtopk(model, x);
}

ForwardResult forward_gated(const SaeModel& model, const MatrixXd& x, const ForwardOptions& opt) {
  check_input(model, x);
  ForwardResult out;
  out.wx = model.W_enc * x;
  out.gate_pre = out.wx;
  out.gate_pre.colwise() += model.b_gate;
  out.pre = model.r_mag.array().exp().matrix().asDiagonal() * out.wx;
  out.pre.colwise() += model.b_enc;
  ActsBuilder b(out.pre.rows(), out.pre.cols(), out.pre.size() / 4 + 1);
  for (Index c = 0; c < out.pre.cols(); ++c) {
    b.start(c);
    for (Index r = 0; r < out.pre.rows(); ++r)
      if (out.gate_pre(r, c) > 0.0 && out.pre(r, c) > 0.0) b.push(r, c, out.pre(r, c));
  }
  out.f = b.finish();

  const VectorXd norms = decoder_norms(model);
  const MatrixXd gate_relu = out.gate_pre.cwiseMax(0.0);
  out.penalty = model.params.sparsity_coeff * opt.lambda_scale * (gate_relu.transpose() * norms);
  finish_forward(model, x, out);
  out.sparsity_loss = out.penalty.mean();

  const MatrixXd& aux_dec = opt.aux_decoder ? *opt.aux_decoder : model.W_dec;
  const VectorXd& aux_bias = opt.aux_decoder_bias ? *opt.aux_decoder_bias : model.b_dec;
  MatrixXd aux = aux_dec * gate_relu;
  aux.colwise() += aux_bias;
  out.aux_loss = (aux - x).colwise().squaredNorm().mean();
  return out;
}

ForwardResult forward_panneal(const SaeModel& model, const MatrixXd& x, const ForwardOptions& opt) {
  check_input(model, x);
  ForwardResult out;
  out.pre = encoder_preactivations(model, x);
  out.f = select_above(out.pre, [](Index) { return 0.0; });
  const double p = model.params.p_current;
  const double lambda = model.params.lambda_s * opt.lambda_scale;
  out.penalty = VectorXd::Zero(x.cols());
  for (Index c = 0; c < out.f.outerSize(); ++c)
    for (SparseActs::InnerIterator it(out.f, c); it; ++it) out.penalty[c] += std::pow(std::abs(it.value()), p);
  out.penalty *= lambda;
  finish_forward(model, x, out);
  out.sparsity_loss = out.penalty.mean();
  return out;
}

ForwardResult forward_jumprelu(const SaeModel& model, const MatrixXd& x, const ForwardOptions& opt) {
  check_input(model, x);
  ForwardResult out;
  out.pre = encoder_preactivations(model, x);
  const VectorXd& theta = model.threshold;
  out.f = select_above(out.pre, [&theta](Index r) { return theta[r]; });
  finish_forward(model, x, out);
  const double lambda = model.params.sparsity_coeff * opt.lambda_scale;
  const double target = model.params.target_l0;
  out.penalty.resize(x.cols());
  for (Index c = 0; c < x.cols(); ++c) {
    const double ratio = static_cast<double>(out.active[static_cast<std::size_t>(c)]) / target - 1.0;
    out.penalty[c] = lambda * ratio * ratio;
  }
  const double ratio = out.mean_l0() / target - 1.0;
  out.sparsity_loss = lambda * ratio * ratio;
  return out;
}

ForwardResult forward(SaeModel& model, const MatrixXd& x, const ForwardOptions& opt) {
  switch (model.arch) {
    case Arch::Standard: return forward_standard(model, x, opt);
    case Arch::TopK: return forward_topk(model, x, opt);
    case Arch::BatchTopK: return forward_batchtopk(model, x, opt.training, opt);
    case Arch::Gated: return forward_gated(model, x, opt);
    case Arch::PAnneal: return forward_panneal(model, x, opt);
    case Arch::JumpReLU: return forward_jumprelu(model, x, opt);
  }
  throw std::logic_error("forward: unknown architecture");
}

ForwardResult forward_eval(const SaeModel& model, const MatrixXd& x) {
  switch (model.arch) {
    case Arch::Standard: return forward_standard(model, x);
    case Arch::TopK: return forward_topk(model, x);
    case Arch::BatchTopK: return threshold_batchtopk(model, x);
    case Arch::Gated: return forward_gated(model, x);
    case Arch::PAnneal: return forward_panneal(model, x);
    case Arch::JumpReLU: return forward_jumprelu(model, x);
  }
  throw std::logic_error("forward_eval: unknown architecture");
}

double panneal_exponent(std::size_t step, std::size_t total_steps, double p_end) {
  if (total_steps == 0 || step >= total_steps) return p_end;
  const double t = static_cast<double>(step) / static_cast<double>(total_steps);
  return 1.0 + t * (p_end - 1.0);
}

double Gradients::squared_norm() const {
  double s = W_enc.squaredNorm() + W_dec.squaredNorm() + b_enc.squaredNorm() + b_dec.squaredNorm();
  s += r_mag.squaredNorm() + b_gate.squaredNorm() + threshold.squaredNorm();
  return s;
}

void Gradients::scale(double s) {
  W_enc *= s;
  W_dec *= s;
  b_enc *= s;
  b_dec *= s;
  r_mag *= s;
  b_gate *= s;
  threshold *= s;
}

namespace {

Gradients backward_gated(const SaeModel& model, const MatrixXd& x, const ForwardResult& fwd,
                         const ForwardOptions& opt) {
  const double inv_b = 1.0 / static_cast<double>(x.cols());
  const double lambda = model.params.sparsity_coeff * opt.lambda_scale;
  const VectorXd norms = decoder_norms(model);
  const MatrixXd g_xhat = 2.0 * inv_b * (fwd.x_hat - x);
  const MatrixXd gate_relu = fwd.gate_pre.cwiseMax(0.0);
  const MatrixXd dense_f = MatrixXd(fwd.f);

  Gradients g;
  g.W_dec = g_xhat * dense_f.transpose();
  const VectorXd gate_mass = gate_relu.rowwise().sum() * inv_b;
  for (Index j = 0; j < g.W_dec.cols(); ++j)
    if (norms[j] > 0.0) g.W_dec.col(j) += lambda * gate_mass[j] / norms[j] * model.W_dec.col(j);
  g.b_dec = g_xhat.rowwise().sum();

  const MatrixXd g_f = model.W_dec.transpose() * g_xhat;
  const MatrixXd mag_mask =
      ((fwd.gate_pre.array() > 0.0) && (fwd.pre.array() > 0.0)).cast<double>().matrix();
  const MatrixXd g_mag = g_f.cwiseProduct(mag_mask);

  const MatrixXd& aux_dec = opt.aux_decoder ? *opt.aux_decoder : model.W_dec;
  const VectorXd& aux_bias = opt.aux_decoder_bias ? *opt.aux_decoder_bias : model.b_dec;
  MatrixXd aux_res = aux_dec * gate_relu;
  aux_res.colwise() += aux_bias;
  aux_res -= x;
  const MatrixXd gate_open = (fwd.gate_pre.array() > 0.0).cast<double>().matrix();
  MatrixXd g_gate = (2.0 * inv_b) * (aux_dec.transpose() * aux_res);
  g_gate.colwise() += lambda * inv_b * norms;
  g_gate = g_gate.cwiseProduct(gate_open);

  const VectorXd scale = model.r_mag.array().exp().matrix();
  g.W_enc = (g_gate + scale.asDiagonal() * g_mag) * x.transpose();
  g.r_mag = scale.cwiseProduct(g_mag.cwiseProduct(fwd.wx).rowwise().sum());
  g.b_enc = g_mag.rowwise().sum();
  g.b_gate = g_gate.rowwise().sum();
  return g;
}

}  // namespace

Gradients backward(const SaeModel& model, const MatrixXd& x, const ForwardResult& fwd, const ForwardOptions& opt) {
  if (model.arch == Arch::Gated) return backward_gated(model, x, fwd, opt);

  const double inv_b = 1.0 / static_cast<double>(x.cols());
  const MatrixXd g_xhat = 2.0 * inv_b * (fwd.x_hat - x);
  const double lambda_scale = opt.lambda_scale;
  const auto& p = model.params;

  Gradients g;
  g.W_dec = g_xhat * fwd.f.transpose();
  g.b_dec = g_xhat.rowwise().sum();

  VectorXd norms;
  if (model.arch == Arch::Standard) norms = decoder_norms(model);

  // dL/dpre on the active set; every architecture here passes gradient only
  // through active units.
  SparseActs g_pre = fwd.f;
  double* gv = g_pre.valuePtr();
  const double* fv = fwd.f.valuePtr();
  for (Index c = 0; c < fwd.f.outerSize(); ++c) {
    for (Index nz = fwd.f.outerIndexPtr()[c]; nz < fwd.f.outerIndexPtr()[c + 1]; ++nz) {
      const Index j = fwd.f.innerIndexPtr()[nz];
      double v = model.W_dec.col(j).dot(g_xhat.col(c));
      switch (model.arch) {
        case Arch::Standard: v += p.sparsity_coeff * lambda_scale * norms[j] * inv_b; break;
        case Arch::PAnneal:
          v += p.lambda_s * lambda_scale * p.p_current * std::pow(fv[nz], p.p_current - 1.0) * inv_b;
          break;
        default: break;
      }
      gv[nz] = v;
    }
  }
  g.W_enc = g_pre * x.transpose();
  g.b_enc = VectorXd::Zero(g_pre.rows());
  for (Index c = 0; c < g_pre.outerSize(); ++c)
    for (SparseActs::InnerIterator it(g_pre, c); it; ++it) g.b_enc[it.row()] += it.value();

  if (model.arch == Arch::Standard) {
    VectorXd mass = VectorXd::Zero(fwd.f.rows());
    for (Index c = 0; c < fwd.f.outerSize(); ++c)
      for (SparseActs::InnerIterator it(fwd.f, c); it; ++it) mass[it.row()] += it.value();
    const double lambda = p.sparsity_coeff * lambda_scale * inv_b;
    for (Index j = 0; j < g.W_dec.cols(); ++j)
      if (norms[j] > 0.0) g.W_dec.col(j) += lambda * mass[j] / norms[j] * model.W_dec.col(j);
  }

  if (model.arch == Arch::JumpReLU) {
    const double eps = p.bandwidth;
    const double lambda = p.sparsity_coeff * lambda_scale;
    const double ratio = fwd.mean_l0() / p.target_l0 - 1.0;
    const double dl_dl0 = 2.0 * lambda * ratio / p.target_l0 * inv_b;
    g.threshold = VectorXd::Zero(fwd.pre.rows());
    for (Index c = 0; c < fwd.pre.cols(); ++c) {
      for (Index j = 0; j < fwd.pre.rows(); ++j) {
        const double pi = fwd.pre(j, c), theta = model.threshold[j];
        if (rectangle((pi - theta) / eps) == 0.0) continue;
        // f = pi * H(pi - theta): df/dtheta = -(theta / eps) K.
        const double g_f = model.W_dec.col(j).dot(g_xhat.col(c));
        g.threshold[j] += g_f * (-theta / eps) + dl_dl0 * heaviside_threshold_grad(pi, theta, eps);
      }
    }
  }
  return g;
}

}  // namespace saelab
