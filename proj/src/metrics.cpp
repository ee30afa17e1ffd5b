#include "saelab/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

#include "saelab/hungarian.hpp"

namespace saelab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

MatrixXd unit_columns(const Dictionary& a) {
  MatrixXd out = a;
  for (Index j = 0; j < out.cols(); ++j) {
    const double nrm = out.col(j).norm();
    if (nrm > 0.0)
      out.col(j) /= nrm;
    else
      out.col(j).setZero();
  }
  return out;
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

}  // namespace

MatrixXd similarity_matrix(const Dictionary& a, const Dictionary& b) {
  if (a.rows() != b.rows()) throw std::invalid_argument("similarity_matrix: dictionaries differ in m");
  MatrixXd s = (unit_columns(a).transpose() * unit_columns(b)).cwiseAbs();
  return s.unaryExpr([](double v) { return clamp01(v); });
}

MatchResult match_similarity(const MatrixXd& similarity) {
  const auto assignment = solve_assignment(-similarity);
  MatchResult out;
  for (std::size_t i = 0; i < assignment.size(); ++i) {
    if (assignment[i] < 0) continue;
    const auto j = static_cast<std::size_t>(assignment[i]);
    const double s = similarity(static_cast<Index>(i), static_cast<Index>(j));
    out.pairs.push_back({i, j, s});
    out.total += s;
  }
  const std::size_t n = std::min<std::size_t>(similarity.rows(), similarity.cols());
  out.mean = n ? clamp01(out.total / static_cast<double>(n)) : 0.0;
  return out;
}

MatchResult mcc(const Dictionary& a, const Dictionary& b) { return match_similarity(similarity_matrix(a, b)); }

FrequencyProfile activation_frequencies(const SaeModel& model, const MatrixXd& x, double dead_threshold,
                                        std::size_t chunk) {
  const Index d = static_cast<Index>(model.d_sae());
  VectorXd counts = VectorXd::Zero(d), mass = VectorXd::Zero(d);
  chunk = std::max<std::size_t>(1, chunk);
  for (Index start = 0; start < x.cols(); start += static_cast<Index>(chunk)) {
    const Index len = std::min<Index>(static_cast<Index>(chunk), x.cols() - start);
    const auto fwd = forward_eval(model, x.middleCols(start, len));
    for (Index c = 0; c < fwd.f.outerSize(); ++c)
      for (SparseActs::InnerIterator it(fwd.f, c); it; ++it)
        if (it.value() != 0.0) {
          counts[it.row()] += 1.0;
          mass[it.row()] += it.value();
        }
  }
  FrequencyProfile prof;
  const double total = std::max<double>(1.0, static_cast<double>(x.cols()));
  prof.frequency = counts / total;
  prof.mean_magnitude = VectorXd::Zero(d);
  prof.dead.assign(static_cast<std::size_t>(d), false);
  for (Index j = 0; j < d; ++j) {
    if (counts[j] > 0) prof.mean_magnitude[j] = mass[j] / counts[j];
    prof.dead[static_cast<std::size_t>(j)] = prof.frequency[j] < dead_threshold;
  }
  return prof;
}

std::string to_string(BinMode mode) { return mode == BinMode::Log ? "log" : "quantile"; }

BinnedSimilarity binned_similarity(const MatchResult& match, const FrequencyProfile& prof_a,
                                   const FrequencyProfile& prof_b, std::size_t bins, BinMode mode) {
  if (bins == 0) throw std::invalid_argument("binned_similarity: need at least one bin");
  BinnedSimilarity out;
  out.mode = mode;
  for (const auto& p : match.pairs) {
    if (p.i >= static_cast<std::size_t>(prof_a.frequency.size()) ||
        p.j >= static_cast<std::size_t>(prof_b.frequency.size()))
      throw std::invalid_argument("binned_similarity: profiles do not cover the matched indices");
    PairRecord r;
    r.i = p.i;
    r.j = p.j;
    r.similarity = p.similarity;
    r.freq_a = prof_a.frequency[static_cast<Index>(p.i)];
    r.freq_b = prof_b.frequency[static_cast<Index>(p.j)];
    r.min_freq = std::min(r.freq_a, r.freq_b);
    out.pairs.push_back(r);
  }
  const std::size_t n = out.pairs.size();

  double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
  for (const auto& r : out.pairs)
    if (r.min_freq > 0.0) {
      lo = std::min(lo, r.min_freq);
      hi = std::max(hi, r.min_freq);
    }
  const bool degenerate = !(hi > 0.0) || !(hi > lo);
  const std::size_t nbins = degenerate ? 1 : bins;
  out.bins.assign(nbins, BinSummary{});

  if (mode == BinMode::Log) {
    const double span = degenerate ? 1.0 : std::log(hi / lo);
    for (std::size_t b = 0; b < nbins; ++b) {
      out.bins[b].lo = degenerate ? (hi > 0.0 ? lo : 0.0) : lo * std::exp(span * static_cast<double>(b) / nbins);
      out.bins[b].hi = degenerate ? hi : lo * std::exp(span * static_cast<double>(b + 1) / nbins);
    }
    for (auto& r : out.pairs) {
      if (degenerate || r.min_freq <= 0.0) {
        r.bin = 0;
        continue;
      }
      const double pos = std::log(r.min_freq / lo) / span * static_cast<double>(nbins);
      r.bin = std::min<std::size_t>(nbins - 1, static_cast<std::size_t>(std::max(0.0, std::floor(pos))));
    }
  } else {
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t x, std::size_t y) { return out.pairs[x].min_freq < out.pairs[y].min_freq; });
    for (std::size_t rank = 0; rank < n; ++rank)
      out.pairs[order[rank]].bin = degenerate ? 0 : rank * nbins / n;
    for (auto& b : out.bins) {
      b.lo = std::numeric_limits<double>::infinity();
      b.hi = 0.0;
    }
    for (const auto& r : out.pairs) {
      out.bins[r.bin].lo = std::min(out.bins[r.bin].lo, r.min_freq);
      out.bins[r.bin].hi = std::max(out.bins[r.bin].hi, r.min_freq);
    }
    for (auto& b : out.bins)
      if (!std::isfinite(b.lo)) b.lo = b.hi = 0.0;
  }

  std::vector<double> sum(nbins, 0.0), sq(nbins, 0.0);
  for (const auto& r : out.pairs) {
    ++out.bins[r.bin].count;
    sum[r.bin] += r.similarity;
  }
  for (std::size_t b = 0; b < nbins; ++b)
    if (out.bins[b].count) out.bins[b].mean_similarity = sum[b] / static_cast<double>(out.bins[b].count);
  for (const auto& r : out.pairs) {
    const double dlt = r.similarity - out.bins[r.bin].mean_similarity;
    sq[r.bin] += dlt * dlt;
  }
  double running = 0.0;
  for (std::size_t b = 0; b < nbins; ++b) {
    auto& bin = out.bins[b];
    if (bin.count) bin.std_similarity = std::sqrt(sq[b] / static_cast<double>(bin.count));
    bin.contribution = n ? sum[b] / static_cast<double>(n) : 0.0;
    running += bin.contribution;
    bin.cumulative = running;
  }
  return out;
}

CapacityAllocation fit_allocation_exponent(std::span<const double> probabilities, std::span<const double> allocation) {
  if (probabilities.size() != allocation.size())
    throw std::invalid_argument("fit_allocation_exponent: size mismatch");
  CapacityAllocation out;
  out.allocation.assign(allocation.begin(), allocation.end());
  std::vector<double> xs, ys;
  for (std::size_t i = 0; i < allocation.size(); ++i)
    if (allocation[i] > 0.0 && probabilities[i] > 0.0) {
      xs.push_back(std::log(probabilities[i]));
      ys.push_back(std::log(allocation[i]));
    }
  if (xs.size() < 2) {
    out.fit_status = "too-few-clusters";
    return out;
  }
  const double n = static_cast<double>(xs.size());
  const double mx = std::accumulate(xs.begin(), xs.end(), 0.0) / n;
  const double my = std::accumulate(ys.begin(), ys.end(), 0.0) / n;
  double sxx = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < xs.size(); ++i) {
    sxx += (xs[i] - mx) * (xs[i] - mx);
    sxy += (xs[i] - mx) * (ys[i] - my);
  }
  double scale = 0.0;
  for (double x : xs) scale = std::max(scale, std::abs(x));
  if (sxx <= 1e-24 * std::max(1.0, scale * scale) * n) {
    out.fit_status = "zero-variance";
    return out;
  }
  out.beta = sxy / sxx;
  out.log_intercept = my - *out.beta * mx;
  out.fit_status = "ok";
  return out;
}

CapacityAllocation capacity_allocation(const MatchResult& match, std::size_t cluster_size,
                                       std::span<const double> probabilities) {
  if (cluster_size == 0) throw std::invalid_argument("capacity_allocation: cluster size must be positive");
  std::vector<double> alloc(probabilities.size(), 0.0);
  for (const auto& p : match.pairs) {
    const std::size_t cluster = p.j / cluster_size;
    if (cluster >= alloc.size()) throw std::invalid_argument("capacity_allocation: match index outside clusters");
    alloc[cluster] += 1.0;
  }
  return fit_allocation_exponent(probabilities, alloc);
}

std::vector<double> per_cluster_gt_mcc(const Dictionary& learned, const Dictionary& ground_truth,
                                       std::size_t cluster_size) {
  if (cluster_size == 0 || ground_truth.cols() % static_cast<Index>(cluster_size) != 0)
    throw std::invalid_argument("per_cluster_gt_mcc: cluster size must divide d_gt");
  const Index clusters = ground_truth.cols() / static_cast<Index>(cluster_size);
  const MatrixXd sim = similarity_matrix(learned, ground_truth);
  std::vector<double> out;
  for (Index c = 0; c < clusters; ++c)
    out.push_back(match_similarity(sim.middleCols(c * static_cast<Index>(cluster_size),
                                                  static_cast<Index>(cluster_size)))
                      .mean);
  return out;
}

std::string to_string(LocalRegime regime) {
  switch (regime) {
    case LocalRegime::Redundant: return "redundant";
    case LocalRegime::Matched: return "matched";
    case LocalRegime::Compressive: return "compressive";
  }
  return "unknown";
}

std::vector<LocalRedundancy> local_redundancy(std::span<const double> allocation,
                                              std::span<const std::size_t> cluster_sizes, double tolerance) {
  if (allocation.size() != cluster_sizes.size()) throw std::invalid_argument("local_redundancy: size mismatch");
  std::vector<LocalRedundancy> out;
  for (std::size_t i = 0; i < allocation.size(); ++i) {
    if (cluster_sizes[i] == 0) throw std::invalid_argument("local_redundancy: empty cluster");
    LocalRedundancy r;
    r.rho = allocation[i] / static_cast<double>(cluster_sizes[i]);
    if (r.rho > 1.0 + tolerance)
      r.regime = LocalRegime::Redundant;
    else if (r.rho < 1.0 - tolerance)
      r.regime = LocalRegime::Compressive;
    else
      r.regime = LocalRegime::Matched;
    out.push_back(r);
  }
  return out;
}

double intersection_ratio(const Dictionary& run1, const Dictionary& run2, const Dictionary& ground_truth) {
  const std::size_t d_gt = static_cast<std::size_t>(ground_truth.cols());
  const std::size_t d_sae = static_cast<std::size_t>(run1.cols());
  const std::size_t n = std::min(d_gt, d_sae);
  if (n == 0) return 0.0;
  std::vector<char> to_gt(d_sae, 0);
  for (const auto& p : mcc(run1, ground_truth).pairs) to_gt[p.i] = 1;

  auto pairs = mcc(run1, run2).pairs;
  std::stable_sort(pairs.begin(), pairs.end(),
                   [](const MatchedPair& x, const MatchedPair& y) { return x.similarity > y.similarity; });
  std::size_t hits = 0;
  for (std::size_t t = 0; t < std::min(n, pairs.size()); ++t) hits += to_gt[pairs[t].i] ? 1 : 0;
  return static_cast<double>(hits) / static_cast<double>(n);
}

double mean_intersection_ratio(std::span<const Dictionary> runs, const Dictionary& ground_truth) {
  if (runs.size() < 2) throw std::invalid_argument("mean_intersection_ratio: need at least two runs");
  double sum = 0.0;
  std::size_t count = 0;
  for (std::size_t a = 0; a < runs.size(); ++a)
    for (std::size_t b = 0; b < runs.size(); ++b)
      if (a != b) {
        sum += intersection_ratio(runs[a], runs[b], ground_truth);
        ++count;
      }
  return sum / static_cast<double>(count);
}

ConsistencyReport pw_mcc(std::span<const Dictionary> dicts) {
  if (dicts.size() < 2) throw std::invalid_argument("pw_mcc: need at least two dictionaries");
  for (const auto& d : dicts)
    if (d.rows() != dicts[0].rows() || d.cols() != dicts[0].cols())
      throw std::invalid_argument("pw_mcc: dictionaries must share a shape");
  ConsistencyReport rep;
  double sum = 0.0;
  for (std::size_t a = 0; a < dicts.size(); ++a)
    for (std::size_t b = a + 1; b < dicts.size(); ++b) {
      const double v = mcc(dicts[a], dicts[b]).mean;
      rep.pairwise.push_back({a, b, v});
      sum += v;
    }
  rep.mean_pw_mcc = sum / static_cast<double>(rep.pairwise.size());
  return rep;
}

namespace {

std::vector<double> average_ranks(std::span<const double> v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t t = i; t <= j; ++t) ranks[order[t]] = avg;
    i = j + 1;
  }
  return ranks;
}

}  // namespace

double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) throw std::invalid_argument("spearman: size mismatch");
  if (x.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  const auto rx = average_ranks(x), ry = average_ranks(y);
  const double n = static_cast<double>(x.size());
  const double mx = std::accumulate(rx.begin(), rx.end(), 0.0) / n;
  const double my = std::accumulate(ry.begin(), ry.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < rx.size(); ++i) {
    sxy += (rx[i] - mx) * (ry[i] - my);
    sxx += (rx[i] - mx) * (rx[i] - mx);
    syy += (ry[i] - my) * (ry[i] - my);
  }
  if (sxx == 0.0 || syy == 0.0) return std::numeric_limits<double>::quiet_NaN();
  return sxy / std::sqrt(sxx * syy);
}

}  // namespace saelab
