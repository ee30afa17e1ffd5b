#include "saelab/datagen.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "saelab/parallel.hpp"
#include "saelab/rng.hpp"

namespace saelab {

namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

// Floyd's algorithm: k distinct values from [0, n), returned sorted.
std::vector<std::uint32_t> sample_without_replacement(CounterRng& rng, std::size_t n,
                                                      std::size_t k) {
  std::vector<std::uint32_t> out;
  out.reserve(k);
  for (std::size_t j = n - k; j < n; ++j) {
    const auto t = static_cast<std::uint32_t>(rng.below(j + 1));
    if (std::find(out.begin(), out.end(), t) == out.end())
      out.push_back(t);
    else
      out.push_back(static_cast<std::uint32_t>(j));
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace

std::string describe(const FrequencyLaw& law) {
  std::ostringstream os;
  std::visit(Overloaded{
                 [&](const UniformLaw&) { os << "uniform"; },
                 [&](const ZipfLaw& z) { os << "zipf(alpha=" << z.alpha << ")"; },
                 [&](const TwoPhaseLaw& t) {
                   os << "two_phase(s1=" << t.s1 << ",q=" << t.q << ",s2=" << t.s2
                      << ",r_transition=" << t.transition_rank << ")";
                 },
             },
             law);
  return os.str();
}

double two_phase_weight(const TwoPhaseLaw& law, std::size_t rank) {
  const double r = static_cast<double>(rank);
  const double rt = static_cast<double>(law.transition_rank);
  if (rank < law.transition_rank) return std::pow(r + law.q, -law.s1);
  return std::pow(rt + law.q, -law.s1) * std::pow(r / rt, -law.s2);
}

std::vector<double> cluster_probabilities(const FrequencyLaw& law, std::size_t clusters) {
  if (clusters == 0) throw std::invalid_argument("cluster_probabilities: need at least one cluster");
  std::vector<double> w(clusters);
  std::visit(Overloaded{
                 [&](const UniformLaw&) { std::fill(w.begin(), w.end(), 1.0); },
                 [&](const ZipfLaw& z) {
                   if (!(z.alpha > 0.0))
                     throw std::invalid_argument("zipf exponent must be positive");
                   for (std::size_t i = 0; i < clusters; ++i)
                     w[i] = std::pow(static_cast<double>(i + 1), -z.alpha);
                 },
                 [&](const TwoPhaseLaw& t) {
                   if (!(t.s1 > 0.0) || !(t.s2 > 0.0))
                     throw std::invalid_argument("two-phase exponents must be positive");
                   if (t.q < 0.0) throw std::invalid_argument("two-phase q must be non-negative");
                   if (t.transition_rank == 0)
                     throw std::invalid_argument("two-phase transition rank must be >= 1");
                   for (std::size_t i = 0; i < clusters; ++i) w[i] = two_phase_weight(t, i + 1);
                 },
             },
             law);
  // Neumaier summation keeps the normalization error near one ulp.
  double sum = 0.0, comp = 0.0;
  for (double v : w) {
    const double t = sum + v;
    comp += std::abs(sum) >= std::abs(v) ? (sum - t) + v : (v - t) + sum;
    sum = t;
  }
  sum += comp;
  for (double& v : w) v /= sum;
  return w;
}

void GroundTruthSpec::validate() const {
  if (m == 0 || d_gt == 0) throw std::invalid_argument("ground truth needs m > 0 and d_gt > 0");
  if (clusters == 0 || d_gt % clusters != 0)
    throw std::invalid_argument("cluster count must divide d_gt");
  if (k == 0 || k > cluster_size())
    throw std::invalid_argument("sparsity k must satisfy 1 <= k <= cluster size");
  // Surfaces invalid law parameters early.
  (void)cluster_probabilities(law, clusters);
}

Dictionary sample_ground_truth(const GroundTruthSpec& spec) {
  if (spec.m == 0 || spec.d_gt == 0)
    throw std::invalid_argument("sample_ground_truth: m and d_gt must be positive");
  CounterRng rng(spec.seed, Stream::Dictionary);
  Dictionary a(spec.m, spec.d_gt);
  for (Eigen::Index j = 0; j < a.cols(); ++j)
    for (Eigen::Index i = 0; i < a.rows(); ++i) a(i, j) = rng.normal();
  if (spec.normalize_columns) a.colwise().normalize();
  return a;
}

Dataset sample_dataset(const GroundTruthSpec& spec, const Dictionary& a_gt, std::size_t workers) {
  spec.validate();
  if (static_cast<std::size_t>(a_gt.rows()) != spec.m ||
      static_cast<std::size_t>(a_gt.cols()) != spec.d_gt)
    throw std::invalid_argument("sample_dataset: dictionary shape does not match spec");

  const std::size_t n = spec.n, k = spec.k, csize = spec.cluster_size();
  std::vector<double> cdf;
  if (spec.clusters > 1) {
    const auto p = cluster_probabilities(spec.law, spec.clusters);
    cdf.resize(p.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) cdf[i] = (acc += p[i]);
    cdf.back() = 1.0;
  }

  Dataset ds;
  ds.X.resize(static_cast<Eigen::Index>(spec.m), static_cast<Eigen::Index>(n));
  ds.codes.dim = spec.d_gt;
  ds.codes.offsets.resize(n + 1);
  for (std::size_t i = 0; i <= n; ++i) ds.codes.offsets[i] = i * k;
  ds.codes.indices.resize(n * k);
  ds.codes.values.resize(n * k);
  ds.cluster_of_sample.assign(n, 0);

  parallel_for(n, workers, [&](std::size_t begin, std::size_t end) {
    for (std::size_t i = begin; i < end; ++i) {
      std::size_t cluster = 0;
      if (!cdf.empty()) {
        CounterRng crng(spec.seed, Stream::ClusterDraw, i);
        const double u = crng.uniform();
        cluster = static_cast<std::size_t>(std::upper_bound(cdf.begin(), cdf.end(), u) - cdf.begin());
        cluster = std::min(cluster, spec.clusters - 1);
      }
      CounterRng srng(spec.seed, Stream::SupportDraw, i);
      CounterRng vrng(spec.seed, Stream::Values, i);
      const auto local = sample_without_replacement(srng, csize, k);
      auto x = ds.X.col(static_cast<Eigen::Index>(i));
      x.setZero();
      for (std::size_t t = 0; t < k; ++t) {
        const auto idx = static_cast<std::uint32_t>(cluster * csize + local[t]);
        const double g = vrng.normal();
        const double v = spec.signed_values ? g : std::abs(g);
        ds.codes.indices[i * k + t] = idx;
        ds.codes.values[i * k + t] = v;
        x.noalias() += v * a_gt.col(idx);
      }
      ds.cluster_of_sample[i] = static_cast<std::uint32_t>(cluster);
    }
  });
  return ds;
}

Eigen::VectorXd reconstruct_sample(const Dictionary& a_gt, const SparseCodes& codes, std::size_t i) {
  Eigen::VectorXd x = Eigen::VectorXd::Zero(a_gt.rows());
  const auto sup = codes.support(i);
  const auto val = codes.coefficients(i);
  for (std::size_t t = 0; t < sup.size(); ++t) x.noalias() += val[t] * a_gt.col(sup[t]);
  return x;
}

}  // namespace saelab
