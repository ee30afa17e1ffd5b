#include "saelab/spark.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <json.hpp>

#include "saelab/parallel.hpp"
#include "saelab/rng.hpp"

namespace saelab {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

Eigen::VectorXd SparseVec::dense() const {
  VectorXd v = VectorXd::Zero(static_cast<Index>(dim));
  for (std::size_t t = 0; t < indices.size(); ++t) v(static_cast<Index>(indices[t])) = values[t];
  return v;
}

SparseVec SparseVec::from_dense(const Eigen::VectorXd& v) {
  SparseVec s;
  s.dim = static_cast<std::size_t>(v.size());
  for (Index i = 0; i < v.size(); ++i)
    if (v(i) != 0.0) {
      s.indices.push_back(static_cast<std::size_t>(i));
      s.values.push_back(v(i));
    }
  return s;
}

EnumerationRefused::EnumerationRefused(std::uint64_t req, std::uint64_t c)
    : std::runtime_error("refusing to enumerate " +
                         (req == std::numeric_limits<std::uint64_t>::max() ? std::string("more than 2^64")
                                                                           : std::to_string(req)) +
                         " subsets (cap " + std::to_string(c) + "); raise the cap or use sampled mode"),
      required(req),
      cap(c) {}

std::uint64_t binomial_saturating(std::uint64_t n, std::uint64_t r) {
  if (r > n) return 0;
  r = std::min(r, n - r);
  unsigned __int128 acc = 1;
  constexpr auto kMax = std::numeric_limits<std::uint64_t>::max();
  for (std::uint64_t i = 1; i <= r; ++i) {
    acc = acc * (n - r + i) / i;  // exact: acc is C(n - r + i, i) after the step
    if (acc > kMax) return kMax;
  }
  return static_cast<std::uint64_t>(acc);
}

boost::multiprecision::cpp_int witness_set_size(std::size_t d, std::size_t k) {
  if (k > d) throw std::invalid_argument("witness_set_size: k must be <= d");
  boost::multiprecision::cpp_int c = 1;
  for (std::size_t i = 1; i <= k; ++i) {
    c *= d - k + i;
    c /= i;
  }
  return c * c * k;
}

namespace {

// Lexicographic combination with the given rank among C(n, r).
std::vector<std::size_t> unrank_combination(std::uint64_t rank, std::size_t n, std::size_t r) {
  std::vector<std::size_t> out;
  out.reserve(r);
  std::size_t next = 0;
  for (std::size_t pos = 0; pos < r; ++pos) {
    for (;; ++next) {
      const std::uint64_t block = binomial_saturating(n - next - 1, r - pos - 1);
      if (rank < block) break;
      rank -= block;
    }
    out.push_back(next++);
  }
  return out;
}

bool next_combination(std::vector<std::size_t>& c, std::size_t n) {
  const std::size_t r = c.size();
  for (std::size_t i = r; i-- > 0;) {
    if (c[i] < n - r + i) {
      ++c[i];
      for (std::size_t j = i + 1; j < r; ++j) c[j] = c[j - 1] + 1;
      return true;
    }
  }
  return false;
}

std::vector<std::size_t> floyd_sample(CounterRng& rng, std::size_t n, std::size_t r) {
  std::vector<std::size_t> out;
  out.reserve(r);
  for (std::size_t j = n - r; j < n; ++j) {
    const std::size_t t = rng.below(j + 1);
    out.push_back(std::find(out.begin(), out.end(), t) == out.end() ? t : j);
  }
  std::sort(out.begin(), out.end());
  return out;
}

// Max-abs 1, first nonzero positive, numerical dust removed.
SparkWitness make_witness(const Dictionary& a, const std::vector<std::size_t>& cols, VectorXd v,
                          std::size_t k) {
  v /= v.cwiseAbs().maxCoeff();
  for (Index i = 0; i < v.size(); ++i)
    if (std::abs(v(i)) <= 1e-12) v(i) = 0.0;
  for (Index i = 0; i < v.size(); ++i)
    if (v(i) != 0.0) {
      if (v(i) < 0.0) v = -v;
      break;
    }
  SparkWitness w;
  w.h.dim = static_cast<std::size_t>(a.cols());
  for (std::size_t t = 0; t < cols.size(); ++t)
    if (v(static_cast<Index>(t)) != 0.0) {
      w.h.indices.push_back(cols[t]);
      w.h.values.push_back(v(static_cast<Index>(t)));
    }
  w.residual = (a * w.h.dense()).norm();
  std::tie(w.f, w.f_prime) = decompose_two_vector(w.h, k);
  return w;
}

struct SubsetOutcome {
  std::uint64_t tested = 0;
  double min_sv = std::numeric_limits<double>::infinity();
  double min_rel = std::numeric_limits<double>::infinity();
  std::uint64_t fail_rank = std::numeric_limits<std::uint64_t>::max();
  std::vector<std::size_t> fail_cols;
  VectorXd fail_vec;

  void merge(const SubsetOutcome& o) {
    tested += o.tested;
    min_sv = std::min(min_sv, o.min_sv);
    min_rel = std::min(min_rel, o.min_rel);
    if (o.fail_rank < fail_rank) {
      fail_rank = o.fail_rank;
      fail_cols = o.fail_cols;
      fail_vec = o.fail_vec;
    }
  }
};

// Returns true when the subset is rank deficient.
bool test_subset(const Dictionary& a, const std::vector<std::size_t>& cols, double rank_tol, MatrixXd& sub,
                 SubsetOutcome& out, std::uint64_t rank) {
  for (std::size_t t = 0; t < cols.size(); ++t) sub.col(static_cast<Index>(t)) = a.col(static_cast<Index>(cols[t]));
  Eigen::JacobiSVD<MatrixXd> svd(sub, Eigen::ComputeFullV);
  const auto& s = svd.singularValues();
  const double smax = s(0);
  const double smin = s(s.size() - 1);
  ++out.tested;
  out.min_sv = std::min(out.min_sv, smin);
  const double rel = smax > 0.0 ? smin / smax : 0.0;
  out.min_rel = std::min(out.min_rel, rel);
  if (smax > 0.0 && smin > rank_tol * smax) return false;
  out.fail_rank = rank;
  out.fail_cols = cols;
  out.fail_vec = svd.matrixV().col(svd.matrixV().cols() - 1);
  return true;
}

}  // namespace

SparkReport check_spark(const Dictionary& a, std::size_t k, const SparkOptions& opt) {
  if (k == 0) throw std::invalid_argument("check_spark: k must be >= 1");
  if (a.cols() == 0 || a.rows() == 0) throw std::invalid_argument("check_spark: empty dictionary");
  if (!(opt.rank_tol > 0.0)) throw std::invalid_argument("check_spark: rank_tol must be positive");
  const std::size_t m = static_cast<std::size_t>(a.rows());
  const std::size_t d = static_cast<std::size_t>(a.cols());

  SparkReport rep;
  rep.k = k;
  rep.subset_size = std::min(2 * k, d);

  if (2 * k > m && d > m) {
    // Any m + 1 columns are dependent; take the first ones.
    std::vector<std::size_t> cols(m + 1);
    std::iota(cols.begin(), cols.end(), 0);
    const MatrixXd sub = a.leftCols(static_cast<Index>(m + 1));
    Eigen::JacobiSVD<MatrixXd> svd(sub, Eigen::ComputeFullV);
    rep.holds = false;
    rep.min_singular_value = 0.0;
    rep.witness = make_witness(a, cols, svd.matrixV().col(static_cast<Index>(m)), k);
    rep.note = "2k exceeds the activation dimension";
    return rep;
  }

  const std::size_t r = rep.subset_size;
  SubsetOutcome total;
  if (opt.sampled) {
    rep.probabilistic = true;
    std::vector<SubsetOutcome> parts(std::max<std::size_t>(1, opt.workers));
    const std::size_t chunk = (opt.samples + parts.size() - 1) / parts.size();
    parallel_for(parts.size(), parts.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t w = b; w < e; ++w) {
        MatrixXd sub(static_cast<Index>(m), static_cast<Index>(r));
        const std::uint64_t lo = w * chunk, hi = std::min<std::uint64_t>(opt.samples, lo + chunk);
        for (std::uint64_t i = lo; i < hi; ++i) {
          CounterRng rng(opt.seed, Stream::SubsetSample, i);
          if (test_subset(a, floyd_sample(rng, d, r), opt.rank_tol, sub, parts[w], i)) break;
        }
      }
    });
    for (const auto& p : parts) total.merge(p);
    rep.note = "sampled " + std::to_string(opt.samples) + " random subsets; a pass is not a proof";
  } else {
    const std::uint64_t count = binomial_saturating(d, r);
    if (count > opt.max_subsets) throw EnumerationRefused(count, opt.max_subsets);
    std::vector<SubsetOutcome> parts(std::max<std::size_t>(1, std::min<std::uint64_t>(opt.workers, count)));
    const std::uint64_t chunk = (count + parts.size() - 1) / parts.size();
    parallel_for(parts.size(), parts.size(), [&](std::size_t b, std::size_t e) {
      for (std::size_t w = b; w < e; ++w) {
        const std::uint64_t lo = w * chunk, hi = std::min(count, lo + chunk);
        if (lo >= hi) continue;
        MatrixXd sub(static_cast<Index>(m), static_cast<Index>(r));
        auto cols = unrank_combination(lo, d, r);
        for (std::uint64_t i = lo; i < hi; ++i) {
          if (test_subset(a, cols, opt.rank_tol, sub, parts[w], i)) break;
          next_combination(cols, d);
        }
      }
    });
    for (const auto& p : parts) total.merge(p);
  }

  rep.subsets_tested = total.tested;
  rep.min_singular_value = total.min_sv;
  rep.min_relative_singular_value = total.min_rel;
  rep.holds = total.fail_cols.empty();
  if (!rep.holds) rep.witness = make_witness(a, total.fail_cols, total.fail_vec, k);
  return rep;
}

std::pair<SparseVec, SparseVec> decompose_two_vector(const SparseVec& h, std::size_t k) {
  if (h.indices.size() != h.values.size()) throw std::invalid_argument("decompose_two_vector: malformed vector");
  SparseVec f, fp;
  f.dim = fp.dim = h.dim;
  std::size_t support = 0;
  for (std::size_t t = 0; t < h.indices.size(); ++t) {
    if (h.indices[t] >= h.dim || (t > 0 && h.indices[t] <= h.indices[t - 1]))
      throw std::invalid_argument("decompose_two_vector: indices must be increasing and < dim");
    if (h.values[t] == 0.0) continue;
    if (support < k) {
      f.indices.push_back(h.indices[t]);
      f.values.push_back(h.values[t]);
    } else {
      fp.indices.push_back(h.indices[t]);
      fp.values.push_back(-h.values[t]);
    }
    ++support;
  }
  if (support == 0) throw std::invalid_argument("decompose_two_vector: h must be nonzero");
  if (support > 2 * k) throw std::invalid_argument("decompose_two_vector: h has more than 2k nonzeros");
  return {std::move(f), std::move(fp)};
}

SparseVec idealized_topk_encode(const Dictionary& a, const Eigen::VectorXd& x, std::size_t k) {
  const std::size_t d = static_cast<std::size_t>(a.cols());
  if (k > d) throw std::invalid_argument("idealized_topk_encode: k exceeds dictionary size");
  const VectorXd z = a.transpose() * x;
  std::vector<std::size_t> order(d);
  std::iota(order.begin(), order.end(), 0);
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t i, std::size_t j) {
                      const double ai = std::abs(z(static_cast<Index>(i))), aj = std::abs(z(static_cast<Index>(j)));
                      return ai != aj ? ai > aj : i < j;
                    });
  order.resize(k);
  std::sort(order.begin(), order.end());
  SparseVec out;
  out.dim = d;
  out.indices = order;
  for (std::size_t i : order) out.values.push_back(z(static_cast<Index>(i)));
  return out;
}

bool has_orthonormal_columns(const Dictionary& a, double tol) {
  if (a.cols() > a.rows()) return false;
  const MatrixXd g = a.transpose() * a - MatrixXd::Identity(a.cols(), a.cols());
  return g.cwiseAbs().maxCoeff() <= tol;
}

namespace {

void round_trip_one(const Dictionary& a, const SparseVec& code, std::size_t k, const RoundTripOptions& opt,
                    RoundTripReport& rep) {
  const VectorXd x = a * code.dense();
  const SparseVec got = opt.encoder ? opt.encoder(x) : idealized_topk_encode(a, x, k);
  bool ok = got.indices == code.indices;
  if (ok && rep.values_checked)
    for (std::size_t t = 0; t < code.values.size(); ++t)
      if (!(std::abs(got.values[t] - code.values[t]) <= opt.value_tol)) ok = false;
  ++rep.trials;
  if (ok)
    ++rep.satisfied;
  else if (rep.failures.size() < opt.max_failures_kept)
    rep.failures.push_back({code, got});
}

void check_round_trip_args(const Dictionary& a, std::size_t k) {
  if (a.cols() == 0) throw std::invalid_argument("round trip: empty dictionary");
  if (k == 0 || k > static_cast<std::size_t>(a.cols()))
    throw std::invalid_argument("round trip: k must be in [1, d]");
}

}  // namespace

RoundTripReport check_round_trip(const Dictionary& a, std::size_t k, std::uint64_t trials,
                                 const RoundTripOptions& opt) {
  check_round_trip_args(a, k);
  if (trials == 0) throw std::invalid_argument("check_round_trip: trials must be >= 1");
  RoundTripReport rep;
  rep.k = k;
  rep.values_checked = has_orthonormal_columns(a);
  const std::size_t d = static_cast<std::size_t>(a.cols());
  for (std::uint64_t t = 0; t < trials; ++t) {
    CounterRng rng(opt.seed, Stream::RoundTrip, t);
    SparseVec code;
    code.dim = d;
    code.indices = floyd_sample(rng, d, k);
    for (std::size_t i = 0; i < k; ++i) code.values.push_back(std::abs(rng.normal()));
    round_trip_one(a, code, k, opt, rep);
  }
  rep.fraction = static_cast<double>(rep.satisfied) / static_cast<double>(rep.trials);
  return rep;
}

RoundTripReport check_round_trip_exhaustive(const Dictionary& a, std::size_t k, const RoundTripOptions& opt) {
  check_round_trip_args(a, k);
  const std::size_t d = static_cast<std::size_t>(a.cols());
  const std::uint64_t count = binomial_saturating(d, k);
  if (count > opt.max_supports) throw EnumerationRefused(count, opt.max_supports);
  RoundTripReport rep;
  rep.k = k;
  rep.exhaustive = true;
  rep.values_checked = has_orthonormal_columns(a);
  SparseVec code;
  code.dim = d;
  code.indices.resize(k);
  std::iota(code.indices.begin(), code.indices.end(), 0);
  code.values.assign(k, 1.0);
  do {
    round_trip_one(a, code, k, opt, rep);
  } while (next_combination(code.indices, d));
  rep.fraction = static_cast<double>(rep.satisfied) / static_cast<double>(rep.trials);
  return rep;
}

namespace {

nlohmann::json sparse_json(const SparseVec& v) {
  return {{"dim", v.dim}, {"indices", v.indices}, {"values", v.values}};
}

nlohmann::json finite_or_null(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(); }

}  // namespace

std::string to_json(const SparkReport& r, int indent) {
  nlohmann::json j{{"k", r.k},
                   {"holds", r.holds},
                   {"probabilistic", r.probabilistic},
                   {"subset_size", r.subset_size},
                   {"subsets_tested", r.subsets_tested},
                   {"min_singular_value", finite_or_null(r.min_singular_value)},
                   {"min_relative_singular_value", finite_or_null(r.min_relative_singular_value)},
                   {"note", r.note}};
  if (r.witness) {
    j["witness"] = {{"h", sparse_json(r.witness->h)},
                    {"f", sparse_json(r.witness->f)},
                    {"f_prime", sparse_json(r.witness->f_prime)},
                    {"residual", r.witness->residual}};
  } else {
    j["witness"] = nullptr;
  }
  return j.dump(indent);
}

std::string to_json(const RoundTripReport& r, int indent) {
  nlohmann::json fails = nlohmann::json::array();
  for (const auto& f : r.failures) fails.push_back({{"code", sparse_json(f.code)}, {"recovered", sparse_json(f.recovered)}});
  nlohmann::json j{{"k", r.k},
                   {"trials", r.trials},
                   {"satisfied", r.satisfied},
                   {"fraction", r.fraction},
                   {"exhaustive", r.exhaustive},
                   {"values_checked", r.values_checked},
                   {"failures", fails}};
  return j.dump(indent);
}

}  // namespace saelab
