#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <boost/multiprecision/cpp_int.hpp>

#include "saelab/datagen.hpp"

namespace saelab {

/// Sparse vector of length `dim` with strictly increasing indices.
struct SparseVec {
  std::size_t dim = 0;
  std::vector<std::size_t> indices;
  std::vector<double> values;

  std::size_t nnz() const { return indices.size(); }
  Eigen::VectorXd dense() const;
  static SparseVec from_dense(const Eigen::VectorXd& v);
};

struct SparkWitness {
  SparseVec h;        // A h ~ 0, max |h_i| = 1, first nonzero positive
  SparseVec f;        // f - f_prime == h
  SparseVec f_prime;
  double residual = 0.0;  // ||A h||_2
};

struct SparkOptions {
  /// Relative rank tolerance: a subset counts as independent when its
  /// smallest singular value exceeds rank_tol times its largest.
  double rank_tol = 1e-8;
  std::uint64_t max_subsets = 10'000'000;
  /// Test `samples` random subsets instead of all of them. Never exact.
  bool sampled = false;
  std::uint64_t samples = 100'000;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct SparkReport {
  std::size_t k = 0;
  bool holds = false;
  bool probabilistic = false;
  std::size_t subset_size = 0;          // min(2k, d)
  std::uint64_t subsets_tested = 0;
  double min_singular_value = 0.0;      // absolute, over tested subsets
  double min_relative_singular_value = 0.0;
  std::optional<SparkWitness> witness;
  std::string note;
};

/// Thrown instead of enumerating more subsets than the configured cap.
class EnumerationRefused : public std::runtime_error {
 public:
  EnumerationRefused(std::uint64_t required, std::uint64_t cap);
  std::uint64_t required;
  std::uint64_t cap;
};

/// Checks that every min(2k, d)-column subset of A has full column rank.
/// When 2k > m and d > m the answer is false without enumeration.
SparkReport check_spark(const Dictionary& a, std::size_t k, const SparkOptions& options = {});
inline SparkReport check_spark(const Dictionary& a, std::size_t k, double rank_tol) {
  SparkOptions o;
  o.rank_tol = rank_tol;
  return check_spark(a, k, o);
}

/// Splits h (nonzero, at most 2k nonzeros) into disjoint k-sparse f, f' with
/// h = f - f'. The first min(k, |supp h|) support indices go to f.
std::pair<SparseVec, SparseVec> decompose_two_vector(const SparseVec& h, std::size_t k);

/// Maps an activation vector to a sparse code.
using CodeEncoder = std::function<SparseVec(const Eigen::VectorXd&)>;

/// Signed top-k of A^T x by magnitude, lower index first on ties; the code
/// keeps the raw inner products on the selected support.
SparseVec idealized_topk_encode(const Dictionary& a, const Eigen::VectorXd& x, std::size_t k);

struct RoundTripFailure {
  SparseVec code;
  SparseVec recovered;
};

struct RoundTripReport {
  std::size_t k = 0;
  std::uint64_t trials = 0;
  std::uint64_t satisfied = 0;
  double fraction = 0.0;
  bool exhaustive = false;
  /// Values were checked (columns orthonormal); otherwise only supports.
  bool values_checked = false;
  std::vector<RoundTripFailure> failures;  // first few only
};

struct RoundTripOptions {
  std::uint64_t seed = 0;
  /// Custom encoder; the idealized one when empty.
  CodeEncoder encoder;
  std::size_t max_failures_kept = 16;
  double value_tol = 1e-6;
  std::uint64_t max_supports = 10'000'000;  // exhaustive mode cap
};

/// Random k-sparse codes with |N(0,1)| values on uniform random supports.
RoundTripReport check_round_trip(const Dictionary& a, std::size_t k, std::uint64_t trials,
                                 const RoundTripOptions& options = {});
/// Every size-k support with all-ones values.
RoundTripReport check_round_trip_exhaustive(const Dictionary& a, std::size_t k,
                                            const RoundTripOptions& options = {});

/// True when A^T A equals the identity within `tol`.
bool has_orthonormal_columns(const Dictionary& a, double tol = 1e-9);

/// k * C(d, k)^2, exact.
boost::multiprecision::cpp_int witness_set_size(std::size_t d, std::size_t k);

/// C(n, r) saturated at UINT64_MAX.
std::uint64_t binomial_saturating(std::uint64_t n, std::uint64_t r);

std::string to_json(const SparkReport& report, int indent = 2);
std::string to_json(const RoundTripReport& report, int indent = 2);

}  // namespace saelab
