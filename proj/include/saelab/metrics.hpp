#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "saelab/datagen.hpp"
#include "saelab/sae.hpp"

namespace saelab {

// ---------------------------------------------------------------------------
// Matching

/// |<a_i, b_j>| / (||a_i|| ||b_j||); zero columns are similar to nothing.
Eigen::MatrixXd similarity_matrix(const Dictionary& a, const Dictionary& b);

struct MatchedPair {
  std::size_t i = 0;  // column of the first dictionary
  std::size_t j = 0;  // column of the second dictionary
  double similarity = 0.0;
};

struct MatchResult {
  std::vector<MatchedPair> pairs;  // ordered by i
  double total = 0.0;
  /// The MCC value: total / min(d_A, d_B).
  double mean = 0.0;
};

/// Exact maximum-weight one-to-one matching of size min(rows, cols).
MatchResult match_similarity(const Eigen::MatrixXd& similarity);

/// Mean correlation coefficient between two dictionaries.
MatchResult mcc(const Dictionary& a, const Dictionary& b);
/// MCC of a learned dictionary against the ground truth.
inline MatchResult gt_mcc(const Dictionary& learned, const Dictionary& ground_truth) {
  return mcc(learned, ground_truth);
}

// ---------------------------------------------------------------------------
// Activation frequencies and frequency-binned similarity

struct FrequencyProfile {
  Eigen::VectorXd frequency;       // fraction of samples with nonzero activation
  Eigen::VectorXd mean_magnitude;  // mean activation over samples where active
  std::vector<bool> dead;
};

constexpr double kDefaultDeadThreshold = 1e-6;

FrequencyProfile activation_frequencies(const SaeModel& model, const Eigen::MatrixXd& x,
                                        double dead_threshold = kDefaultDeadThreshold,
                                        std::size_t chunk = 4096);

enum class BinMode { Log, Quantile };
std::string to_string(BinMode mode);

struct PairRecord {
  std::size_t i = 0, j = 0;
  double similarity = 0.0;
  double freq_a = 0.0, freq_b = 0.0, min_freq = 0.0;
  std::size_t bin = 0;
};

struct BinSummary {
  double lo = 0.0, hi = 0.0;  // min_freq range of the bin
  std::size_t count = 0;
  double mean_similarity = 0.0;
  double std_similarity = 0.0;
  /// Sum of similarities in the bin divided by the number of matched pairs.
  double contribution = 0.0;
  double cumulative = 0.0;
};

struct BinnedSimilarity {
  BinMode mode = BinMode::Log;
  std::vector<PairRecord> pairs;
  std::vector<BinSummary> bins;
};

/// Keys every matched pair by min(freq_a, freq_b) and summarizes similarity
/// per bin. Log bins span the nonzero min-frequency range (pairs with zero
/// frequency land in the first bin); quantile bins hold equal pair counts.
/// Contribution and cumulative columns are always filled.
BinnedSimilarity binned_similarity(const MatchResult& match, const FrequencyProfile& prof_a,
                                   const FrequencyProfile& prof_b, std::size_t bins,
                                   BinMode mode = BinMode::Log);

/// Same binning, returned for the contribution view (per-bin share of the
/// pairwise MCC and its running sum).
inline BinnedSimilarity mcc_contribution_by_bin(const MatchResult& match, const FrequencyProfile& prof_a,
                                                const FrequencyProfile& prof_b, std::size_t bins,
                                                BinMode mode = BinMode::Log) {
  return binned_similarity(match, prof_a, prof_b, bins, mode);
}

// ---------------------------------------------------------------------------
// Cluster-level analyses

struct CapacityAllocation {
  std::vector<double> allocation;  // D_i per cluster (rank order)
  std::optional<double> beta;      // unset when the fit is unavailable
  std::optional<double> log_intercept;
  std::string fit_status;          // "ok", "zero-variance", "too-few-clusters"
};

/// Least-squares slope of log D_i against log p_i over clusters with D_i > 0.
CapacityAllocation fit_allocation_exponent(std::span<const double> probabilities,
                                           std::span<const double> allocation);

/// D_i = number of matched learned features whose ground-truth partner lies
/// in cluster i. `match` must come from gt_mcc(learned, ground_truth).
CapacityAllocation capacity_allocation(const MatchResult& match, std::size_t cluster_size,
                                       std::span<const double> probabilities);

/// MCC of the learned dictionary against each cluster's ground-truth columns.
std::vector<double> per_cluster_gt_mcc(const Dictionary& learned, const Dictionary& ground_truth,
                                       std::size_t cluster_size);

enum class LocalRegime { Redundant, Matched, Compressive };
std::string to_string(LocalRegime regime);

struct LocalRedundancy {
  double rho = 0.0;
  LocalRegime regime = LocalRegime::Matched;
};

std::vector<LocalRedundancy> local_redundancy(std::span<const double> allocation,
                                              std::span<const std::size_t> cluster_sizes,
                                              double tolerance = 0.1);

/// |I_{1->GT} intersect I'_{1->2}| / min(d_gt, d_sae).
double intersection_ratio(const Dictionary& run1, const Dictionary& run2, const Dictionary& ground_truth);
/// Mean over all ordered pairs of distinct runs.
double mean_intersection_ratio(std::span<const Dictionary> runs, const Dictionary& ground_truth);

// ---------------------------------------------------------------------------
// Multi-run reports

struct RunPairMcc {
  std::size_t run_a = 0, run_b = 0;
  double mcc = 0.0;
};

struct ConsistencyReport {
  std::vector<RunPairMcc> pairwise;
  double mean_pw_mcc = 0.0;
  std::vector<double> gt_mcc;  // per run, empty without ground truth
  std::optional<BinnedSimilarity> binned;
  std::optional<CapacityAllocation> capacity;
  std::vector<double> cluster_probabilities;
  std::vector<double> cluster_gt_mcc;
  std::vector<LocalRedundancy> redundancy;
  std::optional<double> intersection_ratio;
};

/// MCC for every unordered pair of equally shaped dictionaries plus the mean.
ConsistencyReport pw_mcc(std::span<const Dictionary> dicts);

/// Spearman rank correlation (average ranks for ties). NaN if either side is constant.
double spearman(std::span<const double> x, std::span<const double> y);

}  // namespace saelab
