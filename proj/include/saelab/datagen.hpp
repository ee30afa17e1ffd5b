#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

namespace saelab {

/// Dense m x d matrix whose columns are feature vectors.
using Dictionary = Eigen::MatrixXd;

struct UniformLaw {};

/// p_i proportional to i^-alpha over ranks i = 1..C.
struct ZipfLaw {
  double alpha = 1.0;
};

/// Mandelbrot-Zipf head (r + q)^-s1 for r < transition_rank, then a steeper
/// r^-s2 tail scaled to meet the head continuously at the transition rank.
struct TwoPhaseLaw {
  double s1 = 1.05;
  double q = 5.0;
  double s2 = 30.0;
  std::size_t transition_rank = 40000;
};

using FrequencyLaw = std::variant<UniformLaw, ZipfLaw, TwoPhaseLaw>;

std::string describe(const FrequencyLaw& law);

/// Unnormalized two-phase weight at 1-based rank r.
double two_phase_weight(const TwoPhaseLaw& law, std::size_t rank);

/// Normalized, non-increasing cluster probabilities for ranks 1..clusters.
std::vector<double> cluster_probabilities(const FrequencyLaw& law, std::size_t clusters);

struct GroundTruthSpec {
  std::size_t m = 8;
  std::size_t d_gt = 16;
  std::size_t k = 3;
  std::size_t n = 50000;
  /// Number of equal-size clusters partitioning the feature indices.
  std::size_t clusters = 1;
  FrequencyLaw law = UniformLaw{};
  std::uint64_t seed = 0;
  /// Draw signed N(0,1) coefficients instead of |N(0,1)| magnitudes.
  bool signed_values = false;
  /// Rescale ground-truth columns to unit L2 norm.
  bool normalize_columns = true;

  std::size_t cluster_size() const { return d_gt / clusters; }
  /// Throws std::invalid_argument when the spec is inconsistent.
  void validate() const;
};

/// Column-compressed k-sparse codes, one column per sample.
struct SparseCodes {
  std::size_t dim = 0;
  std::vector<std::size_t> offsets{0};
  std::vector<std::uint32_t> indices;
  std::vector<double> values;

  std::size_t samples() const { return offsets.size() - 1; }
  std::span<const std::uint32_t> support(std::size_t i) const {
    return {indices.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
  std::span<const double> coefficients(std::size_t i) const {
    return {values.data() + offsets[i], offsets[i + 1] - offsets[i]};
  }
};

struct Dataset {
  Eigen::MatrixXd X;  // m x n
  SparseCodes codes;  // empty (dim 0) for ingested activations
  std::vector<std::uint32_t> cluster_of_sample;

  std::size_t m() const { return static_cast<std::size_t>(X.rows()); }
  std::size_t n() const { return static_cast<std::size_t>(X.cols()); }
  bool has_codes() const { return codes.dim > 0 && codes.samples() == n(); }
};

/// i.i.d. standard-normal m x d_gt matrix, columns unit-normalized by default.
Dictionary sample_ground_truth(const GroundTruthSpec& spec);

/// Draws n k-sparse samples x = A_gt f. Each sample's randomness is keyed by
/// (seed, sample index), so the result does not depend on `workers`.
Dataset sample_dataset(const GroundTruthSpec& spec, const Dictionary& a_gt,
                       std::size_t workers = 1);

/// Recomputes A f for one stored code; used to verify generation.
Eigen::VectorXd reconstruct_sample(const Dictionary& a_gt, const SparseCodes& codes,
                                   std::size_t i);

}  // namespace saelab
