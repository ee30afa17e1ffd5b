#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <vector>

#include <Eigen/Dense>

namespace testutil {

inline Eigen::MatrixXd gaussian(Eigen::Index rows, Eigen::Index cols, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 1.0);
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = n(rng);
  return m;
}

// Rank by Gaussian elimination with partial pivoting; relative pivot tolerance.
inline int elimination_rank(Eigen::MatrixXd a, double rel_tol = 1e-9) {
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  int rank = 0;
  const Eigen::Index rows = a.rows(), cols = a.cols();
  for (Eigen::Index c = 0; c < cols && rank < rows; ++c) {
    Eigen::Index piv = rank;
    for (Eigen::Index r = rank + 1; r < rows; ++r)
      if (std::abs(a(r, c)) > std::abs(a(piv, c))) piv = r;
    if (std::abs(a(piv, c)) <= rel_tol * scale) continue;
    a.row(piv).swap(a.row(rank));
    for (Eigen::Index r = rank + 1; r < rows; ++r) a.row(r) -= (a(r, c) / a(rank, c)) * a.row(rank);
    ++rank;
  }
  return rank;
}

// Calls fn(subset) for every r-subset of {0..n-1} in lexicographic order.
template <typename Fn>
void for_each_subset(int n, int r, Fn&& fn) {
  std::vector<int> idx(r);
  std::iota(idx.begin(), idx.end(), 0);
  if (r > n) return;
  while (true) {
    fn(idx);
    int i = r - 1;
    while (i >= 0 && idx[i] == n - r + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int j = i + 1; j < r; ++j) idx[j] = idx[j - 1] + 1;
  }
}

inline double rel_err(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  const double denom = std::max({a.norm(), b.norm(), 1e-12});
  return (a - b).norm() / denom;
}

}  // namespace testutil
