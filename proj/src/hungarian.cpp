#include "saelab/hungarian.hpp"

#include <limits>

namespace saelab {

namespace {

using RowMajor = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Requires rows <= cols. Indices are 1-based internally; column 0 is the
// virtual source of each augmentation.
std::vector<long> assign_rows(const RowMajor& a) {
  const long n = a.rows(), m = a.cols();
  constexpr double kInf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0), minv(m + 1);
  std::vector<long> p(m + 1, 0), way(m + 1, 0);
  std::vector<char> used(m + 1);
  for (long i = 1; i <= n; ++i) {
    p[0] = i;
    long j0 = 0;
    std::fill(minv.begin(), minv.end(), kInf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const long i0 = p[j0];
      const double* row = a.data() + (i0 - 1) * m;
      const double ui = u[i0];
      double delta = kInf;
      long j1 = 0;
      for (long j = 1; j <= m; ++j) {
        if (used[j]) continue;
        const double cur = row[j - 1] - ui - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (long j = 0; j <= m; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const long j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  std::vector<long> row_to_col(static_cast<std::size_t>(n), -1);
  for (long j = 1; j <= m; ++j)
    if (p[j] != 0) row_to_col[static_cast<std::size_t>(p[j] - 1)] = j - 1;
  return row_to_col;
}

}  // namespace

std::vector<long> solve_assignment(const Eigen::MatrixXd& cost) {
  if (cost.rows() == 0 || cost.cols() == 0) return std::vector<long>(static_cast<std::size_t>(cost.rows()), -1);
  if (cost.rows() <= cost.cols()) return assign_rows(RowMajor(cost));
  const auto col_to_row = assign_rows(RowMajor(cost.transpose()));
  std::vector<long> row_to_col(static_cast<std::size_t>(cost.rows()), -1);
  for (std::size_t c = 0; c < col_to_row.size(); ++c)
    if (col_to_row[c] >= 0) row_to_col[static_cast<std::size_t>(col_to_row[c])] = static_cast<long>(c);
  return row_to_col;
}

}  // namespace saelab
