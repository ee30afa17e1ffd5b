#pragma once

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

namespace saelab {

/// Exact minimum-cost assignment on a rectangular cost matrix. Every row is
/// assigned a distinct column when rows <= cols, and every column a distinct
/// row otherwise. Returns, for each row, the assigned column or -1.
///
/// Shortest-augmenting-path Hungarian method with dual potentials; runs in
/// O(min(r,c)^2 * max(r,c)).
std::vector<long> solve_assignment(const Eigen::MatrixXd& cost);

}  // namespace saelab
