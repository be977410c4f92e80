#pragma once

#include <Eigen/Core>

#include <vector>

namespace vedet {

struct Assignment {
  /// row_of_col[m] is the row assigned to column m.
  std::vector<int> row_of_col;
  double cost = 0.0;
};

/// Minimum-cost assignment of every column to a distinct row. Needs
/// rows >= cols and finite entries.
Assignment hungarian(const Eigen::MatrixXd& cost);

}  // namespace vedet
