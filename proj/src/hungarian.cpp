#include "vedet/hungarian.hpp"

#include <cmath>
#include <limits>

#include "vedet/errors.hpp"

namespace vedet {

// Shortest augmenting path with potentials. Columns of `cost` act as the
// agents, rows as the tasks.
Assignment hungarian(const Eigen::MatrixXd& cost) {
  const int rows = static_cast<int>(cost.rows());
  const int cols = static_cast<int>(cost.cols());
  if (rows < cols) throw StructuralError("hungarian: need rows >= cols");
  if (!cost.allFinite()) throw Error("hungarian: cost matrix has non-finite entries");
  Assignment out;
  if (cols == 0) return out;

  const double inf = std::numeric_limits<double>::infinity();
  // 1-based, index 0 is the virtual start.
  std::vector<double> u(cols + 1, 0.0), v(rows + 1, 0.0);
  std::vector<int> owner(rows + 1, 0), way(rows + 1, 0);
  for (int agent = 1; agent <= cols; ++agent) {
    owner[0] = agent;
    int j0 = 0;
    std::vector<double> minv(rows + 1, inf);
    std::vector<char> used(rows + 1, 0);
    do {
      used[j0] = 1;
      const int i0 = owner[j0];
      double delta = inf;
      int j1 = 0;
      for (int j = 1; j <= rows; ++j) {
        if (used[j]) continue;
        const double cur = cost(j - 1, i0 - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (int j = 0; j <= rows; ++j) {
        if (used[j]) {
          u[owner[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (owner[j0] != 0);
    do {
      const int j1 = way[j0];
      owner[j0] = owner[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  out.row_of_col.assign(cols, -1);
  for (int j = 1; j <= rows; ++j) {
    if (owner[j] != 0) out.row_of_col[owner[j] - 1] = j - 1;
  }
  for (int m = 0; m < cols; ++m) out.cost += cost(out.row_of_col[m], m);
  return out;
}

}  // namespace vedet
