#include <algorithm>
#include <numeric>
#include <random>

#include "doctest.h"
#include "vedet/errors.hpp"
#include "vedet/hungarian.hpp"

using namespace vedet;

namespace {

// Enumerates every injective column-to-row map.
double brute_force(const Eigen::MatrixXd& c) {
  const int rows = static_cast<int>(c.rows()), cols = static_cast<int>(c.cols());
  std::vector<int> perm(static_cast<std::size_t>(rows));
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  do {
    double s = 0.0;
    for (int m = 0; m < cols; ++m) s += c(perm[static_cast<std::size_t>(m)], m);
    best = std::min(best, s);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

void check_valid(const Assignment& a, const Eigen::MatrixXd& c) {
  REQUIRE(a.row_of_col.size() == static_cast<std::size_t>(c.cols()));
  std::vector<int> rows = a.row_of_col;
  std::sort(rows.begin(), rows.end());
  CHECK(std::adjacent_find(rows.begin(), rows.end()) == rows.end());
  double s = 0.0;
  for (std::size_t m = 0; m < rows.size(); ++m) {
    CHECK(a.row_of_col[m] >= 0);
    CHECK(a.row_of_col[m] < c.rows());
    s += c(a.row_of_col[m], static_cast<Eigen::Index>(m));
  }
  CHECK(s == doctest::Approx(a.cost).epsilon(1e-12));
}

}  // namespace

TEST_CASE("hungarian matches brute force on random rectangular matrices") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(-3.0, 10.0);
  int checked = 0;
  for (int i = 0; i < 500; ++i) {
    const int cols = 1 + static_cast<int>(rng() % 6);
    const int rows = cols + static_cast<int>(rng() % static_cast<unsigned>(7 - cols));
    Eigen::MatrixXd c(rows, cols);
    for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
    const Assignment a = hungarian(c);
    check_valid(a, c);
    CHECK(std::abs(a.cost - brute_force(c)) < 1e-9);
    ++checked;
  }
  CHECK(checked == 500);
}

TEST_CASE("hungarian handles ties, integers and empty inputs") {
  CHECK(hungarian(Eigen::MatrixXd(3, 0)).row_of_col.empty());
  const Eigen::MatrixXd ones = Eigen::MatrixXd::Ones(4, 4);
  const Assignment a = hungarian(ones);
  check_valid(a, ones);
  CHECK(a.cost == 4.0);

  Eigen::MatrixXd c(3, 3);
  c << 4, 1, 3, 2, 0, 5, 3, 2, 2;
  const Assignment b = hungarian(c);
  CHECK(b.cost == 5.0);
  CHECK(b.row_of_col == std::vector<int>{1, 0, 2});

  std::mt19937_64 rng(3);
  for (int i = 0; i < 100; ++i) {
    Eigen::MatrixXd t(5, 4);
    for (Eigen::Index k = 0; k < t.size(); ++k) t.data()[k] = static_cast<double>(rng() % 3);
    const Assignment r = hungarian(t);
    check_valid(r, t);
    CHECK(r.cost == brute_force(t));
  }
}

TEST_CASE("optimal cost shifts with row and column offsets") {
  std::mt19937_64 rng(29);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    Eigen::MatrixXd c(5, 5);
    for (Eigen::Index k = 0; k < c.size(); ++k) c.data()[k] = u(rng);
    Eigen::VectorXd ro(5), co(5);
    for (int k = 0; k < 5; ++k) {
      ro[k] = u(rng);
      co[k] = u(rng);
    }
    Eigen::MatrixXd shifted = c;
    shifted.colwise() += ro;
    shifted.rowwise() += co.transpose();
    CHECK(hungarian(shifted).cost == doctest::Approx(hungarian(c).cost + ro.sum() + co.sum()).epsilon(1e-12));
  }
}

TEST_CASE("hungarian rejects wide and non-finite matrices") {
  CHECK_THROWS_AS(hungarian(Eigen::MatrixXd::Zero(2, 3)), StructuralError);
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(3, 3);
  c(1, 1) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(hungarian(c), Error);
  c(1, 1) = std::numeric_limits<double>::infinity();
  CHECK_THROWS_AS(hungarian(c), Error);
}
