#include <gtest/gtest.h>

#include "helpers.hpp"

using namespace survkit;

namespace {

const std::vector<double> knots{1.0, 2.5, 4.0, 7.0, 9.0};

double second_derivative(std::size_t column, double x, double h = 1e-3) {
  const auto f = [&](double v) { return spline_row(v, knots)[column]; };
  return (f(x + h) - 2 * f(x) + f(x - h)) / (h * h);
}

}  // namespace

TEST(Quantile, TypeSeven) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.05), 1.2);
  EXPECT_DOUBLE_EQ(quantile({7}, 0.9), 7);
}

TEST(Spline, FirstColumnIsIdentity) {
  for (double x : {-3.0, 0.0, 2.0, 11.0}) EXPECT_EQ(spline_row(x, knots)[0], x);
  EXPECT_EQ(spline_row(3.0, knots).size(), knots.size() - 1);
}

TEST(Spline, ZeroBelowFirstKnot) {
  for (std::size_t j = 1; j < knots.size() - 1; ++j) {
    EXPECT_EQ(spline_row(0.5, knots)[j], 0.0);
    EXPECT_EQ(spline_row(1.0, knots)[j], 0.0);
  }
}

TEST(Spline, LinearBeyondLastKnot) {
  for (std::size_t j = 1; j < knots.size() - 1; ++j)
    for (double x : {9.5, 12.0, 30.0}) EXPECT_NEAR(second_derivative(j, x), 0.0, 1e-5) << j << " " << x;
}

// Oracle: piecewise cubic with knots exactly at `knots`, so on each interior
// interval the third difference is constant and the second derivative is continuous.
TEST(Spline, CubicBetweenKnotsWithContinuousSecondDerivative) {
  for (std::size_t j = 1; j < knots.size() - 1; ++j) {
    for (std::size_t k = 0; k < knots.size(); ++k) {
      const double left = second_derivative(j, knots[k] - 1e-2, 1e-4);
      const double right = second_derivative(j, knots[k] + 1e-2, 1e-4);
      EXPECT_NEAR(left, right, 0.05) << "column " << j << " knot " << knots[k];
    }
    // truncated-power representation: a cubic polynomial on each interval has
    // vanishing fourth differences
    for (std::size_t k = 0; k + 1 < knots.size(); ++k) {
      const double a = knots[k], b = knots[k + 1], h = (b - a) / 6;
      const auto f = [&](double v) { return spline_row(v, knots)[j]; };
      const double d4 = f(a + h) - 4 * f(a + 2 * h) + 6 * f(a + 3 * h) - 4 * f(a + 4 * h) + f(a + 5 * h);
      EXPECT_NEAR(d4, 0.0, 1e-9);
    }
  }
}

// Scaled truncated-power construction computed independently via the
// coefficients that cancel the x^2 and x^3 terms beyond the last knot.
TEST(Spline, MatchesTruncatedPowerOracle) {
  const std::size_t k = knots.size();
  const auto cube = [](double u) { return u > 0 ? u * u * u : 0.0; };
  for (std::size_t j = 0; j + 2 < k; ++j) {
    // c1 (x - t_{k-1})^3 + c2 (x - t_k)^3 chosen so that for x > t_k the cubic
    // and quadratic parts of (x - t_j)^3 + c1(...) + c2(...) vanish
    Eigen::Matrix2d a;
    a << 1, 1, knots[k - 2], knots[k - 1];
    Eigen::Vector2d rhs(-1, -knots[j]);
    const Eigen::Vector2d c = a.partialPivLu().solve(rhs);
    for (double x : {0.0, 1.7, 3.1, 5.0, 8.2, 9.0, 15.0}) {
      const double oracle = (cube(x - knots[j]) + c(0) * cube(x - knots[k - 2]) + c(1) * cube(x - knots[k - 1])) /
                            ((knots[k - 1] - knots[0]) * (knots[k - 1] - knots[0]));
      EXPECT_NEAR(spline_row(x, knots)[j + 1], oracle, 1e-10) << j << " " << x;
    }
  }
}

TEST(Spline, DefaultKnotsAtQuantiles) {
  std::vector<double> v;
  for (int i = 0; i <= 100; ++i) v.push_back(i);
  EXPECT_EQ(default_spline_knots(v), (std::vector<double>{5, 35, 65, 95}));
  EXPECT_THROW(default_spline_knots(std::vector<double>(20, 1.0)), DataError);
}

TEST(Spline, KnotValidation) {
  EXPECT_THROW(check_knots(std::vector<double>{1, 2}), ConfigError);
  EXPECT_THROW(check_knots(std::vector<double>{1, 3, 2}), ConfigError);
  const std::vector<double> x{1, 2, 3};
  EXPECT_EQ(spline_basis(x, knots).rows(), 3);
}
