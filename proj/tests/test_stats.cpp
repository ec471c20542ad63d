#include <doctest.h>

#include <cstring>

#include "covnz/stats.hpp"
#include "covnz/rng.hpp"

using namespace covnz;

TEST_CASE("ols_loglog linear relation") {
  std::vector<double> x, y;
  for (int i = 1; i <= 10; ++i) {
    x.push_back(i);
    y.push_back(2.0 * i);
  }
  const FitResult fit = ols_loglog(x, y);
  CHECK(std::abs(fit.slope - 1.0) < 1e-12);
  CHECK(fit.r_squared == doctest::Approx(1.0));
  CHECK(fit.n_points == 10);
  CHECK(fit.n_dropped == 0);
  // intercept recovers the uncentered fit: log y = slope log x + b
  CHECK(fit.intercept == doctest::Approx(std::log(2.0)).epsilon(1e-10));
}

TEST_CASE("ols_loglog quadratic relation") {
  std::vector<double> x, y;
  for (int i = 1; i <= 10; ++i) {
    x.push_back(0.5 * i);
    y.push_back(0.25 * i * i);
  }
  CHECK(std::abs(ols_loglog(x, y).slope - 2.0) < 1e-12);
}

TEST_CASE("ols_loglog slope exactly invariant under y rescaling") {
  Rng rng(8);
  std::vector<double> x, y, y2, y4;
  for (int i = 0; i < 40; ++i) {
    x.push_back(std::exp(2.0 * rng.normal()));
    y.push_back(std::exp(1.3 * std::log(x.back()) + 0.1 * rng.normal()));
    y2.push_back(2.0 * y.back());
    y4.push_back(0.25 * y.back());
  }
  const double s = ols_loglog(x, y).slope;
  const double s2 = ols_loglog(x, y2).slope;
  const double s4 = ols_loglog(x, y4).slope;
  CHECK(std::memcmp(&s, &s2, sizeof(double)) == 0);
  CHECK(std::memcmp(&s, &s4, sizeof(double)) == 0);
}

TEST_CASE("ols_loglog drops non-positive pairs") {
  std::vector<double> x{1.0, 2.0, -1.0, 4.0, 8.0};
  std::vector<double> y{1.0, 2.0, 3.0, 0.0, 8.0};
  const FitResult fit = ols_loglog(x, y);
  CHECK(fit.n_points == 3);
  CHECK(fit.n_dropped == 2);
  CHECK(fit.slope == doctest::Approx(1.0));
}

TEST_CASE("ols_loglog insufficient data") {
  std::vector<double> x{1.0, -2.0, 3.0};
  std::vector<double> y{1.0, 2.0, -3.0};
  CHECK_THROWS_AS(ols_loglog(x, y), InsufficientData);
  std::vector<double> same_x{2.0, 2.0, 2.0};
  std::vector<double> ys{1.0, 2.0, 3.0};
  CHECK_THROWS_AS(ols_loglog(same_x, ys), InsufficientData);
}

TEST_CASE("spearman basics") {
  std::vector<double> a{1, 2, 3, 4};
  CHECK(*spearman(a, a) == doctest::Approx(1.0));
  std::vector<double> rev{4, 3, 2, 1};
  CHECK(*spearman(a, rev) == doctest::Approx(-1.0));
  std::vector<double> y{1, 3, 2, 4};
  CHECK(*spearman(a, y) == doctest::Approx(0.8).epsilon(1e-12));
}

TEST_CASE("spearman ties use average ranks") {
  std::vector<double> x{1, 1, 2};
  std::vector<double> y{1, 2, 3};
  // ranks x = (1.5, 1.5, 3), y = (1, 2, 3) -> rho = 1.5 / sqrt(1.5 * 2)
  CHECK(*spearman(x, y) == doctest::Approx(std::sqrt(3.0) / 2.0).epsilon(1e-12));
}

TEST_CASE("spearman undefined for constant series") {
  std::vector<double> x{2, 2, 2};
  std::vector<double> y{1, 2, 3};
  CHECK(!spearman(x, y).has_value());
  CHECK(!spearman(y, x).has_value());
}
