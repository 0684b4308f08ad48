#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ntkflow/quadrature.hpp"
#include "ntkflow/rng.hpp"

using namespace ntkflow;

TEST_CASE("gauss_hermite_rule integrates normal moments") {
  const auto r8 = gauss_hermite_rule(8);
  CHECK(r8.weights.sum() == Catch::Approx(1.0).margin(1e-12));
  CHECK(expectation([](double z) { return z * z; }, r8) == Catch::Approx(1.0).margin(1e-12));
  CHECK(expectation([](double z) { return z; }, r8) == Catch::Approx(0.0).margin(1e-14));

  const auto r16 = gauss_hermite_rule(16);
  CHECK(expectation([](double z) { return z * z * z * z; }, r16) ==
        Catch::Approx(3.0).margin(1e-10));

  // exactness for monomials up to degree 2*order - 1
  const double m6 = 15.0, m8 = 105.0;  // E[Z^6], E[Z^8]
  CHECK(expectation([](double z) { return std::pow(z, 6); }, r8) ==
        Catch::Approx(m6).margin(1e-9));
  CHECK(expectation([](double z) { return std::pow(z, 8); }, r8) ==
        Catch::Approx(m8).margin(1e-7));
}

TEST_CASE("gauss_hermite_rule rejects out-of-range orders") {
  CHECK_THROWS_AS(gauss_hermite_rule(1), config_error);
  CHECK_THROWS_AS(gauss_hermite_rule(257), config_error);
}

TEST_CASE("bivariate_expectation reproduces the covariance for identity integrands") {
  const auto rule = gauss_hermite_rule(32);
  auto id = [](double z) { return z; };
  for (double c : {-0.5, 0.0, 0.9}) {
    Eigen::Matrix2d cov;
    cov << 1.0, c, c, 1.0;
    CHECK(bivariate_expectation(id, id, cov, rule) == Catch::Approx(c).margin(1e-10));
  }
}

TEST_CASE("bivariate_expectation relu examples") {
  const auto rule = gauss_hermite_rule(64);
  auto relu = [](double z) { return z > 0.0 ? z : 0.0; };
  Eigen::Matrix2d indep;
  indep << 1.0, 0.0, 0.0, 1.0;
  // product of half-normal means, 1/(2 pi)
  CHECK(bivariate_expectation(relu, relu, indep, rule) ==
        Catch::Approx(0.15915494309189535).margin(1e-9));
  Eigen::Matrix2d corr;
  corr << 1.0, 1.0, 1.0, 1.0;
  CHECK(bivariate_expectation(relu, relu, corr, rule) == Catch::Approx(0.5).margin(1e-9));
}

TEST_CASE("bivariate_expectation degenerate blocks collapse to univariate rules") {
  const auto rule = gauss_hermite_rule(32);
  auto sq = [](double z) { return z * z; };
  Eigen::Matrix2d zero_first;
  zero_first << 0.0, 0.0, 0.0, 4.0;
  CHECK(bivariate_expectation([](double z) { return z + 1.0; }, sq, zero_first, rule) ==
        Catch::Approx(4.0).margin(1e-10));
  Eigen::Matrix2d anti;
  anti << 1.0, -1.0, -1.0, 1.0;
  auto id = [](double z) { return z; };
  CHECK(bivariate_expectation(id, id, anti, rule) == Catch::Approx(-1.0).margin(1e-10));
}

TEST_CASE("bivariate_expectation rejects non-PSD covariance") {
  const auto rule = gauss_hermite_rule(16);
  auto id = [](double z) { return z; };
  Eigen::Matrix2d bad;
  bad << 1.0, 2.0, 2.0, 1.0;
  CHECK_THROWS_AS(bivariate_expectation(id, id, bad, rule), numerical_domain_error);
}

TEST_CASE("quadrature agrees with Monte Carlo on random covariance blocks") {
  const auto rule = gauss_hermite_rule(64);
  CounterRng rng(20240817);
  auto tanh_fn = [](double z) { return std::tanh(z); };
  const int n_mc = 200000;
  for (int trial = 0; trial < 5; ++trial) {
    const double a = 0.3 + rng.uniform();
    const double b = 0.3 + rng.uniform();
    const double r = 2.0 * rng.uniform() - 1.0;
    Eigen::Matrix2d cov;
    cov << a * a, r * a * b, r * a * b, b * b;
    const double quad = bivariate_expectation(tanh_fn, tanh_fn, cov, rule);
    double mean = 0.0, sq = 0.0;
    const double s = std::sqrt(1.0 - r * r);
    for (int i = 0; i < n_mc; ++i) {
      const double u = rng.normal(), v = rng.normal();
      const double p = tanh_fn(a * u) * tanh_fn(b * (r * u + s * v));
      mean += p;
      sq += p * p;
    }
    mean /= n_mc;
    const double se = std::sqrt((sq / n_mc - mean * mean) / n_mc);
    CHECK(std::abs(quad - mean) < 4.0 * se + 1e-12);
  }
}
