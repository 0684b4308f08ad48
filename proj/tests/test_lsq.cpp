#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ntkflow/flow.hpp"
#include "ntkflow/lsq.hpp"
#include "ntkflow/rng.hpp"

using namespace ntkflow;

namespace {

LsqSystem random_system(int m, double lambda, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd A(m, m);
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < m; ++j) A(i, j) = rng.normal();
  Eigen::VectorXd f0(m), y(m);
  for (int i = 0; i < m; ++i) f0(i) = rng.normal();
  for (int i = 0; i < m; ++i) y(i) = rng.normal();
  return {GramMatrix{(A * A.transpose()) / m, GramNormalisation::per_sample},
          std::move(f0), std::move(y), lambda};
}

}  // namespace

TEST_CASE("trajectory_at at t = 0 returns the initial state") {
  const auto sys = random_system(5, 0.5, 1);
  CHECK((trajectory_at(sys, 0.0) - sys.f0).cwiseAbs().maxCoeff() < 1e-14);
}

TEST_CASE("scalar closed form") {
  // m = 1, Theta~ = 1, lambda = 1, y - f0 = 1, t = 0.5:
  // f(t) = f0 + (1 - e^{-2t}) / 2.
  LsqSystem sys{GramMatrix{Eigen::MatrixXd::Ones(1, 1), GramNormalisation::per_sample},
                Eigen::VectorXd::Constant(1, 0.2), Eigen::VectorXd::Constant(1, 1.2), 1.0};
  const double expected = 0.2 + (1.0 - std::exp(-1.0)) * 0.5;
  CHECK(trajectory_at(sys, 0.5)(0) == Catch::Approx(expected).margin(1e-14));
}

TEST_CASE("trajectory satisfies its ODE (finite-difference residual)") {
  const auto sys = random_system(8, 0.3, 2);
  const LsqSolver solver(sys);
  CounterRng rng(3);
  const double h = 1e-5;
  for (int trial = 0; trial < 50; ++trial) {
    const double t = 3.0 * rng.uniform() + h;
    const Eigen::VectorXd f = solver.trajectory_at(t);
    const Eigen::VectorXd dfdt =
        (solver.trajectory_at(t + h) - solver.trajectory_at(t - h)) / (2.0 * h);
    const Eigen::VectorXd rhs =
        -sys.theta_tilde.values * (f - sys.y) - sys.lambda * (f - sys.f0);
    CHECK((dfdt - rhs).norm() <= 1e-5 * std::max(rhs.norm(), 1.0));
  }
}

TEST_CASE("closed form matches the ODE integrator") {
  for (int trial = 0; trial < 5; ++trial) {
    const int m = 4 + trial * 3;
    const double lambda = 0.2 + 0.3 * trial;
    const auto sys = random_system(m, lambda, 100 + trial);
    const LsqSolver solver(sys);

    GramMatrix raw{sys.theta_tilde.values * m, GramNormalisation::raw};
    IntegrateConfig cfg{2.0, default_step(lambda, sys.theta_tilde), Integrator::rk4};
    const auto traj =
        integrate(FlowState::initial(sys.f0.transpose()), cfg, raw, {},
                  LossSpec::least_squares(), sys.y.transpose(), lambda,
                  RegulariserSpec::identity());
    const Eigen::VectorXd exact = solver.trajectory_at(traj.states.back().t);
    CHECK((traj.states.back().F_sample.transpose() - exact).norm() / exact.norm() < 1e-6);
  }
}

TEST_CASE("limit_infinity closed form and identity case") {
  // Theta~ = I, lambda = 1: F(inf) = (F0 + Y) / 2
  LsqSystem sys{GramMatrix{Eigen::MatrixXd::Identity(3, 3), GramNormalisation::per_sample},
                Eigen::VectorXd::Constant(3, 1.0), Eigen::VectorXd::Constant(3, 3.0), 1.0};
  CHECK((limit_infinity(sys) - Eigen::VectorXd::Constant(3, 2.0)).cwiseAbs().maxCoeff() <
        1e-14);
}

TEST_CASE("asymptotic slopes in lambda") {
  // a well-conditioned kernel, so the smallest lambda in each grid is
  // already deep in its asymptotic regime
  auto base = random_system(6, 0.0, 7);
  base.theta_tilde.values =
      Eigen::MatrixXd::Identity(6, 6) + 0.5 * base.theta_tilde.values;

  // ||F(inf) - Y|| = O(lambda): slope 1 on a log-log fit
  std::vector<double> lambdas{1e-1, 1e-2, 1e-3};
  std::vector<double> gaps;
  for (double l : lambdas) {
    LsqSystem sys = base;
    sys.lambda = l;
    gaps.push_back((limit_infinity(sys) - sys.y).norm());
  }
  const double slope_small = std::log(gaps[0] / gaps[2]) / std::log(lambdas[0] / lambdas[2]);
  CHECK(slope_small == Catch::Approx(1.0).margin(0.1));

  // ||F(inf) - F(0)|| = O(1/lambda): slope -1
  std::vector<double> lambdas_big{10.0, 100.0, 1000.0};
  std::vector<double> moves;
  for (double l : lambdas_big) {
    LsqSystem sys = base;
    sys.lambda = l;
    moves.push_back((limit_infinity(sys) - sys.f0).norm());
  }
  const double slope_big =
      std::log(moves[0] / moves[2]) / std::log(lambdas_big[0] / lambdas_big[2]);
  CHECK(slope_big == Catch::Approx(-1.0).margin(0.1));
}

TEST_CASE("exponential convergence to the limit and per-mode monotonicity") {
  const auto sys = random_system(6, 0.8, 11);
  const LsqSolver solver(sys);
  const Eigen::VectorXd f_inf = solver.limit_infinity();
  const double gap0 = (sys.f0 - f_inf).norm();
  for (double t : {0.5, 1.0, 2.0, 4.0})
    CHECK((solver.trajectory_at(t) - f_inf).norm() <=
          std::exp(-sys.lambda * t) * gap0 + 1e-12);

  // each eigen-coordinate moves monotonically from start to limit
  const Eigen::MatrixXd Q = solver.eigenvectors();
  Eigen::VectorXd prev = Q.transpose() * sys.f0;
  const Eigen::VectorXd target = Q.transpose() * f_inf;
  for (double t = 0.1; t <= 3.0; t += 0.1) {
    const Eigen::VectorXd cur = Q.transpose() * solver.trajectory_at(t);
    for (int i = 0; i < cur.size(); ++i) {
      const double dir = target(i) - (Q.transpose() * sys.f0)(i);
      CHECK((cur(i) - prev(i)) * dir >= -1e-12);
    }
    prev = cur;
  }
}

TEST_CASE("v_lambda_spectrum") {
  Eigen::VectorXd diag(4);
  diag << 0.1, 0.5, 1.0, 2.0;
  LsqSystem sys{GramMatrix{Eigen::MatrixXd(diag.asDiagonal()), GramNormalisation::per_sample},
                Eigen::VectorXd::Zero(4), Eigen::VectorXd::Ones(4), 0.25};
  const LsqSolver solver(sys);
  const Eigen::VectorXd spec = solver.v_lambda_spectrum();
  for (int i = 0; i < 4; ++i) {
    CHECK(spec(i) == Catch::Approx(diag(i) + 0.25).margin(1e-14));
    CHECK(spec(i) >= sys.lambda);
  }

  // reconstruction residual on a random system
  const auto rnd = random_system(7, 0.4, 13);
  const LsqSolver rs(rnd);
  const Eigen::MatrixXd V =
      rnd.lambda * Eigen::MatrixXd::Identity(7, 7) + rnd.theta_tilde.values;
  const Eigen::MatrixXd recon = rs.eigenvectors() *
                                rs.v_lambda_spectrum().asDiagonal() *
                                rs.eigenvectors().transpose();
  CHECK((recon - V).norm() <= 1e-10 * V.norm());
}

TEST_CASE("lambda = 0 freezes null-space components") {
  // rank-1 Theta~ on m = 2: the orthogonal direction never moves
  Eigen::MatrixXd theta(2, 2);
  theta << 0.5, 0.5, 0.5, 0.5;
  Eigen::VectorXd f0(2), y(2);
  f0 << 1.0, -1.0;
  y << 0.0, 0.0;
  LsqSystem sys{GramMatrix{theta, GramNormalisation::per_sample}, f0, y, 0.0};
  const LsqSolver solver(sys);
  CHECK(solver.has_frozen_modes());
  const Eigen::VectorXd inf = solver.limit_infinity();
  // range component (1,1)/sqrt2 decays to the label projection; null
  // component (1,-1)/sqrt2 of f0 survives untouched
  CHECK(inf(0) - inf(1) == Catch::Approx(f0(0) - f0(1)).margin(1e-12));
}

TEST_CASE("off_sample consistency") {
  const auto sys = random_system(5, 0.6, 17);
  const LsqSolver solver(sys);

  // probe equal to a training point: cross row is a Gram row
  const Eigen::VectorXd row = sys.theta_tilde.values.row(2);
  for (double t : {0.3, 1.0, 2.5}) {
    const double direct = solver.trajectory_at(t)(2);
    const double probed = solver.off_sample(row, sys.f0(2), t);
    CHECK(std::abs(direct - probed) < 1e-6);
  }

  // stationary flow: F0 = Y means tau = 0 everywhere
  LsqSystem fixed = sys;
  fixed.f0 = fixed.y;
  const LsqSolver fsolver(fixed);
  CounterRng rng(18);
  Eigen::VectorXd any_row(5);
  for (int i = 0; i < 5; ++i) any_row(i) = rng.normal();
  CHECK(fsolver.off_sample(any_row, 0.7, 3.0) == Catch::Approx(0.7).margin(1e-12));
}

TEST_CASE("off_sample matches the joint ODE with a carried probe") {
  const auto sys = random_system(5, 0.5, 19);
  CounterRng rng(20);
  Eigen::VectorXd cross(5);
  for (int i = 0; i < 5; ++i) cross(i) = 0.2 * rng.normal();
  const double f_probe0 = rng.normal();

  GramMatrix raw{sys.theta_tilde.values * 5.0, GramNormalisation::raw};
  Eigen::MatrixXd cross_raw = (cross * 5.0).transpose();  // 1 x m block of Theta(x, X)
  Eigen::MatrixXd F0p(1, 1);
  F0p(0, 0) = f_probe0;
  IntegrateConfig cfg{2.0, 1e-4, Integrator::rk4};
  const auto traj = integrate(FlowState::initial(sys.f0.transpose(), F0p), cfg, raw,
                              cross_raw, LossSpec::least_squares(), sys.y.transpose(),
                              sys.lambda, RegulariserSpec::identity());
  const LsqSolver solver(sys);
  const double closed = solver.off_sample(cross, f_probe0, 2.0);
  CHECK(std::abs(closed - traj.states.back().F_probe(0, 0)) < 1e-5);
}

TEST_CASE("non-finite inputs rejected") {
  auto sys = random_system(3, 0.1, 23);
  sys.f0(0) = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(LsqSolver(sys), config_error);
}
