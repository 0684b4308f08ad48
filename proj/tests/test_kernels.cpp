#include <catch2/catch_amalgamated.hpp>
#include <cmath>

#include "ntkflow/kernels.hpp"
#include "ntkflow/rng.hpp"

using namespace ntkflow;

namespace {

PointSet sphere_points(int n0, int count, std::uint64_t seed) {
  CounterRng rng(seed);
  Eigen::MatrixXd coords(n0, count);
  for (int j = 0; j < count; ++j)
    for (int i = 0; i < n0; ++i) coords(i, j) = rng.normal();
  return PointSet::on_sphere(std::move(coords));
}

}  // namespace

TEST_CASE("sigma_next with identity activation is the identity map") {
  const auto rule = gauss_hermite_rule(32);
  const auto pts = sphere_points(4, 3, 1);
  GramMatrix base{pts.input_gram(), GramNormalisation::raw};
  const auto next = sigma_next(base, ActivationSpec::identity(KernelMode::quadrature), rule);
  CHECK((next.values - base.values).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("relu recursion on unit-diagonal blocks") {
  const auto rule = gauss_hermite_rule(64);
  // two orthogonal unit-norm (after 1/n0 scaling) points
  Eigen::MatrixXd coords(2, 2);
  coords << std::sqrt(2.0), 0.0, 0.0, std::sqrt(2.0);
  const PointSet pts(coords, true);
  GramMatrix base{pts.input_gram(), GramNormalisation::raw};
  const auto s2 = sigma_next(base, ActivationSpec::relu(KernelMode::quadrature), rule);
  CHECK(s2.values(0, 0) == Catch::Approx(0.5).margin(1e-8));       // E[relu(Z)^2]
  CHECK(s2.values(0, 1) == Catch::Approx(1.0 / (2.0 * detail::pi)).margin(1e-8));
}

TEST_CASE("theta recursion base case and identity activation") {
  const auto rule = gauss_hermite_rule(32);
  const auto pts = sphere_points(5, 4, 7);
  const auto stack = kernel_stack(pts, 1, ActivationSpec::identity(), rule);
  CHECK(stack.sigma.size() == 1);
  CHECK((stack.theta[0].values - pts.input_gram()).cwiseAbs().maxCoeff() < 1e-14);

  // identity activation: Theta^{l+1} = Sigma^{l+1} + Theta^l exactly
  const auto deep = kernel_stack(pts, 3, ActivationSpec::identity(), rule);
  for (int l = 1; l < 3; ++l) {
    const Eigen::MatrixXd expect = deep.sigma[l].values + deep.theta[l - 1].values;
    CHECK((deep.theta[l].values - expect).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("relu on-sphere diagonal: Theta^2(x,x) = 1") {
  const auto rule = gauss_hermite_rule(64);
  const auto pts = sphere_points(6, 1, 3);
  const auto stack = kernel_stack(pts, 2, ActivationSpec::relu(), rule);
  CHECK(stack.sigma[1].values(0, 0) == Catch::Approx(0.5).margin(1e-10));
  CHECK(stack.theta[1].values(0, 0) == Catch::Approx(1.0).margin(1e-10));
}

TEST_CASE("analytic and quadrature modes agree for relu and erf up to depth 4") {
  const auto rule = gauss_hermite_rule(64);
  const auto pts = sphere_points(4, 3, 11);
  for (auto make : {&ActivationSpec::relu, &ActivationSpec::erf}) {
    const auto analytic = kernel_stack(pts, 4, make(KernelMode::analytic), rule);
    const auto quad = kernel_stack(pts, 4, make(KernelMode::quadrature), rule);
    for (int l = 0; l < 4; ++l) {
      CHECK((analytic.sigma[l].values - quad.sigma[l].values).cwiseAbs().maxCoeff() < 1e-6);
      CHECK((analytic.theta[l].values - quad.theta[l].values).cwiseAbs().maxCoeff() < 1e-6);
    }
  }
}

TEST_CASE("erf depth-2 kernels match a Monte Carlo oracle") {
  const auto rule = gauss_hermite_rule(64);
  const auto pts = sphere_points(3, 2, 5);
  const auto stack = kernel_stack(pts, 2, ActivationSpec::erf(), rule);
  const Eigen::MatrixXd base = pts.input_gram();

  CounterRng rng(99);
  const int n_mc = 1000000;
  const double s12 = base(0, 1);
  const double s = std::sqrt(std::max(1.0 - s12 * s12, 0.0));
  double mean = 0.0, sq = 0.0;
  for (int i = 0; i < n_mc; ++i) {
    const double u = rng.normal(), v = rng.normal();
    const double p = std::erf(u) * std::erf(s12 * u + s * v);
    mean += p;
    sq += p * p;
  }
  mean /= n_mc;
  const double se = std::sqrt((sq / n_mc - mean * mean) / n_mc);
  CHECK(std::abs(stack.sigma[1].values(0, 1) - mean) < 3.0 * se + 1e-12);
}

TEST_CASE("kernel stacks are symmetric PSD with monotone theta diagonal") {
  const auto rule = gauss_hermite_rule(64);
  const auto pts = sphere_points(5, 5, 23);
  for (auto act : {ActivationSpec::relu(), ActivationSpec::erf(), ActivationSpec::tanh()}) {
    const auto stack = kernel_stack(pts, 4, act, rule);
    for (int l = 0; l < 4; ++l) {
      CHECK(stack.sigma[l].symmetry_defect() <= 1e-12);
      CHECK(stack.theta[l].symmetry_defect() <= 1e-12);
      CHECK(stack.sigma[l].is_psd());
      CHECK(stack.theta[l].is_psd());
      CHECK((stack.theta[l].values - stack.sigma[l].values).diagonal().minCoeff() >= -1e-10);
    }
  }
}

TEST_CASE("permuting the point set permutes all Gram rows and columns") {
  const auto rule = gauss_hermite_rule(32);
  const auto pts = sphere_points(4, 4, 31);
  Eigen::VectorXi perm(4);
  perm << 2, 0, 3, 1;
  Eigen::MatrixXd permuted_coords(4, 4);
  for (int j = 0; j < 4; ++j) permuted_coords.col(perm(j)) = pts.point(j);
  const PointSet pts_perm(permuted_coords, true);

  const auto a = kernel_stack(pts, 3, ActivationSpec::erf(), rule);
  const auto b = kernel_stack(pts_perm, 3, ActivationSpec::erf(), rule);
  for (int l = 0; l < 3; ++l)
    for (int i = 0; i < 4; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(a.theta[l].values(i, j) ==
              Catch::Approx(b.theta[l].values(perm(i), perm(j))).margin(1e-12));
}

TEST_CASE("cross_theta agrees with kernel_stack when probes are sample points") {
  const auto rule = gauss_hermite_rule(48);
  const auto pts = sphere_points(4, 4, 41);
  const auto stack = kernel_stack(pts, 3, ActivationSpec::erf(), rule);
  const Eigen::MatrixXd cross = cross_theta(pts, pts, 3, ActivationSpec::erf(), rule);
  CHECK((cross - stack.theta[2].values).cwiseAbs().maxCoeff() < 1e-10);
}

TEST_CASE("activation spec validation") {
  CHECK_THROWS_AS(
      []() {
        auto bad = ActivationSpec::tanh();
        bad.kernel_mode = KernelMode::analytic;
        bad.validate();
      }(),
      config_error);

  // phi_dot consistency by central finite differences on a probe grid
  for (auto act : {ActivationSpec::erf(), ActivationSpec::tanh(),
                   ActivationSpec::relu(), ActivationSpec::identity()}) {
    const double h = 1e-6;
    for (int i = 0; i < 100; ++i) {
      double u = -5.0 + 10.0 * i / 99.0;
      if (act.kind == ActivationKind::relu && std::abs(u) < 0.1) continue;
      const double fd = (act.phi(u + h) - act.phi(u - h)) / (2.0 * h);
      const double scale = std::max(std::abs(act.phi_dot(u)), 1e-3);
      CHECK(std::abs(fd - act.phi_dot(u)) / scale < 1e-5);
    }
  }
}
