#pragma once
#include <Eigen/Dense>
#include <cmath>

#include "ntkflow/errors.hpp"

namespace ntkflow {

// Nodes/weights integrating against the standard normal density
// (probabilist convention): sum_i w_i f(z_i) ~ E[f(Z)], Z ~ N(0,1).
struct QuadratureRule {
  Eigen::VectorXd nodes;
  Eigen::VectorXd weights;
  int order = 0;
};

// Gauss-Hermite rule of the given order via Golub-Welsch on the Jacobi
// matrix of the probabilist Hermite polynomials (off-diagonals sqrt(k)).
inline QuadratureRule gauss_hermite_rule(int order) {
  if (order < 2 || order > 256)
    throw config_error("gauss_hermite_rule: order must be in [2, 256]");
  Eigen::MatrixXd J = Eigen::MatrixXd::Zero(order, order);
  for (int k = 1; k < order; ++k) {
    const double b = std::sqrt(static_cast<double>(k));
    J(k, k - 1) = b;
    J(k - 1, k) = b;
  }
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(J);
  QuadratureRule rule;
  rule.order = order;
  rule.nodes = es.eigenvalues();
  rule.weights.resize(order);
  for (int i = 0; i < order; ++i) {
    const double v0 = es.eigenvectors()(0, i);
    rule.weights(i) = v0 * v0;  // total measure is 1
  }
  return rule;
}

// E[f(Z)], Z ~ N(0,1).
template <class F>
double expectation(F&& f, const QuadratureRule& rule) {
  double acc = 0.0;
  for (int i = 0; i < rule.order; ++i) acc += rule.weights(i) * f(rule.nodes(i));
  return acc;
}

namespace detail {

// Adaptive Simpson to absolute tolerance, with the usual /15 correction.
template <class F>
double adaptive_simpson(F&& f, double a, double b, double fa, double fm, double fb,
                        double whole, double tol, int depth) {
  const double m = 0.5 * (a + b);
  const double lm = 0.5 * (a + m), rm = 0.5 * (m + b);
  const double flm = f(lm), frm = f(rm);
  const double left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
  const double right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
  const double delta = left + right - whole;
  if (depth <= 0 || std::abs(delta) <= 15.0 * tol)
    return left + right + delta / 15.0;
  return adaptive_simpson(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) +
         adaptive_simpson(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
}

template <class F>
double integrate_adaptive(F&& f, double a, double b, double tol) {
  if (b <= a) return 0.0;
  const double fa = f(a), fb = f(b), fm = f(0.5 * (a + b));
  const double whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
  return adaptive_simpson(f, a, b, fa, fm, fb, whole, tol, 48);
}

constexpr double inv_sqrt_2pi = 0.39894228040143267794;
constexpr double gauss_cutoff = 12.0;  // N(12) ~ 2e-32, below any tolerance here

// Composite adaptive integration over fixed panels. The panels keep the
// initial sampling from straddling all the mass: a single Simpson pass on
// a wide interval can see near-zero values at its three probe points and
// terminate early even though the integrand is large in between.
template <class F>
double integrate_adaptive_panels(F&& f, double a, double b, double tol, int panels) {
  const double w = (b - a) / panels;
  double acc = 0.0;
  for (int k = 0; k < panels; ++k)
    acc += integrate_adaptive(f, a + k * w, a + (k + 1) * w, tol / panels);
  return acc;
}

// E[f(Z)] by adaptive integration of the weighted integrand; handles
// integrands with kinks that defeat a fixed Gauss-Hermite rule.
template <class F>
double adaptive_expectation(F&& f, double tol) {
  return integrate_adaptive_panels(
      [&](double z) { return f(z) * inv_sqrt_2pi * std::exp(-0.5 * z * z); },
      -gauss_cutoff, gauss_cutoff, tol, 16);
}

// E[f(Z)] to high accuracy for arbitrary (possibly kinked or stepped)
// integrands: a Gauss-Hermite pass sets the tolerance scale, adaptive
// integration delivers the value. A fixed rule alone is not trustworthy
// here -- for indicator-type integrands successive orders can agree on
// the same wrong plateau, so agreement checks cannot certify the result.
template <class F>
double robust_expectation(F&& f, const QuadratureRule& rule) {
  const double e1 = expectation(f, rule);
  return adaptive_expectation(f, 1e-12 * std::max(1.0, std::abs(e1)));
}

}  // namespace detail

// E[f(Z) g(Z')] for (Z, Z') ~ N(0, cov), cov a 2x2 symmetric PSD block,
// by iterated adaptive integration over the Cholesky-whitened pair. A
// tensor-product Gauss-Hermite pass only sets the tolerance scale: fixed
// rules mishandle kinked or stepped integrands (relu and its derivative),
// and comparing two orders does not help because both can land on the
// same wrong plateau when the kink falls between nodes. Degenerate blocks
// (a zero diagonal entry or correlation +-1) collapse to one dimension.
template <class F, class G>
double bivariate_expectation(F&& f, G&& g, const Eigen::Matrix2d& cov,
                             const QuadratureRule& rule) {
  const double s11 = cov(0, 0), s22 = cov(1, 1), s12 = cov(0, 1);
  if (std::abs(cov(0, 1) - cov(1, 0)) > 1e-12)
    throw numerical_domain_error("bivariate_expectation: covariance not symmetric");
  if (s11 < -1e-12 || s22 < -1e-12)
    throw numerical_domain_error("bivariate_expectation: negative variance");
  if (std::abs(s12) > std::sqrt(std::max(s11, 0.0) * std::max(s22, 0.0)) + 1e-12)
    throw numerical_domain_error(
        "bivariate_expectation: covariance block not PSD (|s12| > sqrt(s11 s22))");

  const double a = std::sqrt(std::max(s11, 0.0));
  const double b = std::sqrt(std::max(s22, 0.0));
  if (a == 0.0) {
    const double f0 = f(0.0);
    return f0 * detail::robust_expectation([&](double z) { return g(b * z); }, rule);
  }
  if (b == 0.0) {
    const double g0 = g(0.0);
    return g0 * detail::robust_expectation([&](double z) { return f(a * z); }, rule);
  }
  double r = s12 / (a * b);
  r = std::clamp(r, -1.0, 1.0);
  if (std::abs(r) >= 1.0 - 1e-10) {
    const double sgn = (r >= 0.0) ? 1.0 : -1.0;
    return detail::robust_expectation(
        [&](double z) { return f(a * z) * g(sgn * b * z); }, rule);
  }
  const double s = std::sqrt(1.0 - r * r);

  auto tensor = [&](const QuadratureRule& rl) {
    const int n = rl.order;
    double acc = 0.0;
    for (int i = 0; i < n; ++i) {
      const double ui = rl.nodes(i);
      const double fu = f(a * ui);
      double inner = 0.0;
      for (int j = 0; j < n; ++j)
        inner += rl.weights(j) * g(b * (r * ui + s * rl.nodes(j)));
      acc += rl.weights(i) * fu * inner;
    }
    return acc;
  };

  const double scale = std::max(1.0, std::abs(tensor(rule)));
  return detail::integrate_adaptive_panels(
      [&](double u) {
        const double inner = detail::integrate_adaptive_panels(
            [&](double v) {
              return g(b * (r * u + s * v)) * detail::inv_sqrt_2pi *
                     std::exp(-0.5 * v * v);
            },
            -detail::gauss_cutoff, detail::gauss_cutoff, 1e-12 * scale, 16);
        return f(a * u) * inner * detail::inv_sqrt_2pi * std::exp(-0.5 * u * u);
      },
      -detail::gauss_cutoff, detail::gauss_cutoff, 1e-11 * scale, 16);
}

}  // namespace ntkflow
