#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <vector>

#include "ntkflow/activation.hpp"
#include "ntkflow/errors.hpp"
#include "ntkflow/gram.hpp"
#include "ntkflow/points.hpp"
#include "ntkflow/quadrature.hpp"

namespace ntkflow {

namespace detail {

constexpr double pi = 3.14159265358979323846264338328;

// Closed forms for E[phi(z) phi(z')] and E[phi'(z) phi'(z')] with
// (z, z') ~ N(0, [[s11, s12], [s12, s22]]).

// relu: arc-cosine kernel of degree 1 / degree 0.
inline double relu_phi_phi(double s11, double s22, double s12) {
  const double a = std::sqrt(std::max(s11, 0.0));
  const double b = std::sqrt(std::max(s22, 0.0));
  if (a == 0.0 || b == 0.0) return 0.0;
  const double r = std::clamp(s12 / (a * b), -1.0, 1.0);
  const double gamma = std::acos(r);
  return a * b / (2.0 * pi) * (std::sin(gamma) + (pi - gamma) * r);
}

inline double relu_dot_dot(double s11, double s22, double s12) {
  const double a = std::sqrt(std::max(s11, 0.0));
  const double b = std::sqrt(std::max(s22, 0.0));
  if (a == 0.0 || b == 0.0) return 0.0;  // phi'(0) = 0 convention
  const double r = std::clamp(s12 / (a * b), -1.0, 1.0);
  return (pi - std::acos(r)) / (2.0 * pi);
}

// erf: Williams' arcsine kernel and the Gaussian-derivative kernel.
inline double erf_phi_phi(double s11, double s22, double s12) {
  const double den = std::sqrt((1.0 + 2.0 * s11) * (1.0 + 2.0 * s22));
  return 2.0 / pi * std::asin(std::clamp(2.0 * s12 / den, -1.0, 1.0));
}

inline double erf_dot_dot(double s11, double s22, double s12) {
  const double det = (1.0 + 2.0 * s11) * (1.0 + 2.0 * s22) - 4.0 * s12 * s12;
  return 4.0 / pi / std::sqrt(std::max(det, 0.0));
}

inline double pair_expectation(bool derivative, const ActivationSpec& act,
                               double s11, double s22, double s12,
                               const QuadratureRule& rule) {
  if (act.kernel_mode == KernelMode::analytic) {
    switch (act.kind) {
      case ActivationKind::identity:
        return derivative ? 1.0 : s12;
      case ActivationKind::relu:
        return derivative ? relu_dot_dot(s11, s22, s12) : relu_phi_phi(s11, s22, s12);
      case ActivationKind::erf:
        return derivative ? erf_dot_dot(s11, s22, s12) : erf_phi_phi(s11, s22, s12);
      default:
        throw config_error("analytic kernel not available for this activation");
    }
  }
  Eigen::Matrix2d cov;
  cov << s11, s12, s12, s22;
  const auto& fn = derivative ? act.phi_dot : act.phi;
  return bivariate_expectation(fn, fn, cov, rule);
}

}  // namespace detail

// One step of the covariance recursion:
// Sigma^{l+1}(x, x') = E_{(z,z') ~ N(0, Sigma^l block)}[phi(z) phi(z')].
inline GramMatrix sigma_next(const GramMatrix& sigma_l, const ActivationSpec& act,
                             const QuadratureRule& rule) {
  act.validate();
  const Eigen::Index n = sigma_l.size();
  GramMatrix out{Eigen::MatrixXd(n, n), sigma_l.normalisation};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double v = detail::pair_expectation(false, act, sigma_l.values(i, i),
                                                sigma_l.values(j, j),
                                                sigma_l.values(i, j), rule);
      out.values(i, j) = v;
      out.values(j, i) = v;
    }
  }
  return out;
}

// One step of the tangent-kernel recursion:
// Theta^{l+1} = Sigma^{l+1} + E[phi'(z) phi'(z')] . Theta^l, entrywise.
inline GramMatrix theta_next(const GramMatrix& sigma_l, const GramMatrix& sigma_lp1,
                             const GramMatrix& theta_l, const ActivationSpec& act,
                             const QuadratureRule& rule) {
  const Eigen::Index n = sigma_l.size();
  if (sigma_lp1.size() != n || theta_l.size() != n)
    throw config_error("theta_next: Gram matrices indexed by different point sets");
  GramMatrix out{Eigen::MatrixXd(n, n), theta_l.normalisation};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      const double dd = detail::pair_expectation(true, act, sigma_l.values(i, i),
                                                 sigma_l.values(j, j),
                                                 sigma_l.values(i, j), rule);
      const double v = sigma_lp1.values(i, j) + dd * theta_l.values(i, j);
      out.values(i, j) = v;
      out.values(j, i) = v;
    }
  }
  return out;
}

// Per-layer covariance and tangent kernels over one point set.
// sigma[l-1] holds Sigma^l, theta[l-1] holds Theta^l, l = 1..depth.
struct KernelStack {
  int depth = 0;
  std::vector<GramMatrix> sigma;
  std::vector<GramMatrix> theta;
};

inline KernelStack kernel_stack(const PointSet& pts, int depth,
                                const ActivationSpec& act, const QuadratureRule& rule) {
  if (depth < 1) throw config_error("kernel_stack: depth must be >= 1");
  act.validate();
  KernelStack stack;
  stack.depth = depth;
  GramMatrix base{pts.input_gram(), GramNormalisation::raw};
  stack.sigma.push_back(base);
  stack.theta.push_back(base);
  for (int l = 1; l < depth; ++l) {
    const GramMatrix& s = stack.sigma.back();
    GramMatrix snext = sigma_next(s, act, rule);
    stack.theta.push_back(theta_next(s, snext, stack.theta.back(), act, rule));
    stack.sigma.push_back(std::move(snext));
  }
  return stack;
}

// Theta^L rows between probe points and a sample set, for driving
// off-sample flow coordinates. Returns a (probes x samples) block.
inline Eigen::MatrixXd cross_theta(const PointSet& probes, const PointSet& sample,
                                   int depth, const ActivationSpec& act,
                                   const QuadratureRule& rule) {
  if (probes.dim() != sample.dim())
    throw config_error("cross_theta: dimension mismatch");
  const Eigen::Index p = probes.size(), m = sample.size(), n0 = probes.dim();
  Eigen::MatrixXd s_cross = (probes.coords().transpose() * sample.coords()) / double(n0);
  Eigen::VectorXd s_pp = probes.coords().colwise().squaredNorm() / double(n0);
  Eigen::VectorXd s_ss = sample.coords().colwise().squaredNorm() / double(n0);
  Eigen::MatrixXd t_cross = s_cross;
  for (int l = 1; l < depth; ++l) {
    Eigen::MatrixXd s_next(p, m), t_next(p, m);
    Eigen::VectorXd s_pp_next(p), s_ss_next(m);
    for (Eigen::Index i = 0; i < p; ++i)
      s_pp_next(i) = detail::pair_expectation(false, act, s_pp(i), s_pp(i), s_pp(i), rule);
    for (Eigen::Index j = 0; j < m; ++j)
      s_ss_next(j) = detail::pair_expectation(false, act, s_ss(j), s_ss(j), s_ss(j), rule);
    for (Eigen::Index i = 0; i < p; ++i) {
      for (Eigen::Index j = 0; j < m; ++j) {
        s_next(i, j) =
            detail::pair_expectation(false, act, s_pp(i), s_ss(j), s_cross(i, j), rule);
        const double dd =
            detail::pair_expectation(true, act, s_pp(i), s_ss(j), s_cross(i, j), rule);
        t_next(i, j) = s_next(i, j) + dd * t_cross(i, j);
      }
    }
    s_cross = std::move(s_next);
    t_cross = std::move(t_next);
    s_pp = std::move(s_pp_next);
    s_ss = std::move(s_ss_next);
  }
  return t_cross;
}

}  // namespace ntkflow
