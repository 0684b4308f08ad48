#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <vector>

#include "ntkflow/activation.hpp"
#include "ntkflow/errors.hpp"
#include "ntkflow/flow.hpp"
#include "ntkflow/gram.hpp"
#include "ntkflow/kernels.hpp"
#include "ntkflow/lsq.hpp"
#include "ntkflow/points.hpp"
#include "ntkflow/quadrature.hpp"
#include "ntkflow/rng.hpp"

namespace ntkflow {

namespace detail {

inline double std_normal_pdf(double u) { return inv_sqrt_2pi * std::exp(-0.5 * u * u); }
inline double std_normal_cdf(double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); }

}  // namespace detail

// Gaussian convolutions of an activation:
//   psi(u) = E[phi(Z + u)],  xi(u) = E[phi(Z + u)^2],  Z ~ N(0, 1).
// psi_dot uses Gaussian integration by parts, psi'(u) = E[Z phi(Z + u)],
// which stays valid for discontinuous bases such as sign. Identity and
// relu convolutions use closed forms (the relu integrand has a kink that
// a fixed Gauss-Hermite rule resolves poorly).
struct ConvolvedActivation {
  ActivationSpec base;
  QuadratureRule rule;

  double psi(double u) const {
    if (base.kind == ActivationKind::identity) return u;
    if (base.kind == ActivationKind::relu)
      return u * detail::std_normal_cdf(u) + detail::std_normal_pdf(u);
    double acc = 0.0;
    for (int i = 0; i < rule.order; ++i)
      acc += rule.weights(i) * base.phi(rule.nodes(i) + u);
    return acc;
  }

  double psi_dot(double u) const {
    if (base.kind == ActivationKind::identity) return 1.0;
    if (base.kind == ActivationKind::relu) return detail::std_normal_cdf(u);
    double acc = 0.0;
    for (int i = 0; i < rule.order; ++i)
      acc += rule.weights(i) * rule.nodes(i) * base.phi(rule.nodes(i) + u);
    return acc;
  }

  double xi(double u) const {
    if (base.kind == ActivationKind::identity) return 1.0 + u * u;
    if (base.kind == ActivationKind::relu)
      return (1.0 + u * u) * detail::std_normal_cdf(u) + u * detail::std_normal_pdf(u);
    double acc = 0.0;
    for (int i = 0; i < rule.order; ++i) {
      const double v = base.phi(rule.nodes(i) + u);
      acc += rule.weights(i) * v * v;
    }
    return acc;
  }

  // The smoothed activation as a plain ActivationSpec (quadrature kernels).
  ActivationSpec as_activation() const {
    ConvolvedActivation self = *this;
    return ActivationSpec::custom([self](double u) { return self.psi(u); },
                                  [self](double u) { return self.psi_dot(u); });
  }
};

inline ConvolvedActivation convolve_activation(ActivationSpec base,
                                               QuadratureRule rule) {
  if (!base.phi) throw config_error("convolve_activation: base.phi missing");
  return {std::move(base), std::move(rule)};
}

// Limit output variance of the shallow stochastic network on the sphere:
//   sigma^2 = 2 E_Z[xi(Z)] - E_Z[psi(Z)^2].
inline double sigma0_squared(const ConvolvedActivation& conv, const QuadratureRule& rule) {
  const double e_xi = expectation([&](double z) { return conv.xi(z); }, rule);
  const double e_psi2 = expectation(
      [&](double z) { const double p = conv.psi(z); return p * p; }, rule);
  return 2.0 * e_xi - e_psi2;
}

// Tangent kernel of the shallow mean network on sphere-normalised points:
//   Theta(x, x') = E[psi(z) psi(z')] + (x.x'/n0) E[psi'(z) psi'(z')],
// with (z, z') ~ N(0, [[1, c], [c, 1]]), c = x.x'/n0.
inline GramMatrix shallow_ntk(const PointSet& pts, const ConvolvedActivation& conv,
                              const QuadratureRule& rule) {
  if (!pts.sphere_normalised())
    throw config_error("shallow_ntk: points must be sphere-normalised");
  const Eigen::Index n = pts.size();
  const Eigen::MatrixXd c = pts.input_gram();
  auto psi = [&](double u) { return conv.psi(u); };
  auto psi_dot = [&](double u) { return conv.psi_dot(u); };
  GramMatrix out{Eigen::MatrixXd(n, n), GramNormalisation::raw};
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j <= i; ++j) {
      Eigen::Matrix2d cov;
      cov << 1.0, c(i, j), c(i, j), 1.0;
      const double v = bivariate_expectation(psi, psi, cov, rule) +
                       c(i, j) * bivariate_expectation(psi_dot, psi_dot, cov, rule);
      out.values(i, j) = v;
      out.values(j, i) = v;
    }
  }
  return out;
}

// PAC-Bayes bound for a [0,1]-bounded loss:
//   E_Q[L_s] + (eta + (KL + log(1/delta)) / eta) / sqrt(8m).
// eta_star minimises the bracket.
struct PacBound {
  double bound = 0.0;
  double eta_star = 0.0;
};

inline PacBound pac_bound(double expected_loss, double kl, double eta, double delta,
                          int m) {
  if (delta <= 0.0 || delta >= 1.0) throw config_error("pac_bound: delta must be in (0, 1)");
  if (eta <= 0.0 || kl < 0.0 || m < 1) throw config_error("pac_bound: invalid arguments");
  const double c = kl + std::log(1.0 / delta);
  PacBound out;
  out.bound = expected_loss + (eta + c / eta) / std::sqrt(8.0 * m);
  out.eta_star = std::sqrt(c);
  return out;
}

// KL(Q | P) = 1/2 ||m(t) - m(0)||_F^2 for unit-variance Gaussian weights.
inline double kl_term(const Eigen::MatrixXd& m_now, const Eigen::MatrixXd& m_init) {
  if (m_now.rows() != m_init.rows() || m_now.cols() != m_init.cols())
    throw config_error("kl_term: shape mismatch");
  return 0.5 * (m_now - m_init).squaredNorm();
}

// lambda induced by using the PAC-Bayes bound as training objective.
inline double lambda_from_eta(double eta, int m) {
  if (eta <= 0.0 || m < 1) throw config_error("lambda_from_eta: invalid arguments");
  return 1.0 / (eta * std::sqrt(8.0 * m));
}

// Gaussian-convolved misclassification loss for binary labels:
//   l(M, y) = 1/2 (1 - erf(y M / (sigma sqrt(2)))).
inline LossSpec misclassification_loss(double sigma) {
  if (sigma <= 0.0) throw config_error("misclassification_loss: sigma must be > 0");
  const double inv_s_sqrt2 = 1.0 / (sigma * std::sqrt(2.0));
  const double inv_s_sqrt2pi = 1.0 / (sigma * std::sqrt(2.0 * detail::pi));
  return {LossKind::misclassification_convolved,
          [=](const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
            return 0.5 * (1.0 - std::erf(y(0) * f(0) * inv_s_sqrt2));
          },
          [=](const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
            Eigen::VectorXd g(1);
            g(0) = -y(0) * inv_s_sqrt2pi * std::exp(-f(0) * f(0) / (2.0 * sigma * sigma));
            return g;
          },
          false};
}

// Gaussian-convolved quadratic margin loss, E[(1 - y (sigma Z + M))^2]
// = (1 - y M)^2 + sigma^2. The additive constant does not enter the
// gradient but is kept so the reported value matches the expectation.
inline LossSpec quadratic_margin_loss(double sigma) {
  const double s2 = sigma * sigma;
  return {LossKind::quadratic_margin,
          [=](const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
            const double r = 1.0 - y(0) * f(0);
            return r * r + s2;
          },
          [](const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
            Eigen::VectorXd g(1);
            g(0) = -2.0 * y(0) * (1.0 - y(0) * f(0));
            return g;
          },
          true};
}

// Numerical integration of the misclassification-loss dynamics; labels
// must be +-1, lambda is typically lambda_from_eta(eta, m).
inline Trajectory evolve_misclassification(const GramMatrix& gram_sample,
                                           const Eigen::RowVectorXd& m0,
                                           const Eigen::RowVectorXd& labels, double sigma,
                                           double lambda, double T, double step) {
  for (Eigen::Index j = 0; j < labels.size(); ++j)
    if (labels(j) != 1.0 && labels(j) != -1.0)
      throw config_error("evolve_misclassification: labels must be +-1");
  FlowState state = FlowState::initial(m0);
  IntegrateConfig cfg{T, step, Integrator::rk4};
  return integrate(state, cfg, gram_sample, Eigen::MatrixXd(), misclassification_loss(sigma),
                   labels, lambda, RegulariserSpec::identity());
}

// Closed-form quadratic-loss dynamics,
//   M~(t) = M~(0) + (Id - e^{-2t V_{lambda/2}}) V_{lambda/2}^{-1} Theta~ (Y~ - M~(0)),
// realised as the least-squares solution of the doubled system (2 Theta~, lambda).
inline Eigen::VectorXd quadratic_closed_form(const GramMatrix& theta_tilde,
                                             const Eigen::VectorXd& m0,
                                             const Eigen::VectorXd& y, double lambda,
                                             double t) {
  if (lambda <= 0.0) throw config_error("quadratic_closed_form: lambda must be > 0");
  LsqSystem sys{GramMatrix{2.0 * theta_tilde.values, theta_tilde.normalisation}, m0, y,
                lambda};
  return LsqSolver(std::move(sys)).trajectory_at(t);
}

// Spectral decomposition of the asymptotic quadratic-loss quantities.
struct SpectralReport {
  Eigen::VectorXd theta;   // eigenvalues of Theta~
  Eigen::VectorXd alpha;   // (lambda/2)^2 / (lambda/2 + theta_i)^2
  Eigen::VectorXd beta;    // theta_i / (lambda/2 + theta_i)^2
  double L_inf = 0.0;
  double R_inf = 0.0;
  double fixed_point_residual = 0.0;  // |(2/m) dM . (M - Y) + 2 lambda R_inf|
};

inline SpectralReport spectral_report(const GramMatrix& theta_tilde,
                                      const Eigen::VectorXd& m0, const Eigen::VectorXd& y,
                                      double lambda) {
  if (lambda <= 0.0) throw config_error("spectral_report: lambda must be > 0");
  const auto m = static_cast<double>(theta_tilde.size());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(theta_tilde.values);
  SpectralReport rep;
  rep.theta = es.eigenvalues();
  const Eigen::VectorXd d = es.eigenvectors().transpose() * (m0 - y);
  rep.alpha.resize(rep.theta.size());
  rep.beta.resize(rep.theta.size());
  const double hl = 0.5 * lambda;
  rep.L_inf = 0.0;
  rep.R_inf = 0.0;
  for (Eigen::Index i = 0; i < rep.theta.size(); ++i) {
    const double den = (hl + rep.theta(i)) * (hl + rep.theta(i));
    rep.alpha(i) = hl * hl / den;
    rep.beta(i) = rep.theta(i) / den;
    rep.L_inf += rep.alpha(i) * d(i) * d(i) / m;
    rep.R_inf += rep.beta(i) * d(i) * d(i) / (2.0 * m);
  }
  // Stationarity of the regulariser rate at the fixed point.
  Eigen::VectorXd m_inf_coef(rep.theta.size());
  for (Eigen::Index i = 0; i < rep.theta.size(); ++i)
    m_inf_coef(i) = rep.theta(i) / (hl + rep.theta(i)) * (-d(i));
  const Eigen::VectorXd m_inf = m0 + es.eigenvectors() * m_inf_coef;
  const double lhs = 2.0 / m * (m_inf - m0).dot(m_inf - y);
  rep.fixed_point_residual = std::abs(lhs + 2.0 * lambda * rep.R_inf);
  return rep;
}

// Shallow stochastic network: unit-variance Gaussian weights with
// trainable means. Only the means move during training.
struct StochasticShallowNet {
  Eigen::MatrixXd m1, m1_0;  // n x n0
  Eigen::VectorXd m2, m2_0;  // n
  int n = 0;
  double sigma2 = 0.0;
  ConvolvedActivation conv;

  static StochasticShallowNet init(int n, int n0, std::uint64_t seed,
                                   ConvolvedActivation conv, const QuadratureRule& rule) {
    if (n < 1 || n0 < 1) throw config_error("StochasticShallowNet: widths must be >= 1");
    StochasticShallowNet net{Eigen::MatrixXd(n, n0), {}, Eigen::VectorXd(n), {}, n, 0.0,
                             std::move(conv)};
    CounterRng r1(seed, 1), r2(seed, 2);
    for (Eigen::Index i = 0; i < n; ++i)
      for (Eigen::Index j = 0; j < n0; ++j) net.m1(i, j) = r1.normal();
    for (Eigen::Index i = 0; i < n; ++i) net.m2(i) = r2.normal();
    net.m1_0 = net.m1;
    net.m2_0 = net.m2;
    net.sigma2 = sigma0_squared(net.conv, rule);
    return net;
  }

  Eigen::VectorXd hidden_mean(const Eigen::VectorXd& x) const {
    check_sphere(x);
    return m1 * x / std::sqrt(static_cast<double>(x.size()));
  }

  // M^2(x), the deterministic mean output of the stochastic network.
  double mean_output(const Eigen::VectorXd& x) const {
    const Eigen::VectorXd h = hidden_mean(x);
    double acc = 0.0;
    for (Eigen::Index j = 0; j < n; ++j) acc += m2(j) * conv.psi(h(j));
    return acc / std::sqrt(static_cast<double>(n));
  }

  double kl() const { return kl_term(m1, m1_0) + 0.5 * (m2 - m2_0).squaredNorm(); }

  static void check_sphere(const Eigen::VectorXd& x) {
    const auto n0 = static_cast<double>(x.size());
    if (std::abs(x.squaredNorm() - n0) > 1e-9 * n0)
      throw config_error("StochasticShallowNet: input must satisfy ||x|| = sqrt(n0)");
  }
};

// Gradient-flow training of the means on the bound objective
// L_bar_s + lambda KL; Euler discretisation.
inline std::vector<double> train_means(StochasticShallowNet& net, const Eigen::MatrixXd& X,
                                       const Eigen::RowVectorXd& Y, const LossSpec& loss,
                                       double lambda, double T, double step) {
  const Eigen::Index m = X.cols();
  const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(net.n));
  const double inv_sqrt_n0 = 1.0 / std::sqrt(static_cast<double>(X.rows()));
  const auto n_steps = static_cast<long>(std::llround(T / step));
  std::vector<double> loss_trace;
  for (long s = 0; s <= n_steps; ++s) {
    Eigen::MatrixXd g1 = Eigen::MatrixXd::Zero(net.m1.rows(), net.m1.cols());
    Eigen::VectorXd g2 = Eigen::VectorXd::Zero(net.n);
    double Ls = 0.0;
    for (Eigen::Index j = 0; j < m; ++j) {
      const Eigen::VectorXd h = net.hidden_mean(X.col(j));
      Eigen::VectorXd psi_h(net.n), psid_h(net.n);
      for (Eigen::Index i = 0; i < net.n; ++i) {
        psi_h(i) = net.conv.psi(h(i));
        psid_h(i) = net.conv.psi_dot(h(i));
      }
      const double M = inv_sqrt_n * net.m2.dot(psi_h);
      Eigen::VectorXd Mv(1), yv(1);
      Mv(0) = M;
      yv(0) = Y(j);
      Ls += loss.value(Mv, yv);
      const double gM = loss.grad(Mv, yv)(0) / static_cast<double>(m);
      g2 += gM * inv_sqrt_n * psi_h;
      g1 += (gM * inv_sqrt_n * inv_sqrt_n0) *
            (net.m2.cwiseProduct(psid_h)) * X.col(j).transpose();
    }
    loss_trace.push_back(Ls / static_cast<double>(m));
    if (s == n_steps) break;
    g1 += lambda * (net.m1 - net.m1_0);
    g2 += lambda * (net.m2 - net.m2_0);
    net.m1 -= step * g1;
    net.m2 -= step * g2;
    if (!net.m1.allFinite() || !net.m2.allFinite())
      throw divergence_error("train_means: non-finite means", (s + 1) * step);
  }
  return loss_trace;
}

// Finite-n output variance: the deterministic formula
//   Q^2 = (1/n) sum_j (1 + (m2_j)^2) xi(M1_j) - (1/n) sum_j (m2_j)^2 psi(M1_j)^2
// and an independent Monte Carlo estimate over the weight noise.
struct Q2Estimate {
  double formula = 0.0;
  double monte_carlo = 0.0;
  double monte_carlo_se = 0.0;  // standard error of the variance estimate
};

inline Q2Estimate empirical_q2(const StochasticShallowNet& net, const Eigen::VectorXd& x,
                               int mc_samples, std::uint64_t seed) {
  StochasticShallowNet::check_sphere(x);
  const Eigen::VectorXd h = net.hidden_mean(x);
  Q2Estimate est;
  for (Eigen::Index j = 0; j < net.n; ++j) {
    const double m2j2 = net.m2(j) * net.m2(j);
    const double p = net.conv.psi(h(j));
    est.formula += (1.0 + m2j2) * net.conv.xi(h(j)) - m2j2 * p * p;
  }
  est.formula /= static_cast<double>(net.n);

  if (mc_samples > 0) {
    // On the sphere, zeta1 . x / sqrt(n0) ~ N(0, 1) per hidden unit, so the
    // noisy preactivation is M1_j + g_j with g_j standard normal.
    CounterRng rng(seed, 3);
    const double inv_sqrt_n = 1.0 / std::sqrt(static_cast<double>(net.n));
    std::vector<double> outs(mc_samples);
    double mean = 0.0;
    for (int s = 0; s < mc_samples; ++s) {
      double f = 0.0;
      for (Eigen::Index j = 0; j < net.n; ++j) {
        const double u = h(j) + rng.normal();
        f += (net.m2(j) + rng.normal()) * net.conv.base.phi(u);
      }
      outs[s] = f * inv_sqrt_n;
      mean += outs[s];
    }
    mean /= mc_samples;
    double m2 = 0.0, m4 = 0.0;
    for (double v : outs) {
      const double d = v - mean;
      m2 += d * d;
      m4 += d * d * d * d;
    }
    m2 /= mc_samples;
    m4 /= mc_samples;
    est.monte_carlo = m2 * mc_samples / (mc_samples - 1.0);
    est.monte_carlo_se = std::sqrt(std::max(m4 - m2 * m2, 0.0) / mc_samples);
  }
  return est;
}

}  // namespace ntkflow
