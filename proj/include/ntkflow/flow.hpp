#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "ntkflow/errors.hpp"
#include "ntkflow/gram.hpp"

namespace ntkflow {

enum class LossKind { least_squares, quadratic_margin, misclassification_convolved, custom };

// Per-sample loss on the network output; value and grad take one output
// column F in R^q and the matching label column.
struct LossSpec {
  LossKind kind = LossKind::custom;
  std::function<double(const Eigen::VectorXd&, const Eigen::VectorXd&)> value;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const Eigen::VectorXd&)> grad;
  bool convex = false;

  static LossSpec least_squares() {
    return {LossKind::least_squares,
            [](const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
              return 0.5 * (f - y).squaredNorm();
            },
            [](const Eigen::VectorXd& f, const Eigen::VectorXd& y) {
              return Eigen::VectorXd(f - y);
            },
            true};
  }
};

struct RegulariserSpec {
  enum class Kind { identity, custom };
  Kind kind = Kind::identity;
  std::function<double(double)> rho;
  std::function<double(double)> rho_prime;

  static RegulariserSpec identity() {
    return {Kind::identity, [](double d) { return d; }, [](double) { return 1.0; }};
  }
  static RegulariserSpec custom(std::function<double(double)> rho,
                                std::function<double(double)> rho_prime) {
    return {Kind::custom, std::move(rho), std::move(rho_prime)};
  }
};

// Function-space state: outputs on the training sample and on probe
// points, their initial snapshots, and the displacement surrogate D(t).
struct FlowState {
  double t = 0.0;
  Eigen::MatrixXd F_sample;   // q x m
  Eigen::MatrixXd F_probe;    // q x p (p may be 0)
  Eigen::MatrixXd F0_sample;
  Eigen::MatrixXd F0_probe;
  double D = 0.0;

  static FlowState initial(Eigen::MatrixXd f0_sample, Eigen::MatrixXd f0_probe = {}) {
    FlowState s;
    s.F_sample = f0_sample;
    s.F_probe = f0_probe;
    s.F0_sample = std::move(f0_sample);
    s.F0_probe = std::move(f0_probe);
    return s;
  }
};

struct FlowObservables {
  double t = 0.0;
  double Ls = 0.0;
  double R = 0.0;
  double Cs = 0.0;
  // Closed-form rates; NaN when rho is not the identity.
  double dLs = 0.0;
  double dR = 0.0;
  double dCs = 0.0;
};

struct Trajectory {
  std::vector<FlowState> states;
  std::vector<FlowObservables> observables;
  double lambda = 0.0;
  double step = 0.0;
};

struct FlowDerivative {
  Eigen::MatrixXd dF_sample;
  Eigen::MatrixXd dF_probe;
  double dD = 0.0;
};

namespace detail {

inline Eigen::MatrixXd loss_grads(const LossSpec& loss, const Eigen::MatrixXd& F,
                                  const Eigen::MatrixXd& Y) {
  Eigen::MatrixXd g(F.rows(), F.cols());
  for (Eigen::Index j = 0; j < F.cols(); ++j) g.col(j) = loss.grad(F.col(j), Y.col(j));
  return g;
}

inline double empirical_loss(const LossSpec& loss, const Eigen::MatrixXd& F,
                             const Eigen::MatrixXd& Y) {
  double acc = 0.0;
  for (Eigen::Index j = 0; j < F.cols(); ++j) acc += loss.value(F.col(j), Y.col(j));
  return acc / static_cast<double>(F.cols());
}

}  // namespace detail

// Time derivatives of the regularised functional flow:
//   dF_k(x) = -<Theta(x, X) dl/dF_k>_s - lambda rho'(D) (F_k(x) - F_k(x; 0))
//   dD      = -sum_k <dF_k(X) dl/dF_k>_s ... with DF = F - F(0):
//             -sum_k <DF_k(X) dl/dF_k>_s - 2 lambda rho'(D) D
// gram_sample is the raw Theta Gram over the sample; the empirical
// average divides by m here.
inline FlowDerivative rhs(const FlowState& state, const GramMatrix& gram_sample,
                          const Eigen::MatrixXd& gram_cross, const LossSpec& loss,
                          const Eigen::MatrixXd& labels, double lambda,
                          const RegulariserSpec& reg) {
  const Eigen::Index m = state.F_sample.cols();
  if (gram_sample.normalisation != GramNormalisation::raw)
    throw config_error("flow::rhs: expects a raw Gram matrix (per-sample given)");
  if (gram_sample.size() != m || labels.cols() != m ||
      labels.rows() != state.F_sample.rows())
    throw config_error("flow::rhs: dimension mismatch between state, gram and labels");
  if (state.F_probe.size() > 0 && gram_cross.cols() != m)
    throw config_error("flow::rhs: cross Gram block inconsistent with sample");

  const double inv_m = 1.0 / static_cast<double>(m);
  const Eigen::MatrixXd g = detail::loss_grads(loss, state.F_sample, labels);  // q x m
  const double rp = reg.rho_prime(state.D);

  FlowDerivative d;
  d.dF_sample = -inv_m * (g * gram_sample.values) -
                lambda * rp * (state.F_sample - state.F0_sample);
  if (state.F_probe.size() > 0)
    d.dF_probe = -inv_m * (g * gram_cross.transpose()) -
                 lambda * rp * (state.F_probe - state.F0_probe);
  else
    d.dF_probe = state.F_probe;
  const Eigen::MatrixXd dF = state.F_sample - state.F0_sample;
  d.dD = -inv_m * (dF.cwiseProduct(g)).sum() - 2.0 * lambda * rp * state.D;
  return d;
}

// Closed-form objective rates, valid for rho = id:
//   dLs = -<Theta grad.grad'>_{sxs} - lambda <grad . DF>_s
//   dR  = -<grad . DF>_s - 2 lambda R
//   dCs = -<Theta grad.grad'>_{sxs} - 2 lambda <grad . DF>_s - 2 lambda^2 R
struct ObjectiveRates {
  double dLs = 0.0;
  double dR = 0.0;
  double dCs = 0.0;
};

inline ObjectiveRates objective_rates(const FlowState& state, const GramMatrix& gram_sample,
                                      const LossSpec& loss, const Eigen::MatrixXd& labels,
                                      double lambda, const RegulariserSpec& reg) {
  if (reg.kind != RegulariserSpec::Kind::identity)
    throw unsupported_error("objective_rates: identities hold only for rho = id");
  const double m = static_cast<double>(state.F_sample.cols());
  const Eigen::MatrixXd g = detail::loss_grads(loss, state.F_sample, labels);
  // <Theta grad . grad'>_{sxs}: full m x m contraction, summed over outputs.
  double t1 = 0.0;
  for (Eigen::Index k = 0; k < g.rows(); ++k)
    t1 += g.row(k) * gram_sample.values * g.row(k).transpose();
  t1 /= m * m;
  const double t2 = (state.F_sample - state.F0_sample).cwiseProduct(g).sum() / m;
  const double R = state.D;  // rho = id
  ObjectiveRates r;
  r.dLs = -t1 - lambda * t2;
  r.dR = -t2 - 2.0 * lambda * R;
  r.dCs = -t1 - 2.0 * lambda * t2 - 2.0 * lambda * lambda * R;
  return r;
}

enum class Integrator { rk4, euler };

struct IntegrateConfig {
  double T = 1.0;
  double step = 1e-3;
  Integrator method = Integrator::rk4;
};

// Recommended step for the least-squares case: rate constants are
// lambda + theta_max, so scale 1e-3 by the inverse of that.
inline double default_step(double lambda, const GramMatrix& theta_tilde) {
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(theta_tilde.values,
                                                    Eigen::EigenvaluesOnly);
  const double rate = lambda + std::max(es.eigenvalues().maxCoeff(), 0.0);
  return 1e-3 / std::max(rate, 1e-12);
}

inline Trajectory integrate(const FlowState& state0, const IntegrateConfig& config,
                            const GramMatrix& gram_sample, const Eigen::MatrixXd& gram_cross,
                            const LossSpec& loss, const Eigen::MatrixXd& labels,
                            double lambda, const RegulariserSpec& reg) {
  if (config.T < 0.0 || config.step <= 0.0)
    throw config_error("flow::integrate: need T >= 0 and step > 0");

  Trajectory traj;
  traj.lambda = lambda;
  traj.step = config.step;
  const auto n_steps = static_cast<long>(std::llround(config.T / config.step));

  auto record = [&](const FlowState& s) {
    FlowObservables obs;
    obs.t = s.t;
    obs.Ls = detail::empirical_loss(loss, s.F_sample, labels);
    obs.R = reg.rho(s.D);
    obs.Cs = obs.Ls + lambda * obs.R;
    if (reg.kind == RegulariserSpec::Kind::identity) {
      const ObjectiveRates r = objective_rates(s, gram_sample, loss, labels, lambda, reg);
      obs.dLs = r.dLs;
      obs.dR = r.dR;
      obs.dCs = r.dCs;
    } else {
      obs.dLs = obs.dR = obs.dCs = std::numeric_limits<double>::quiet_NaN();
    }
    traj.observables.push_back(obs);
    traj.states.push_back(s);
  };

  FlowState s = state0;
  s.t = 0.0;
  record(s);
  const double h = config.step;
  for (long n = 0; n < n_steps; ++n) {
    if (config.method == Integrator::euler) {
      const FlowDerivative k1 = rhs(s, gram_sample, gram_cross, loss, labels, lambda, reg);
      s.F_sample += h * k1.dF_sample;
      if (s.F_probe.size() > 0) s.F_probe += h * k1.dF_probe;
      s.D += h * k1.dD;
    } else {
      auto at = [&](const FlowDerivative& k, double c) {
        FlowState u = s;
        u.F_sample += c * h * k.dF_sample;
        if (u.F_probe.size() > 0) u.F_probe += c * h * k.dF_probe;
        u.D += c * h * k.dD;
        return u;
      };
      const FlowDerivative k1 = rhs(s, gram_sample, gram_cross, loss, labels, lambda, reg);
      const FlowDerivative k2 =
          rhs(at(k1, 0.5), gram_sample, gram_cross, loss, labels, lambda, reg);
      const FlowDerivative k3 =
          rhs(at(k2, 0.5), gram_sample, gram_cross, loss, labels, lambda, reg);
      const FlowDerivative k4 =
          rhs(at(k3, 1.0), gram_sample, gram_cross, loss, labels, lambda, reg);
      s.F_sample +=
          h / 6.0 * (k1.dF_sample + 2.0 * k2.dF_sample + 2.0 * k3.dF_sample + k4.dF_sample);
      if (s.F_probe.size() > 0)
        s.F_probe +=
            h / 6.0 * (k1.dF_probe + 2.0 * k2.dF_probe + 2.0 * k3.dF_probe + k4.dF_probe);
      s.D += h / 6.0 * (k1.dD + 2.0 * k2.dD + 2.0 * k3.dD + k4.dD);
    }
    s.t = (n + 1) * h;
    if (!s.F_sample.allFinite() || !std::isfinite(s.D) ||
        (s.F_probe.size() > 0 && !s.F_probe.allFinite()))
      throw divergence_error("flow::integrate: non-finite state at t = " +
                                 std::to_string(s.t), s.t);
    record(s);
  }
  return traj;
}

// Step-halving self-check: integrate once at `step` and once at half the
// step, and report the endpoint difference.
inline double step_halving_defect(const FlowState& state0, IntegrateConfig config,
                                  const GramMatrix& gram_sample,
                                  const Eigen::MatrixXd& gram_cross, const LossSpec& loss,
                                  const Eigen::MatrixXd& labels, double lambda,
                                  const RegulariserSpec& reg) {
  const Trajectory coarse =
      integrate(state0, config, gram_sample, gram_cross, loss, labels, lambda, reg);
  config.step *= 0.5;
  const Trajectory fine =
      integrate(state0, config, gram_sample, gram_cross, loss, labels, lambda, reg);
  return (coarse.states.back().F_sample - fine.states.back().F_sample)
      .cwiseAbs()
      .maxCoeff();
}

// Evaluates, at each recorded time, the bound
//   lambda R(t) <= (1 - e^{-lambda t}) / (2 - e^{-lambda t}) (Ls(0) - Ls(t)).
// Requires a convex loss and rho = id; R(t) is D(t) in that case.
struct BoundCheck {
  double t;
  double lhs;
  double rhs;
  double slack;  // rhs - lhs
  bool holds;
};

inline std::vector<BoundCheck> regulariser_bound_check(const Trajectory& traj) {
  std::vector<BoundCheck> out;
  out.reserve(traj.states.size());
  const double Ls0 = traj.observables.front().Ls;
  const double lambda = traj.lambda;
  for (std::size_t i = 0; i < traj.states.size(); ++i) {
    const double t = traj.states[i].t;
    const double e = std::exp(-lambda * t);
    const double factor = (1.0 - e) / (2.0 - e);
    BoundCheck c{};
    c.t = t;
    c.lhs = lambda * traj.states[i].D;
    c.rhs = factor * (Ls0 - traj.observables[i].Ls);
    c.slack = c.rhs - c.lhs;
    c.holds = c.slack >= -1e-10 * std::max(1.0, std::abs(Ls0));
    out.push_back(c);
  }
  return out;
}

}  // namespace ntkflow
