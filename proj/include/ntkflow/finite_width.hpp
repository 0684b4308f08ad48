#pragma once
#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <vector>

#include "ntkflow/activation.hpp"
#include "ntkflow/errors.hpp"
#include "ntkflow/flow.hpp"
#include "ntkflow/rng.hpp"

namespace ntkflow {

// Explicit-width fully connected network in NTK parameterisation:
// every layer carries a 1/sqrt(n_{l-1}) prefactor and weights start as
// i.i.d. standard normals. The initial weights are kept for the
// displacement D(t) and the lazy-training diagnostics.
struct FiniteNetwork {
  std::vector<int> widths;                // n0, n1, ..., nL
  std::vector<Eigen::MatrixXd> weights;   // W^l is n_l x n_{l-1}, l = 1..L
  std::vector<Eigen::MatrixXd> weights0;
  std::uint64_t seed = 0;

  int depth() const { return static_cast<int>(weights.size()); }
  int input_dim() const { return widths.front(); }
  int output_dim() const { return widths.back(); }

  // One counter-based stream per layer, so the draw for layer l does not
  // depend on the other layers' sizes.
  static FiniteNetwork init(std::vector<int> widths, std::uint64_t seed) {
    if (widths.size() < 2) throw config_error("FiniteNetwork: need at least one layer");
    for (int w : widths)
      if (w < 1) throw config_error("FiniteNetwork: widths must be >= 1");
    FiniteNetwork net;
    net.widths = std::move(widths);
    net.seed = seed;
    for (std::size_t l = 1; l < net.widths.size(); ++l) {
      CounterRng rng(seed, l);
      Eigen::MatrixXd W(net.widths[l], net.widths[l - 1]);
      for (Eigen::Index i = 0; i < W.rows(); ++i)
        for (Eigen::Index j = 0; j < W.cols(); ++j) W(i, j) = rng.normal();
      net.weights.push_back(W);
      net.weights0.push_back(std::move(W));
    }
    return net;
  }

  // D(t) = 1/2 sum_l ||W^l - W^l(0)||_F^2.
  double displacement() const {
    double acc = 0.0;
    for (std::size_t l = 0; l < weights.size(); ++l)
      acc += (weights[l] - weights0[l]).squaredNorm();
    return 0.5 * acc;
  }

  struct Forward {
    std::vector<Eigen::VectorXd> pre;  // pre[l] = U^{l+1}(x), l = 0..L-1
    std::vector<Eigen::VectorXd> act;  // act[0] = x, act[l] = phi(U^l), l = 1..L-1
  };

  Forward forward(const Eigen::VectorXd& x, const ActivationSpec& activation,
                  bool at_init = false) const {
    const auto& W = at_init ? weights0 : weights;
    Forward f;
    f.act.push_back(x);
    Eigen::VectorXd u;
    for (std::size_t l = 0; l < W.size(); ++l) {
      u = W[l] * f.act.back() / std::sqrt(static_cast<double>(widths[l]));
      f.pre.push_back(u);
      if (l + 1 < W.size()) f.act.push_back(u.unaryExpr(activation.phi));
    }
    return f;
  }

  Eigen::VectorXd output(const Eigen::VectorXd& x, const ActivationSpec& activation,
                         bool at_init = false) const {
    return forward(x, activation, at_init).pre.back();
  }
};

namespace detail {

// Backward sensitivities delta[l] = dF / dU^{l+1}, shape n_{l+1} x q,
// so that dF_k / dW^l_{ij} = delta[l-1](i, k) act[l-1](j) / sqrt(n_{l-1}).
inline std::vector<Eigen::MatrixXd> backward(const FiniteNetwork& net,
                                             const FiniteNetwork::Forward& f,
                                             const ActivationSpec& activation) {
  const int L = net.depth();
  const int q = net.output_dim();
  std::vector<Eigen::MatrixXd> delta(L);
  delta[L - 1] = Eigen::MatrixXd::Identity(q, q);
  for (int l = L - 2; l >= 0; --l) {
    const Eigen::VectorXd gate = f.pre[l].unaryExpr(activation.phi_dot);
    delta[l] = gate.asDiagonal() * (net.weights[l + 1].transpose() * delta[l + 1]) /
               std::sqrt(static_cast<double>(net.widths[l + 1]));
  }
  return delta;
}

}  // namespace detail

// Full Jacobian slices dF_k / dW^l for one input; test-scale only.
// psi[k][l] has the shape of W^{l+1}.
struct JacobianSlices {
  std::vector<std::vector<Eigen::MatrixXd>> psi;
};

inline JacobianSlices jacobian_slices(const FiniteNetwork& net, const ActivationSpec& act,
                                      const Eigen::VectorXd& x) {
  const auto f = net.forward(x, act);
  const auto delta = detail::backward(net, f, act);
  JacobianSlices out;
  out.psi.resize(net.output_dim());
  for (int k = 0; k < net.output_dim(); ++k) {
    out.psi[k].resize(net.depth());
    for (int l = 0; l < net.depth(); ++l)
      out.psi[k][l] = delta[l].col(k) * f.act[l].transpose() /
                      std::sqrt(static_cast<double>(net.widths[l]));
  }
  return out;
}

// Empirical tangent kernel Theta^L_{kk'}(x, x') = sum_l psi_k(x) . psi_k'(x'),
// computed layerwise without materialising the Jacobians.
inline Eigen::MatrixXd empirical_theta(const FiniteNetwork& net, const ActivationSpec& act,
                                       const Eigen::VectorXd& x, const Eigen::VectorXd& xp) {
  const auto fx = net.forward(x, act);
  const auto fxp = net.forward(xp, act);
  const auto dx = detail::backward(net, fx, act);
  const auto dxp = detail::backward(net, fxp, act);
  const int q = net.output_dim();
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(q, q);
  for (int l = 0; l < net.depth(); ++l) {
    const double a_dot = fx.act[l].dot(fxp.act[l]) / static_cast<double>(net.widths[l]);
    theta += (dx[l].transpose() * dxp[l]) * a_dot;
  }
  return theta;
}

// Xi^L_k(x) = sum_l psi_k(x) . DeltaW^l: the linearised-output surrogate
// that equals Delta U^L in the infinite-width limit.
inline Eigen::VectorXd xi(const FiniteNetwork& net, const ActivationSpec& act,
                          const Eigen::VectorXd& x) {
  const auto f = net.forward(x, act);
  const auto delta = detail::backward(net, f, act);
  Eigen::VectorXd out = Eigen::VectorXd::Zero(net.output_dim());
  for (int l = 0; l < net.depth(); ++l) {
    const Eigen::VectorXd v = (net.weights[l] - net.weights0[l]) * f.act[l] /
                              std::sqrt(static_cast<double>(net.widths[l]));
    out += delta[l].transpose() * v;
  }
  return out;
}

struct TrainOptions {
  double T = 1.0;
  double step = 1e-3;
  Integrator method = Integrator::euler;
  int record_every = 1;
};

struct TrainRecord {
  std::vector<double> t;
  std::vector<double> D;
  std::vector<double> Ls;
  std::vector<double> Cs;
  std::vector<Eigen::MatrixXd> F_sample;  // q x m snapshots at recorded times
};

namespace detail {

inline std::vector<Eigen::MatrixXd> weight_gradient(const FiniteNetwork& net,
                                                    const ActivationSpec& act,
                                                    const Eigen::MatrixXd& X,
                                                    const Eigen::MatrixXd& Y,
                                                    const LossSpec& loss, double lambda,
                                                    const RegulariserSpec& reg) {
  const Eigen::Index m = X.cols();
  std::vector<Eigen::MatrixXd> grad(net.depth());
  for (int l = 0; l < net.depth(); ++l)
    grad[l] = Eigen::MatrixXd::Zero(net.weights[l].rows(), net.weights[l].cols());
  for (Eigen::Index s = 0; s < m; ++s) {
    const auto f = net.forward(X.col(s), act);
    const auto delta = backward(net, f, act);
    const Eigen::VectorXd g = loss.grad(f.pre.back(), Y.col(s));
    for (int l = 0; l < net.depth(); ++l)
      grad[l] += (delta[l] * g) * f.act[l].transpose() /
                 (std::sqrt(static_cast<double>(net.widths[l])) * static_cast<double>(m));
  }
  const double rp = lambda * reg.rho_prime(net.displacement());
  for (int l = 0; l < net.depth(); ++l)
    grad[l] += rp * (net.weights[l] - net.weights0[l]);
  return grad;
}

}  // namespace detail

// Discretised gradient flow on the weights:
//   dW^l/dt = -<psi^{L;l} grad_F l>_s - lambda rho'(D) DeltaW^l.
inline TrainRecord train(FiniteNetwork& net, const ActivationSpec& act,
                         const Eigen::MatrixXd& X, const Eigen::MatrixXd& Y,
                         const LossSpec& loss, double lambda, const RegulariserSpec& reg,
                         const TrainOptions& opt) {
  if (X.rows() != net.input_dim() || Y.cols() != X.cols() || Y.rows() != net.output_dim())
    throw config_error("finite_width::train: sample shape mismatch");
  if (opt.step <= 0.0 || opt.T < 0.0)
    throw config_error("finite_width::train: need step > 0, T >= 0");

  const Eigen::Index m = X.cols();
  TrainRecord rec;
  auto record = [&](double t) {
    Eigen::MatrixXd F(net.output_dim(), m);
    for (Eigen::Index s = 0; s < m; ++s) F.col(s) = net.output(X.col(s), act);
    double Ls = 0.0;
    for (Eigen::Index s = 0; s < m; ++s) Ls += loss.value(F.col(s), Y.col(s));
    Ls /= static_cast<double>(m);
    const double D = net.displacement();
    rec.t.push_back(t);
    rec.D.push_back(D);
    rec.Ls.push_back(Ls);
    rec.Cs.push_back(Ls + lambda * reg.rho(D));
    rec.F_sample.push_back(std::move(F));
  };

  const auto n_steps = static_cast<long>(std::llround(opt.T / opt.step));
  record(0.0);
  for (long n = 0; n < n_steps; ++n) {
    const double h = opt.step;
    if (opt.method == Integrator::euler) {
      const auto grad = detail::weight_gradient(net, act, X, Y, loss, lambda, reg);
      for (int l = 0; l < net.depth(); ++l) net.weights[l] -= h * grad[l];
    } else {
      const auto saved = net.weights;
      auto eval = [&](double c, const std::vector<Eigen::MatrixXd>& k) {
        for (int l = 0; l < net.depth(); ++l) net.weights[l] = saved[l] - c * h * k[l];
        return detail::weight_gradient(net, act, X, Y, loss, lambda, reg);
      };
      const auto k1 = detail::weight_gradient(net, act, X, Y, loss, lambda, reg);
      const auto k2 = eval(0.5, k1);
      const auto k3 = eval(0.5, k2);
      const auto k4 = eval(1.0, k3);
      for (int l = 0; l < net.depth(); ++l)
        net.weights[l] = saved[l] - h / 6.0 * (k1[l] + 2.0 * k2[l] + 2.0 * k3[l] + k4[l]);
    }
    const double t = (n + 1) * opt.step;
    for (const auto& W : net.weights)
      if (!W.allFinite())
        throw divergence_error("finite_width::train: non-finite weights at t = " +
                                   std::to_string(t), t);
    if ((n + 1) % opt.record_every == 0 || n + 1 == n_steps) record(t);
  }
  return rec;
}

// One row per width: worst-case drifts over the training horizon.
struct DriftRow {
  int width = 0;
  double sup_dtheta = 0.0;        // sup_t max-entry |Theta^L(t) - Theta^L(0)|
  double sup_xi_minus_du = 0.0;   // sup_t max |Xi^L - DeltaU^L| at the probe
  std::vector<double> sup_du;     // sup_t ||U^l(t) - U^l(0)|| per layer, at the probe
  double D_final = 0.0;
};

struct DriftReport {
  std::vector<DriftRow> rows;
  double theta_slope = 0.0;  // log sup|dTheta| vs log n least-squares slope
};

// Trains a fresh depth-L network per width on (X, Y) and measures the
// lazy-training drift quantities at the given probe pairs.
inline DriftReport drift_report(const std::vector<int>& hidden_widths, int depth,
                                const ActivationSpec& act, const Eigen::MatrixXd& X,
                                const Eigen::MatrixXd& Y, const LossSpec& loss,
                                double lambda, const RegulariserSpec& reg,
                                const TrainOptions& opt, std::uint64_t seed,
                                int probe_every = 20) {
  if (hidden_widths.size() < 3)
    throw config_error("drift_report: need at least three widths");
  if (!act.smoothness)
    std::fprintf(stderr,
                 "drift_report: warning: activation is not smooth; the lazy-training "
                 "drift rates assume a smooth activation\n");
  const int n0 = static_cast<int>(X.rows());
  const int q = static_cast<int>(Y.rows());
  const Eigen::Index m = X.cols();

  DriftReport report;
  for (int n : hidden_widths) {
    std::vector<int> widths(static_cast<std::size_t>(depth) + 1, n);
    widths.front() = n0;
    widths.back() = q;
    FiniteNetwork net = FiniteNetwork::init(widths, seed);

    // Theta is tracked on all sample pairs; Xi/DeltaU at the first sample.
    std::vector<Eigen::MatrixXd> theta0;
    for (Eigen::Index i = 0; i < m; ++i)
      for (Eigen::Index j = i; j < m; ++j)
        theta0.push_back(empirical_theta(net, act, X.col(i), X.col(j)));

    DriftRow row;
    row.width = n;
    row.sup_du.assign(static_cast<std::size_t>(depth), 0.0);
    const Eigen::VectorXd probe = X.col(0);

    auto measure = [&]() {
      std::size_t idx = 0;
      for (Eigen::Index i = 0; i < m; ++i)
        for (Eigen::Index j = i; j < m; ++j) {
          const Eigen::MatrixXd th = empirical_theta(net, act, X.col(i), X.col(j));
          row.sup_dtheta =
              std::max(row.sup_dtheta, (th - theta0[idx]).cwiseAbs().maxCoeff());
          ++idx;
        }
      const auto fwd = net.forward(probe, act);
      const auto fwd0 = net.forward(probe, act, true);
      for (int l = 0; l < depth; ++l)
        row.sup_du[l] =
            std::max(row.sup_du[l], (fwd.pre[l] - fwd0.pre[l]).norm());
      const Eigen::VectorXd du = fwd.pre.back() - fwd0.pre.back();
      row.sup_xi_minus_du = std::max(
          row.sup_xi_minus_du, (xi(net, act, probe) - du).cwiseAbs().maxCoeff());
    };

    const auto n_steps = static_cast<long>(std::llround(opt.T / opt.step));
    for (long s = 0; s < n_steps; ++s) {
      TrainOptions one = opt;
      one.T = opt.step;
      train(net, act, X, Y, loss, lambda, reg, one);
      if ((s + 1) % probe_every == 0 || s + 1 == n_steps) measure();
    }
    row.D_final = net.displacement();
    report.rows.push_back(std::move(row));
  }

  // Least-squares slope of log drift against log width.
  const auto k = static_cast<double>(report.rows.size());
  double sx = 0, sy = 0, sxx = 0, sxy = 0;
  for (const auto& row : report.rows) {
    const double lx = std::log(static_cast<double>(row.width));
    const double ly = std::log(std::max(row.sup_dtheta, 1e-300));
    sx += lx;
    sy += ly;
    sxx += lx * lx;
    sxy += lx * ly;
  }
  report.theta_slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
  return report;
}

}  // namespace ntkflow
