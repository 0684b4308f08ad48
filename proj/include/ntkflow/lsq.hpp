#pragma once
#include <Eigen/Dense>
#include <cmath>

#include "ntkflow/errors.hpp"
#include "ntkflow/gram.hpp"
#include "ntkflow/quadrature.hpp"

namespace ntkflow {

// Least-squares system in the per-sample convention: theta_tilde holds
// Theta(x, x') / m, so the flow reads dF = -Theta~ (F - Y) - lambda (F - F0).
struct LsqSystem {
  GramMatrix theta_tilde;
  Eigen::VectorXd f0;
  Eigen::VectorXd y;
  double lambda = 0.0;
};

// Exact dynamics via the symmetric eigendecomposition of Theta~. The
// solver caches the eigenbasis; all queries are O(m^2) matrix-vector work.
class LsqSolver {
 public:
  explicit LsqSolver(LsqSystem sys) : sys_(std::move(sys)) {
    const Eigen::Index m = sys_.theta_tilde.size();
    if (sys_.f0.size() != m || sys_.y.size() != m)
      throw config_error("LsqSolver: vector sizes inconsistent with the Gram matrix");
    if (!sys_.f0.allFinite() || !sys_.y.allFinite() || !sys_.theta_tilde.values.allFinite())
      throw config_error("LsqSolver: non-finite inputs");
    if (sys_.lambda < 0.0) throw config_error("LsqSolver: lambda must be >= 0");
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sys_.theta_tilde.values);
    theta_eigs_ = es.eigenvalues();
    basis_ = es.eigenvectors();
    c_ = basis_.transpose() * (sys_.y - sys_.f0);  // target gap per mode
  }

  const LsqSystem& system() const { return sys_; }
  const Eigen::VectorXd& theta_eigenvalues() const { return theta_eigs_; }
  const Eigen::MatrixXd& eigenvectors() const { return basis_; }

  // Eigenvalues lambda + theta_i of V_lambda, ascending, with eigenvectors.
  Eigen::VectorXd v_lambda_spectrum() const {
    return theta_eigs_.array() + sys_.lambda;
  }

  // F~(t) = F~(0) + (Id - e^{-t V}) V^{-1} Theta~ (Y~ - F~(0)).
  // For lambda = 0, V^{-1} Theta~ acts as the identity on range(Theta~)
  // and as zero on its null space (null directions never move).
  Eigen::VectorXd trajectory_at(double t) const {
    if (t < 0.0 || !std::isfinite(t)) throw config_error("trajectory_at: need finite t >= 0");
    Eigen::VectorXd coef(theta_eigs_.size());
    for (Eigen::Index i = 0; i < coef.size(); ++i) {
      const double rate = sys_.lambda + theta_eigs_(i);
      const double gain = mode_gain(i);
      coef(i) = (1.0 - std::exp(-t * rate)) * gain * c_(i);
    }
    return sys_.f0 + basis_ * coef;
  }

  // F~(inf) = (Id - V^{-1} Theta~) F~(0) + V^{-1} Theta~ Y~.
  Eigen::VectorXd limit_infinity() const {
    Eigen::VectorXd coef(theta_eigs_.size());
    for (Eigen::Index i = 0; i < coef.size(); ++i) coef(i) = mode_gain(i) * c_(i);
    return sys_.f0 + basis_ * coef;
  }

  // Whether any null-space component is frozen at F~(0) in the lambda = 0 limit.
  bool has_frozen_modes() const {
    if (sys_.lambda > 0.0) return false;
    const double top = std::max(theta_eigs_.maxCoeff(), 1.0);
    for (Eigen::Index i = 0; i < theta_eigs_.size(); ++i)
      if (theta_eigs_(i) <= 1e-12 * top && std::abs(c_(i)) > 1e-12) return true;
    return false;
  }

  // On-sample mean kernel force tau(x; t) = <Theta(x, X) (F(X; t) - Y)>_s
  // for a probe point, from the closed-form trajectory. cross_row holds
  // Theta(x, X) / m.
  double tau(const Eigen::VectorXd& cross_row, double t) const {
    if (cross_row.size() != c_.size())
      throw config_error("off_sample: cross kernel row inconsistent with the system");
    const Eigen::VectorXd w = basis_.transpose() * cross_row;
    double acc = 0.0;
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      const double rate = sys_.lambda + theta_eigs_(i);
      const double gain = mode_gain(i);
      // (F~(t) - Y~) per mode: -c_i (1 - (1 - e^{-t rate}) gain)
      acc += w(i) * (-c_(i)) * (1.0 - (1.0 - std::exp(-t * rate)) * gain);
    }
    return acc;
  }

  // Off-sample trajectory by variation of constants,
  //   F(x; t) = F(x; 0) - int_0^t e^{-lambda (t - t')} tau(x; t') dt',
  // with the time integral done adaptively on the closed-form tau.
  double off_sample(const Eigen::VectorXd& cross_row, double f_probe0, double t) const {
    if (t < 0.0) throw config_error("off_sample: need t >= 0");
    const double lambda = sys_.lambda;
    const double integral = detail::integrate_adaptive(
        [&](double tp) { return std::exp(-lambda * (t - tp)) * tau(cross_row, tp); }, 0.0,
        t, 1e-9);
    return f_probe0 - integral;
  }

 private:
  // theta_i / (lambda + theta_i), with the null-space convention at lambda = 0.
  double mode_gain(Eigen::Index i) const {
    const double rate = sys_.lambda + theta_eigs_(i);
    if (rate <= 1e-300) return 0.0;
    return theta_eigs_(i) / rate;
  }

  LsqSystem sys_;
  Eigen::VectorXd theta_eigs_;
  Eigen::MatrixXd basis_;
  Eigen::VectorXd c_;
};

inline Eigen::VectorXd trajectory_at(const LsqSystem& sys, double t) {
  return LsqSolver(sys).trajectory_at(t);
}

inline Eigen::VectorXd limit_infinity(const LsqSystem& sys) {
  return LsqSolver(sys).limit_infinity();
}

}  // namespace ntkflow
