#pragma once
#include <Eigen/Dense>

#include "ntkflow/errors.hpp"

namespace ntkflow {

enum class GramNormalisation { raw, per_sample };

// Symmetric PSD matrix indexed by a PointSet. `per_sample` means the
// entries are kernel values divided by the sample size m.
struct GramMatrix {
  Eigen::MatrixXd values;
  GramNormalisation normalisation = GramNormalisation::raw;

  Eigen::Index size() const { return values.rows(); }

  double symmetry_defect() const {
    return (values - values.transpose()).cwiseAbs().maxCoeff();
  }

  // Smallest eigenvalue must not be below -1e-8 * largest.
  bool is_psd(double rel_tol = 1e-8) const {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(values, Eigen::EigenvaluesOnly);
    const auto& ev = es.eigenvalues();
    const double top = std::max(ev.maxCoeff(), 0.0);
    return ev.minCoeff() >= -rel_tol * std::max(top, 1e-300);
  }

  void validate() const {
    if (values.rows() != values.cols())
      throw config_error("GramMatrix: not square");
    if (symmetry_defect() > 1e-12)
      throw numerical_domain_error("GramMatrix: symmetry defect above 1e-12");
    if (!is_psd())
      throw numerical_domain_error("GramMatrix: not PSD within tolerance");
  }

  GramMatrix permuted(const Eigen::VectorXi& perm) const {
    Eigen::PermutationMatrix<Eigen::Dynamic> P(perm);
    return {P.transpose() * values * P, normalisation};
  }
};

}  // namespace ntkflow
