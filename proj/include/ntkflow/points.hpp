#pragma once
#include <Eigen/Dense>
#include <cmath>

#include "ntkflow/errors.hpp"

namespace ntkflow {

// An ordered collection of input vectors. Columns of `coords` are the
// points; every Gram matrix in the library is indexed by such a set.
class PointSet {
 public:
  PointSet() = default;
  // coords: n0 x N, one column per point.
  explicit PointSet(Eigen::MatrixXd coords, bool sphere_normalised = false)
      : coords_(std::move(coords)), sphere_normalised_(sphere_normalised) {
    if (coords_.rows() < 1 || coords_.cols() < 1)
      throw config_error("PointSet: needs at least one point of dimension >= 1");
    if (sphere_normalised_) {
      const double n0 = static_cast<double>(coords_.rows());
      for (Eigen::Index i = 0; i < coords_.cols(); ++i) {
        if (std::abs(coords_.col(i).squaredNorm() - n0) > 1e-9 * n0)
          throw config_error("PointSet: point not on the sphere of radius sqrt(n0)");
      }
    }
  }

  // Rescales every point onto the sphere of radius sqrt(n0).
  static PointSet on_sphere(Eigen::MatrixXd coords) {
    const double n0 = static_cast<double>(coords.rows());
    for (Eigen::Index i = 0; i < coords.cols(); ++i) {
      const double nrm = coords.col(i).norm();
      if (nrm == 0.0) throw config_error("PointSet: cannot normalise the zero vector");
      coords.col(i) *= std::sqrt(n0) / nrm;
    }
    return PointSet(std::move(coords), true);
  }

  Eigen::Index dim() const { return coords_.rows(); }
  Eigen::Index size() const { return coords_.cols(); }
  Eigen::VectorXd point(Eigen::Index i) const { return coords_.col(i); }
  const Eigen::MatrixXd& coords() const { return coords_; }
  bool sphere_normalised() const { return sphere_normalised_; }

  // Entries x_i . x_j / n0, the depth-1 kernel.
  Eigen::MatrixXd input_gram() const {
    return (coords_.transpose() * coords_) / static_cast<double>(dim());
  }

 private:
  Eigen::MatrixXd coords_;
  bool sphere_normalised_ = false;
};

}  // namespace ntkflow
