#pragma once
#include <cmath>
#include <functional>
#include <optional>
#include <string>

#include "ntkflow/errors.hpp"

namespace ntkflow {

enum class ActivationKind { relu, erf, tanh, identity, custom };
enum class KernelMode { analytic, quadrature };

// Scalar activation with its derivative. `kernel_mode` selects whether
// the Gaussian expectations in the kernel recursion use a closed form
// (only available for relu, erf and identity) or quadrature.
struct ActivationSpec {
  ActivationKind kind = ActivationKind::custom;
  std::function<double(double)> phi;
  std::function<double(double)> phi_dot;
  std::optional<double> lipschitz;
  std::optional<double> smoothness;
  KernelMode kernel_mode = KernelMode::quadrature;

  static ActivationSpec relu(KernelMode mode = KernelMode::analytic) {
    return {ActivationKind::relu,
            [](double u) { return u > 0.0 ? u : 0.0; },
            [](double u) { return u > 0.0 ? 1.0 : 0.0; },
            1.0, std::nullopt, mode};
  }

  static ActivationSpec erf(KernelMode mode = KernelMode::analytic) {
    constexpr double two_over_sqrt_pi = 1.1283791670955125738961589031;
    return {ActivationKind::erf,
            [](double u) { return std::erf(u); },
            [=](double u) { return two_over_sqrt_pi * std::exp(-u * u); },
            two_over_sqrt_pi, 2.0 * two_over_sqrt_pi, mode};
  }

  static ActivationSpec tanh() {
    return {ActivationKind::tanh,
            [](double u) { return std::tanh(u); },
            [](double u) { const double t = std::tanh(u); return 1.0 - t * t; },
            1.0, 2.0, KernelMode::quadrature};
  }

  static ActivationSpec identity(KernelMode mode = KernelMode::analytic) {
    return {ActivationKind::identity,
            [](double u) { return u; },
            [](double) { return 1.0; },
            1.0, 0.0, mode};
  }

  static ActivationSpec custom(std::function<double(double)> phi,
                               std::function<double(double)> phi_dot) {
    return {ActivationKind::custom, std::move(phi), std::move(phi_dot),
            std::nullopt, std::nullopt, KernelMode::quadrature};
  }

  void validate() const {
    if (!phi || !phi_dot) throw config_error("ActivationSpec: phi/phi_dot missing");
    if (kernel_mode == KernelMode::analytic && kind != ActivationKind::relu &&
        kind != ActivationKind::erf && kind != ActivationKind::identity)
      throw config_error("ActivationSpec: analytic kernels only for relu/erf/identity");
  }
};

inline ActivationSpec activation_by_name(const std::string& name,
                                         KernelMode mode = KernelMode::quadrature) {
  if (name == "relu") return ActivationSpec::relu(mode);
  if (name == "erf") return ActivationSpec::erf(mode);
  if (name == "tanh") return ActivationSpec::tanh();
  if (name == "identity") return ActivationSpec::identity(mode);
  throw config_error("unknown activation: " + name);
}

}  // namespace ntkflow
