#pragma once
#include <stdexcept>
#include <string>

namespace ntkflow {

// Invalid configuration or input shapes. The CLI maps this to exit code 2.
struct config_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// A numerical precondition failed (e.g. a covariance block is not PSD).
struct numerical_domain_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Non-finite state encountered during integration. CLI exit code 3.
struct divergence_error : std::runtime_error {
  divergence_error(const std::string& what, double when)
      : std::runtime_error(what), time(when) {}
  double time;
};

// An operation was called outside the regime it is derived for.
struct unsupported_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace ntkflow
