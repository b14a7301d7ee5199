#pragma once

// Central finite-difference gradient checker for double-precision graphs.

#include <functional>
#include <string>
#include <utility>
#include <vector>

#include "mesm/autograd.hpp"

namespace mesm::checks {

using NamedVar = std::pair<std::string, ad::Var<double>>;

struct GradCheckReport {
  /// ||analytic - numeric|| / max(||analytic||, ||numeric||) over every
  /// checked entry.
  double rel_error = 0.0;
  double analytic_norm = 0.0;
  std::size_t entries = 0;
  std::string worst_param;
  double worst_param_error = 0.0;
};

/// `loss` must rebuild the graph from the current parameter values each
/// call. With `stride` > 1 only every stride-th entry of each parameter is
/// perturbed.
GradCheckReport check_gradients(const std::vector<NamedVar>& params, const std::function<ad::Var<double>()>& loss,
                                double eps = 1e-6, std::size_t stride = 1);

}  // namespace mesm::checks
