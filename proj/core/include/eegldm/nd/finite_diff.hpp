#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "eegldm/nd/params.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::nd {

using ScalarFunction = std::function<double(std::span<const double>)>;

// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
std::vector<double> finite_difference_gradient(const ScalarFunction& f,
                                               std::span<const double> point, double h);

// ||a - b|| / max(||a||, ||b||); zero when both norms are below 1e-12.
double relative_error(std::span<const double> a, std::span<const double> b);

struct GradientCheckResult {
  double max_relative_error = 0;
  std::string worst_parameter;
  std::size_t coordinates_checked = 0;
};

// Compares tape gradients of `loss` against central differences for every
// trainable parameter, sampling at most max_coords coordinates per tensor.
GradientCheckResult check_parameter_gradients(ParameterTree<double>& tree,
                                              const std::function<Var<double>()>& loss, double h,
                                              std::size_t max_coords, Rng& rng);

}  // namespace eegldm::nd
