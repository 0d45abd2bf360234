#include "eegldm/nd/finite_diff.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace eegldm::nd {

std::vector<double> finite_difference_gradient(const ScalarFunction& f,
                                               std::span<const double> point, double h) {
  std::vector<double> x(point.begin(), point.end());
  std::vector<double> grad(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double up = f(x);
    x[i] = orig - h;
    const double down = f(x);
    x[i] = orig;
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw NumericError("finite difference: non-finite function value at coordinate " +
                         std::to_string(i));
    }
    grad[i] = (up - down) / (2 * h);
  }
  return grad;
}

double relative_error(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("relative_error: length mismatch");
  double diff = 0, na = 0, nb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::sqrt(std::max(na, nb));
  if (denom < 1e-12) return 0.0;
  return std::sqrt(diff) / denom;
}

GradientCheckResult check_parameter_gradients(ParameterTree<double>& tree,
                                              const std::function<Var<double>()>& loss, double h,
                                              std::size_t max_coords, Rng& rng) {
  tree.zero_grad();
  loss().backward();
  GradientCheckResult result;
  for (const auto& name : tree.names()) {
    const auto& p = tree.at(name);
    if (!p.trainable) continue;
    Var<double> var = p.var;
    const Tensor<double> analytic_full = var.has_grad() ? var.grad() : Tensor<double>(var.shape());

    std::vector<std::size_t> coords(var.size());
    std::iota(coords.begin(), coords.end(), 0);
    if (coords.size() > max_coords) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(max_coords);
    }
    std::vector<double> analytic, numeric;
    for (auto idx : coords) {
      double& slot = var.mutable_value()[idx];
      const double orig = slot;
      slot = orig + h;
      const double up = loss().value()[0];
      slot = orig - h;
      const double down = loss().value()[0];
      slot = orig;
      analytic.push_back(analytic_full[idx]);
      numeric.push_back((up - down) / (2 * h));
    }
    const double err = relative_error(analytic, numeric);
    result.coordinates_checked += coords.size();
    if (err >= result.max_relative_error) {
      result.max_relative_error = err;
      result.worst_parameter = name;
    }
  }
  return result;
}

}  // namespace eegldm::nd
