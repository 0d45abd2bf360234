#include "eegldm/nd/adam.hpp"

#include <cmath>

namespace eegldm::nd {

template <typename T>
void adam_step(ParameterTree<T>& params, AdamState<T>& state) {
  params.for_each([](const Parameter<T>& p) {
    if (p.trainable && !p.var.has_grad()) {
      throw MissingGradientError("no gradient for trainable parameter '" + p.name + "'");
    }
  });
  const AdamConfig& c = state.config;
  if (!(c.learning_rate > 0)) throw std::invalid_argument("Adam learning rate must be positive");
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(c.beta2, static_cast<double>(state.step));
  params.for_each([&](Parameter<T>& p) {
    if (!p.trainable) return;
    const Tensor<T>& g = p.var.grad();
    auto& m = state.first_moment[p.name];
    auto& v = state.second_moment[p.name];
    if (m.empty()) m = Tensor<T>(g.shape());
    if (v.empty()) v = Tensor<T>(g.shape());
    require_same_shape(m.shape(), g.shape(), "adam moment");
    Tensor<T>& w = p.var.mutable_value();
    for (std::size_t i = 0; i < w.size(); ++i) {
      const double gi = g[i];
      const double mi = c.beta1 * m[i] + (1.0 - c.beta1) * gi;
      const double vi = c.beta2 * v[i] + (1.0 - c.beta2) * gi * gi;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      const double mhat = mi / bc1;
      const double vhat = vi / bc2;
      w[i] = static_cast<T>(w[i] - c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon));
    }
  });
}

template void adam_step(ParameterTree<float>&, AdamState<float>&);
template void adam_step(ParameterTree<double>&, AdamState<double>&);

}  // namespace eegldm::nd
