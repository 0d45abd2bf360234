#include "eegldm/nd/layers.hpp"

namespace eegldm::nd {

template <typename T>
void LayerStack<T>::check_input(const Shape& s) const {
  if (s.size() != sample_shape_.size() + 1 ||
      !std::equal(sample_shape_.begin(), sample_shape_.end(), s.begin() + 1)) {
    Shape expected{0};
    expected.insert(expected.end(), sample_shape_.begin(), sample_shape_.end());
    throw ShapeError("layer stack expects [N, ...] = " + shape_to_string(expected) +
                     " (N free), got " + shape_to_string(s));
  }
}

template <typename T>
Var<T> LayerStack<T>::forward(const Var<T>& x) const {
  check_input(x.shape());
  Var<T> h = x;
  for (const auto& layer : layers_) h = layer->forward(h);
  return h;
}

template <typename T>
Tensor<T> LayerStack<T>::evaluate(const Tensor<T>& input) const {
  return forward(Var<T>(input, false)).value();
}

template <typename T>
StackGradients<T> LayerStack<T>::backpropagate(ParameterTree<T>& tree, const Tensor<T>& input,
                                               const Tensor<T>& upstream) const {
  Var<T> x(input, true);
  Var<T> out = forward(x);
  out.backward(upstream);
  StackGradients<T> g;
  g.input = x.has_grad() ? x.grad() : Tensor<T>(input.shape());
  tree.for_each([&](const Parameter<T>& p) {
    if (!p.trainable) return;
    g.params[p.name] = p.var.has_grad() ? p.var.grad() : Tensor<T>(p.var.shape());
  });
  return g;
}

template class LayerStack<float>;
template class LayerStack<double>;

}  // namespace eegldm::nd
