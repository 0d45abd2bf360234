#include "eegldm/nd/autograd.hpp"

#include <unordered_set>

namespace eegldm::nd {

template <typename T>
Var<T>::Var(Tensor<T> value, bool requires_grad) : node_(std::make_shared<Node<T>>()) {
  node_->value = std::move(value);
  node_->requires_grad = requires_grad;
}

template <typename T>
void Var<T>::backward() const {
  if (node_->value.size() != 1) {
    throw ShapeError("backward() without upstream gradient needs a single-value output, got " +
                     shape_to_string(shape()));
  }
  backward(Tensor<T>(shape(), T(1)));
}

template <typename T>
void Var<T>::backward(const Tensor<T>& upstream) const {
  require_same_shape(shape(), upstream.shape(), "backward upstream");
  if (!node_->requires_grad) return;

  // Iterative post-order DFS gives a topological order of the tape.
  std::vector<Node<T>*> order;
  std::unordered_set<Node<T>*> visited;
  std::vector<std::pair<Node<T>*, std::size_t>> stack;
  stack.emplace_back(node_.get(), 0);
  visited.insert(node_.get());
  while (!stack.empty()) {
    auto& [n, next] = stack.back();
    if (next < n->parents.size()) {
      Node<T>* p = n->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(n);
      stack.pop_back();
    }
  }

  accumulate_grad(*node_, upstream);
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node<T>* n = *it;
    if (n->backward && !n->grad.empty()) n->backward(*n);
  }
  // Interior gradients are not needed once propagated; leaves keep theirs.
  for (Node<T>* n : order) {
    if (n->backward) n->grad = Tensor<T>();
  }
}

template <typename T>
void accumulate_grad(Node<T>& node, const Tensor<T>& g) {
  if (!node.requires_grad) return;
  if (node.grad.empty()) {
    require_same_shape(node.value.shape(), g.shape(), "gradient accumulation");
    node.grad = g;
    return;
  }
  require_same_shape(node.grad.shape(), g.shape(), "gradient accumulation");
  T* dst = node.grad.data();
  const T* src = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += src[i];
}

template <typename T>
Var<T> make_result(const char* op, Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward) {
  if (!value.all_finite()) throw NumericError(std::string("non-finite output from ") + op);
  auto node = std::make_shared<Node<T>>();
  node->value = std::move(value);
  node->op = op;
  bool any = false;
  for (const auto& p : parents) {
    if (p.defined() && p.requires_grad()) {
      any = true;
      break;
    }
  }
  if (any) {
    node->requires_grad = true;
    node->parents.reserve(parents.size());
    for (auto& p : parents) node->parents.push_back(p.node());
    node->backward = std::move(backward);
  }
  return Var<T>(std::move(node));
}

template class Var<float>;
template class Var<double>;
template Var<float> make_result(const char*, Tensor<float>, std::vector<Var<float>>,
                                std::function<void(Node<float>&)>);
template Var<double> make_result(const char*, Tensor<double>, std::vector<Var<double>>,
                                 std::function<void(Node<double>&)>);
template void accumulate_grad(Node<float>&, const Tensor<float>&);
template void accumulate_grad(Node<double>&, const Tensor<double>&);

}  // namespace eegldm::nd
