#pragma once

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "eegldm/nd/tensor.hpp"

namespace eegldm::nd {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;  // empty until something flows into it
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Reads this->grad and accumulates into parents that require grad.
  std::function<void(Node&)> backward;

  Tensor<T>& grad_buffer() {
    if (grad.empty()) grad = Tensor<T>(value.shape(), T(0));
    return grad;
  }
};

// Handle to a node in the reverse-mode tape. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;
  explicit Var(Tensor<T> value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node<T>> node) : node_(std::move(node)) {}

  bool defined() const { return static_cast<bool>(node_); }
  const Tensor<T>& value() const { return node_->value; }
  Tensor<T>& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  std::size_t dim(std::size_t axis) const { return node_->value.dim(axis); }
  std::size_t size() const { return node_->value.size(); }
  std::size_t rank() const { return node_->value.rank(); }

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  bool has_grad() const { return !node_->grad.empty(); }
  const Tensor<T>& grad() const { return node_->grad; }
  void zero_grad() { node_->grad = Tensor<T>(); }

  // Seeds d(self)/d(self) = 1; self must hold one value.
  void backward() const;
  // Seeds with an upstream gradient of identical shape.
  void backward(const Tensor<T>& upstream) const;

  const std::shared_ptr<Node<T>>& node() const { return node_; }

 private:
  std::shared_ptr<Node<T>> node_;
};

// Builds a result node. Parents that do not require grad are dropped from the
// tape, and the closure is discarded when no parent requires grad.
template <typename T>
Var<T> make_result(const char* op, Tensor<T> value, std::vector<Var<T>> parents,
                   std::function<void(Node<T>&)> backward);

template <typename T>
void accumulate_grad(Node<T>& node, const Tensor<T>& g);

extern template class Var<float>;
extern template class Var<double>;

}  // namespace eegldm::nd
