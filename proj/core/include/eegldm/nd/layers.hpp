#pragma once

#include <cmath>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/params.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::nd {

// Largest group count <= 8 that divides the channel count.
inline std::size_t default_groups(std::size_t channels) {
  for (std::size_t g = std::min<std::size_t>(8, channels); g > 1; --g) {
    if (channels % g == 0) return g;
  }
  return 1;
}

enum class Init { kLecun, kZero };

template <typename T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Var<T> forward(const Var<T>& x) const = 0;
  virtual const char* kind() const = 0;
};

template <typename T>
class Identity final : public Layer<T> {
 public:
  Var<T> forward(const Var<T>& x) const override { return x; }
  const char* kind() const override { return "identity"; }
};

template <typename T>
class Silu final : public Layer<T> {
 public:
  Var<T> forward(const Var<T>& x) const override { return silu(x); }
  const char* kind() const override { return "silu"; }
};

template <typename T>
class Linear final : public Layer<T> {
 public:
  Linear(ParameterTree<T>& tree, const std::string& name, std::size_t in, std::size_t out, Rng& rng,
         Init init = Init::kLecun)
      : weight_(tree.add(name + ".weight",
                         init == Init::kZero ? Tensor<T>(Shape{out, in})
                                             : randn<T>({out, in}, rng, 1.0 / std::sqrt(double(in))))),
        bias_(tree.add(name + ".bias", Tensor<T>(Shape{out}))) {}

  Var<T> forward(const Var<T>& x) const override { return linear(x, weight_, bias_); }
  const char* kind() const override { return "linear"; }
  const Var<T>& weight() const { return weight_; }

 private:
  Var<T> weight_, bias_;
};

template <typename T>
class Conv1d final : public Layer<T> {
 public:
  Conv1d(ParameterTree<T>& tree, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, Rng& rng, Init init = Init::kLecun)
      : weight_(tree.add(name + ".weight",
                         init == Init::kZero
                             ? Tensor<T>(Shape{out, in, kernel})
                             : randn<T>({out, in, kernel}, rng, 1.0 / std::sqrt(double(in * kernel))))),
        bias_(tree.add(name + ".bias", Tensor<T>(Shape{out}))),
        stride_(stride) {}

  Var<T> forward(const Var<T>& x) const override { return conv1d(x, weight_, bias_, stride_); }
  const char* kind() const override { return "conv1d"; }
  std::size_t stride() const { return stride_; }

 private:
  Var<T> weight_, bias_;
  std::size_t stride_;
};

template <typename T>
class Conv2d final : public Layer<T> {
 public:
  Conv2d(ParameterTree<T>& tree, const std::string& name, std::size_t in, std::size_t out,
         std::size_t kernel, std::size_t stride, Rng& rng, Init init = Init::kLecun)
      : weight_(tree.add(name + ".weight",
                         init == Init::kZero ? Tensor<T>(Shape{out, in, kernel, kernel})
                                             : randn<T>({out, in, kernel, kernel}, rng,
                                                        1.0 / std::sqrt(double(in * kernel * kernel))))),
        bias_(tree.add(name + ".bias", Tensor<T>(Shape{out}))),
        stride_(stride) {}

  Var<T> forward(const Var<T>& x) const override {
    return conv2d(x, weight_, bias_, stride_, stride_);
  }
  const char* kind() const override { return "conv2d"; }
  const Var<T>& weight() const { return weight_; }
  const Var<T>& bias() const { return bias_; }

 private:
  Var<T> weight_, bias_;
  std::size_t stride_;
};

template <typename T>
class GroupNorm final : public Layer<T> {
 public:
  GroupNorm(ParameterTree<T>& tree, const std::string& name, std::size_t channels)
      : gamma_(tree.add(name + ".gamma", Tensor<T>(Shape{channels}, T(1)))),
        beta_(tree.add(name + ".beta", Tensor<T>(Shape{channels}))),
        groups_(default_groups(channels)) {}

  Var<T> forward(const Var<T>& x) const override { return group_norm(x, gamma_, beta_, groups_); }
  const char* kind() const override { return "group_norm"; }

 private:
  Var<T> gamma_, beta_;
  std::size_t groups_;
};

// Gradients produced by LayerStack::backpropagate.
template <typename T>
struct StackGradients {
  Tensor<T> input;
  std::map<std::string, Tensor<T>> params;  // trainable parameters only
};

// Sequential composition with a declared per-sample input signature
// (every axis except the leading batch axis).
template <typename T>
class LayerStack {
 public:
  explicit LayerStack(Shape sample_shape) : sample_shape_(std::move(sample_shape)) {}

  template <typename L, typename... Args>
  L& emplace(Args&&... args) {
    auto layer = std::make_unique<L>(std::forward<Args>(args)...);
    L& ref = *layer;
    layers_.push_back(std::move(layer));
    return ref;
  }

  std::size_t depth() const { return layers_.size(); }
  const Shape& sample_shape() const { return sample_shape_; }

  Var<T> forward(const Var<T>& x) const;
  // Pure forward on plain tensors; no tape is recorded.
  Tensor<T> evaluate(const Tensor<T>& input) const;
  // Gradients of <upstream, stack(input)> w.r.t. the input and every trainable
  // parameter of `tree`. Parameter gradients are left accumulated in the tree.
  StackGradients<T> backpropagate(ParameterTree<T>& tree, const Tensor<T>& input,
                                  const Tensor<T>& upstream) const;

 private:
  void check_input(const Shape& s) const;

  Shape sample_shape_;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
};

extern template class LayerStack<float>;
extern template class LayerStack<double>;

}  // namespace eegldm::nd
