#pragma once

#include <cstdint>
#include <map>
#include <stdexcept>
#include <string>

#include "eegldm/nd/params.hpp"

namespace eegldm::nd {

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class MissingGradientError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <typename T>
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::map<std::string, Tensor<T>> first_moment;
  std::map<std::string, Tensor<T>> second_moment;
};

// One bias-corrected Adam update of every trainable parameter. Frozen
// parameters are never touched. Throws MissingGradientError when a trainable
// parameter carries no gradient; the tree and state are unchanged in that case.
template <typename T>
void adam_step(ParameterTree<T>& params, AdamState<T>& state);

}  // namespace eegldm::nd
