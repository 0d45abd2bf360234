#pragma once

#include <cstdint>
#include <functional>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/nd/tensor.hpp"

namespace eegldm::diffusion {

using nd::Shape;
using nd::Tensor;

class ScheduleError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// beta_t, alpha_t = 1 - beta_t and alphabar_t = prod_{s<=t} alpha_s for t = 1..T.
// Arrays are stored 0-based (index t - 1); alphabar(0) is defined as 1.
class NoiseSchedule {
 public:
  static NoiseSchedule linear(std::size_t steps, double beta_start, double beta_end);
  static NoiseSchedule from_betas(std::vector<double> betas);

  std::size_t steps() const { return beta_.size(); }
  double beta(std::size_t t) const { return beta_.at(t - 1); }
  double alpha(std::size_t t) const { return alpha_.at(t - 1); }
  double alphabar(std::size_t t) const { return t == 0 ? 1.0 : alphabar_.at(t - 1); }

  nlohmann::json describe() const;

 private:
  std::vector<double> beta_, alpha_, alphabar_;
};

template <typename T>
struct NoisyLatent {
  Tensor<T> z;
  std::size_t t = 0;
};

// z_t = sqrt(alphabar) z + sqrt(1 - alphabar) eps.
template <typename T>
Tensor<T> diffuse(const Tensor<T>& z, const Tensor<T>& eps, double alphabar);

template <typename T>
NoisyLatent<T> forward_diffuse(const Tensor<T>& z, std::size_t t, const Tensor<T>& eps,
                               const NoiseSchedule& schedule);

// Deterministic DDIM move between two noise levels (eta = 0):
//   z0_hat = (z_t - sqrt(1 - ab_t) eps) / sqrt(ab_t)
//   z_prev = sqrt(ab_prev) z0_hat + sqrt(1 - ab_prev) eps
template <typename T>
Tensor<T> ddim_update(const Tensor<T>& z_t, const Tensor<T>& eps_pred, double alphabar_t,
                      double alphabar_prev);

// t_prev = 0 returns z0_hat; t_prev = t returns z_t. Only eta = 0 is supported.
template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps_pred, std::size_t t,
                    std::size_t t_prev, const NoiseSchedule& schedule, double eta = 0.0);

// Evenly spaced, descending: floor(k T / n) for k = n..1, duplicates removed.
std::vector<std::size_t> ddim_timesteps(std::size_t total_steps, std::size_t num_steps);

template <typename T>
using DenoiseFn = std::function<Tensor<T>(const Tensor<T>& z_t, std::size_t t)>;

// Draws z_T ~ N(0, I) from seed and integrates the denoiser back to t = 0.
template <typename T>
Tensor<T> sample(const DenoiseFn<T>& denoise, const NoiseSchedule& schedule,
                 std::size_t num_steps, const Shape& latent_shape, std::uint64_t seed);

}  // namespace eegldm::diffusion
