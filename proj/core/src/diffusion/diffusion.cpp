#include "eegldm/diffusion/diffusion.hpp"

#include <cmath>
#include <string>

#include "eegldm/nd/rng.hpp"

namespace eegldm::diffusion {

NoiseSchedule NoiseSchedule::linear(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 1) throw ScheduleError("schedule needs at least one step");
  if (!(beta_start > 0 && beta_start <= beta_end && beta_end < 1)) {
    throw ScheduleError("need 0 < beta_start <= beta_end < 1, got " + std::to_string(beta_start) +
                        ", " + std::to_string(beta_end));
  }
  std::vector<double> betas(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    betas[i] = steps == 1 ? beta_start
                          : beta_start + (beta_end - beta_start) * static_cast<double>(i) /
                                             static_cast<double>(steps - 1);
  }
  return from_betas(std::move(betas));
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  if (betas.empty()) throw ScheduleError("schedule needs at least one step");
  NoiseSchedule s;
  double prod = 1.0;
  for (double b : betas) {
    if (!(b > 0 && b < 1)) throw ScheduleError("beta outside (0, 1): " + std::to_string(b));
    const double a = 1.0 - b;
    prod *= a;
    s.alpha_.push_back(a);
    s.alphabar_.push_back(prod);
  }
  s.beta_ = std::move(betas);
  return s;
}

nlohmann::json NoiseSchedule::describe() const {
  return {{"kind", "explicit"},
          {"steps", steps()},
          {"beta_first", beta_.front()},
          {"beta_last", beta_.back()},
          {"alphabar_last", alphabar_.back()}};
}

template <typename T>
Tensor<T> diffuse(const Tensor<T>& z, const Tensor<T>& eps, double alphabar) {
  nd::require_same_shape(z.shape(), eps.shape(), "forward_diffuse");
  const double a = std::sqrt(alphabar);
  const double b = std::sqrt(1.0 - alphabar);
  Tensor<T> out(z.shape());
  for (std::size_t i = 0; i < z.size(); ++i) out[i] = static_cast<T>(a * z[i] + b * eps[i]);
  return out;
}

template <typename T>
NoisyLatent<T> forward_diffuse(const Tensor<T>& z, std::size_t t, const Tensor<T>& eps,
                               const NoiseSchedule& schedule) {
  if (t < 1 || t > schedule.steps()) {
    throw ScheduleError("diffusion step " + std::to_string(t) + " outside [1, " +
                        std::to_string(schedule.steps()) + "]");
  }
  return {diffuse(z, eps, schedule.alphabar(t)), t};
}

template <typename T>
Tensor<T> ddim_update(const Tensor<T>& z_t, const Tensor<T>& eps_pred, double alphabar_t,
                      double alphabar_prev) {
  nd::require_same_shape(z_t.shape(), eps_pred.shape(), "ddim_step");
  const double sa = std::sqrt(alphabar_t), sb = std::sqrt(1.0 - alphabar_t);
  const double pa = std::sqrt(alphabar_prev), pb = std::sqrt(1.0 - alphabar_prev);
  Tensor<T> out(z_t.shape());
  for (std::size_t i = 0; i < z_t.size(); ++i) {
    const double z0 = (static_cast<double>(z_t[i]) - sb * eps_pred[i]) / sa;
    out[i] = static_cast<T>(pa * z0 + pb * eps_pred[i]);
  }
  return out;
}

template <typename T>
Tensor<T> ddim_step(const Tensor<T>& z_t, const Tensor<T>& eps_pred, std::size_t t,
                    std::size_t t_prev, const NoiseSchedule& schedule, double eta) {
  if (eta != 0.0) throw ScheduleError("only deterministic DDIM (eta = 0) is supported");
  if (t < 1 || t > schedule.steps()) throw ScheduleError("ddim_step: t outside [1, T]");
  if (t_prev > t) {
    throw ScheduleError("ddim_step: t_prev " + std::to_string(t_prev) + " after t " +
                        std::to_string(t));
  }
  nd::require_same_shape(z_t.shape(), eps_pred.shape(), "ddim_step");
  if (t_prev == t) return z_t;
  return ddim_update(z_t, eps_pred, schedule.alphabar(t), schedule.alphabar(t_prev));
}

std::vector<std::size_t> ddim_timesteps(std::size_t total_steps, std::size_t num_steps) {
  if (num_steps < 1 || num_steps > total_steps) {
    throw ScheduleError("sampler steps must lie in [1, " + std::to_string(total_steps) + "]");
  }
  std::vector<std::size_t> ts;
  for (std::size_t k = num_steps; k >= 1; --k) {
    const std::size_t t = k * total_steps / num_steps;
    if (ts.empty() || ts.back() != t) ts.push_back(t);
  }
  return ts;
}

template <typename T>
Tensor<T> sample(const DenoiseFn<T>& denoise, const NoiseSchedule& schedule,
                 std::size_t num_steps, const Shape& latent_shape, std::uint64_t seed) {
  nd::Rng rng(seed);
  Tensor<T> z = nd::randn<T>(latent_shape, rng);
  const auto ts = ddim_timesteps(schedule.steps(), num_steps);
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i];
    const std::size_t t_prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    Tensor<T> eps = denoise(z, t);
    if (eps.shape() != z.shape()) {
      throw nd::ShapeError("denoiser returned " + nd::shape_to_string(eps.shape()) + " for " +
                           nd::shape_to_string(z.shape()));
    }
    z = ddim_step(z, eps, t, t_prev, schedule);
  }
  return z;
}

#define EEGLDM_INSTANTIATE_DIFFUSION(T)                                                       \
  template Tensor<T> diffuse(const Tensor<T>&, const Tensor<T>&, double);                     \
  template NoisyLatent<T> forward_diffuse(const Tensor<T>&, std::size_t, const Tensor<T>&,    \
                                          const NoiseSchedule&);                              \
  template Tensor<T> ddim_update(const Tensor<T>&, const Tensor<T>&, double, double);         \
  template Tensor<T> ddim_step(const Tensor<T>&, const Tensor<T>&, std::size_t, std::size_t,  \
                               const NoiseSchedule&, double);                                 \
  template Tensor<T> sample(const DenoiseFn<T>&, const NoiseSchedule&, std::size_t,           \
                            const Shape&, std::uint64_t);

EEGLDM_INSTANTIATE_DIFFUSION(float)
EEGLDM_INSTANTIATE_DIFFUSION(double)

}  // namespace eegldm::diffusion
