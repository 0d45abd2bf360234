#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/controlnet/adapter.hpp"
#include "eegldm/denoiser/unet.hpp"
#include "eegldm/diffusion/diffusion.hpp"
#include "eegldm/latentvae/vae.hpp"

namespace eegldm::trainer {

using nd::Shape;
using nd::Tensor;
using nd::Var;

struct ScheduleConfig {
  std::size_t steps = 200;
  double beta_start = 1e-4;
  double beta_end = 2e-2;
  diffusion::NoiseSchedule build() const;
};

struct ModelConfig {
  std::string vae_variant = "analytic";  // analytic | conv
  latentvae::GridDims grid;
  std::size_t patch_freq = 8, patch_time = 4, latent_channels = 4;  // analytic variant
  latentvae::ConvVaeConfig conv_vae;
  denoiser::UNetConfig unet;
  controlnet::ProjectorConfig projector;
  ScheduleConfig schedule;
  // Per latent channel: z_diffusion = (E_mean(x) - latent_mean) / latent_std.
  // Empty vectors mean identity; set from training latents.
  std::vector<double> latent_mean, latent_std;
};

void to_json(nlohmann::json& j, const ScheduleConfig& c);
void from_json(const nlohmann::json& j, ScheduleConfig& c);
void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

// Parameter prefixes in the shared tree.
inline const std::string kVaePrefix = "vae";
inline const std::string kUNetPrefix = "unet";
inline const std::string kAdapterPrefix = "adapter";
inline const std::string kBaselinePrefix = "baseline";

// Every network of an experiment in one float parameter tree. The VAE and
// U-Net exist from construction; the adapter and the baseline regressor are
// attached on demand (the adapter copies the U-Net encoder when attached, so
// attach it after the U-Net weights are final).
class ModelSet {
 public:
  ModelSet(ModelConfig config, std::uint64_t seed);
  // Modules keep references into the tree.
  ModelSet(const ModelSet&) = delete;
  ModelSet& operator=(const ModelSet&) = delete;

  const ModelConfig& config() const { return config_; }
  // Throws std::invalid_argument unless both have one entry per latent channel
  // and every std is positive.
  void set_latent_standardization(std::vector<double> mean, std::vector<double> std);
  nd::ParameterTree<float>& tree() { return tree_; }
  const nd::ParameterTree<float>& tree() const { return tree_; }

  const latentvae::Vae<float>& vae() const { return *vae_; }
  latentvae::ConvVae<float>* conv_vae() { return conv_vae_; }
  const denoiser::UNet<float>& unet() const { return *unet_; }
  const diffusion::NoiseSchedule& schedule() const { return schedule_; }
  latentvae::LatentDims latent() const { return vae_->latent(); }

  void attach_adapter(std::size_t subject_count);
  bool has_adapter() const { return static_cast<bool>(adapter_); }
  const controlnet::Adapter<float>& adapter() const;
  controlnet::Adapter<float>& adapter();

  void attach_baseline();
  bool has_baseline() const { return static_cast<bool>(baseline_); }
  const controlnet::Projector<float>& baseline() const;

  // Standardized diffusion latents for a spectrogram batch [N, F_x, S_x] and back.
  Tensor<float> encode(const Tensor<float>& x) const;
  Tensor<float> decode(const Tensor<float>& z) const;

  // Loads each module whose prefix appears in the checkpoint; a module present
  // there must be complete.
  void load(const nd::TensorContainer& checkpoint);

 private:
  ModelConfig config_;
  std::uint64_t seed_;
  nd::ParameterTree<float> tree_;
  std::unique_ptr<latentvae::Vae<float>> vae_;
  latentvae::ConvVae<float>* conv_vae_ = nullptr;
  std::unique_ptr<denoiser::UNet<float>> unet_;
  std::unique_ptr<controlnet::Adapter<float>> adapter_;
  std::unique_ptr<controlnet::Projector<float>> baseline_;
  diffusion::NoiseSchedule schedule_;
};

// Spectrograms [N, F_x, S_x] decoded from DDIM samples drawn from a single seed.
Tensor<float> sample_unconditional(const ModelSet& models, std::size_t count,
                                   std::size_t ddim_steps, std::uint64_t seed);
Tensor<float> sample_conditioned(const ModelSet& models, const Tensor<float>& y,
                                 const std::vector<std::size_t>& subjects, std::size_t ddim_steps,
                                 std::uint64_t seed);
// decode(P_baseline(y)).
Tensor<float> regress(const ModelSet& models, const Tensor<float>& y);
// decode(encode(x)).
Tensor<float> reconstruct(const ModelSet& models, const Tensor<float>& x);

// Stacks equally shaped tensors along a new leading axis and back.
Tensor<float> stack(const std::vector<Tensor<float>>& items);
std::vector<Tensor<float>> unstack(const Tensor<float>& batch);

}  // namespace eegldm::trainer
