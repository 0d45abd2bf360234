#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/denoiser/unet.hpp"
#include "eegldm/latentvae/vae.hpp"

namespace eegldm::controlnet {

using latentvae::LatentDims;
using nd::Shape;
using nd::Tensor;
using nd::Var;

struct ProjectorConfig {
  std::size_t input_channels = 16;  // F_y
  std::size_t input_steps = 560;    // S_y
  std::vector<std::size_t> channels = {32, 64, 128, 256};
  std::vector<std::size_t> strides = {5, 2, 2, 2};
  std::size_t kernel = 3;

  // Temporal length after the strided stack under the same-style padding rule.
  std::size_t output_steps() const;
};

void to_json(nlohmann::json& j, const ProjectorConfig& c);
void from_json(const nlohmann::json& j, ProjectorConfig& c);

// P: strided conv1d stages (conv, group norm, SiLU), a 1x1 conv to F_z * D_z
// channels, then a reshape [N, F_z * D_z, S_z] -> [N, D_z, F_z, S_z] with
// channel index d * F_z + f.
template <typename T>
class Projector {
 public:
  // Throws nd::ShapeError when the stack cannot reshape to the latent.
  Projector(nd::ParameterTree<T>& tree, const std::string& prefix, ProjectorConfig config,
            LatentDims latent, nd::Rng& rng);
  Var<T> forward(const Var<T>& y) const;
  const ProjectorConfig& config() const { return config_; }

 private:
  struct Stage {
    Var<T> w, gamma, beta;
    std::size_t stride, groups;
  };
  ProjectorConfig config_;
  LatentDims latent_;
  std::vector<Stage> stages_;
  Var<T> head_w_, head_b_;
};

// L(y, s) = W_s y, one F_y x F_y matrix per subject, identity at init.
template <typename T>
class SubjectLayer {
 public:
  SubjectLayer(nd::ParameterTree<T>& tree, const std::string& prefix, std::size_t subjects,
               std::size_t channels);
  Var<T> forward(const Var<T>& y, const std::vector<std::size_t>& subjects) const;
  std::size_t subject_count() const { return mixers_.dim(0); }
  const Var<T>& mixers() const { return mixers_; }

 private:
  Var<T> mixers_;
};

struct AdapterConfig {
  ProjectorConfig projector;
  std::size_t subject_count = 0;  // 0 disables the subject layer
};

void to_json(nlohmann::json& j, const AdapterConfig& c);
void from_json(const nlohmann::json& j, AdapterConfig& c);

// C_phi(z_t, y, t) = E_phi(c_in(z_t) + P(L(y)), t), plus zero convs c_1..c_I that
// fuse its per-level features into the donor encoder's. The encoder copy is
// initialized bit-equal to the donor; c_in and every c_i start at exactly zero.
template <typename T>
class Adapter {
 public:
  Adapter(nd::ParameterTree<T>& tree, const std::string& prefix,
          const denoiser::UNet<T>& donor, AdapterConfig config, LatentDims latent, nd::Rng& rng);

  const std::string& prefix() const { return prefix_; }
  const AdapterConfig& config() const { return config_; }
  bool has_subject_layer() const { return static_cast<bool>(subject_); }

  Var<T> condition(const Var<T>& y, const std::vector<std::size_t>& subjects) const;
  std::vector<Var<T>> features(const Var<T>& z_t, const Var<T>& y,
                               const std::vector<std::size_t>& subjects,
                               const Var<T>& temb) const;
  // c_i(C^i) for every level.
  std::vector<Var<T>> injections(const std::vector<Var<T>>& adapter_features) const;

  const nd::Conv2d<T>& input_zero_conv() const { return *c_in_; }
  const nd::Conv2d<T>& zero_conv(std::size_t level) const { return *c_[level]; }
  std::size_t levels() const { return c_.size(); }
  // Multiplies every c_i weight and bias by lambda (c_in is untouched).
  void scale_zero_convs(T lambda);

 private:
  std::string prefix_;
  AdapterConfig config_;
  std::unique_ptr<SubjectLayer<T>> subject_;
  Projector<T> projector_;
  std::unique_ptr<nd::Conv2d<T>> c_in_;
  denoiser::UNetEncoder<T> encoder_;
  std::vector<std::unique_ptr<nd::Conv2d<T>>> c_;
};

// eps = D(B(E^i + c_i(C^i))) with the donor's time embedding shared by both encoders.
template <typename T>
Var<T> fused_forward(const denoiser::UNet<T>& unet, const Adapter<T>& adapter, const Var<T>& z_t,
                     const Var<T>& y, const std::vector<std::size_t>& subjects,
                     const std::vector<std::size_t>& ts);

template <typename T>
struct ConditionedBatch {
  Tensor<T> z;                         // [N, D_z, F_z, S_z]
  Tensor<T> y;                         // [N, F_y, S_y]
  std::vector<std::size_t> subjects;   // N entries
};

template <typename T>
Var<T> adapter_loss(const denoiser::UNet<T>& unet, const Adapter<T>& adapter,
                    const ConditionedBatch<T>& batch, const diffusion::NoiseSchedule& schedule,
                    std::uint64_t seed);

}  // namespace eegldm::controlnet
