#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/diffusion/diffusion.hpp"
#include "eegldm/nd/layers.hpp"

namespace eegldm::denoiser {

using nd::Shape;
using nd::Tensor;
using nd::Var;

struct UNetConfig {
  std::size_t latent_channels = 4;
  std::vector<std::size_t> channels = {32, 64, 128};  // one entry per level
  std::size_t time_dim = 64;
  std::size_t kernel = 3;

  std::size_t levels() const { return channels.size(); }
  // Throws std::invalid_argument unless I >= 2, channels strictly increase, time_dim even, kernel odd.
  void validate() const;
};

void to_json(nlohmann::json& j, const UNetConfig& c);
void from_json(const nlohmann::json& j, UNetConfig& c);

// [sin(t w_0), ..., sin(t w_{h-1}), cos(t w_0), ..., cos(t w_{h-1})], w_k = base^(-k / h), h = dim / 2.
std::vector<double> time_embed(double t, std::size_t dim, double base = 10000.0);

// Pre-activation residual block with an additive per-channel time bias.
template <typename T>
class ResBlock {
 public:
  ResBlock(nd::ParameterTree<T>& tree, const std::string& name, std::size_t in, std::size_t out,
           std::size_t time_dim, std::size_t kernel, nd::Rng& rng);
  Var<T> forward(const Var<T>& x, const Var<T>& temb) const;

 private:
  nd::GroupNorm<T> norm1_;
  nd::Conv2d<T> conv1_;
  nd::Linear<T> time_proj_;
  nd::GroupNorm<T> norm2_;
  nd::Conv2d<T> conv2_;
  std::unique_ptr<nd::Conv2d<T>> skip_;
};

// Encoder E: input conv, then per level an optional stride-2 downsampling conv
// and a residual block. Returns one feature map per level (E^1..E^I).
template <typename T>
class UNetEncoder {
 public:
  UNetEncoder(nd::ParameterTree<T>& tree, const std::string& prefix, const UNetConfig& config,
              nd::Rng& rng);
  std::vector<Var<T>> forward(const Var<T>& x, const Var<T>& temb) const;
  const std::string& prefix() const { return prefix_; }

 private:
  std::string prefix_;
  nd::Conv2d<T> in_conv_;
  std::vector<std::unique_ptr<nd::Conv2d<T>>> down_;  // down_[0] is null
  std::vector<std::unique_ptr<ResBlock<T>>> blocks_;
};

template <typename T>
struct UNetOutput {
  Var<T> eps;
  std::vector<Var<T>> features;
};

// eps_theta(z_t, t) = D(B(E(z_t, t))). Parameters live under prefix: .time, .encoder,
// .bottleneck and .decoder.
template <typename T>
class UNet {
 public:
  UNet(nd::ParameterTree<T>& tree, const std::string& prefix, UNetConfig config, nd::Rng& rng);

  const UNetConfig& config() const { return config_; }
  const std::string& prefix() const { return prefix_; }
  std::string encoder_prefix() const { return prefix_ + ".encoder"; }

  // Sinusoid followed by a two-layer MLP; [N, time_dim].
  Var<T> embed_time(const std::vector<std::size_t>& ts) const;
  const UNetEncoder<T>& encoder() const { return encoder_; }
  // Bottleneck on the deepest feature, then the decoder with skips from every level.
  Var<T> decode(const std::vector<Var<T>>& features, const Var<T>& temb) const;

  UNetOutput<T> forward(const Var<T>& z_t, const std::vector<std::size_t>& ts) const;
  Tensor<T> predict(const Tensor<T>& z_t, const std::vector<std::size_t>& ts) const;

 private:
  std::size_t check_input(const Shape& s) const;

  std::string prefix_;
  UNetConfig config_;
  nd::Linear<T> time1_, time2_;
  UNetEncoder<T> encoder_;
  ResBlock<T> bottleneck_;
  std::vector<std::unique_ptr<ResBlock<T>>> dec_blocks_;  // deepest level first
  std::vector<std::unique_ptr<nd::Conv2d<T>>> up_convs_;
  nd::GroupNorm<T> out_norm_;
  nd::Conv2d<T> out_conv_;
};

// Forward-process draws for a latent batch: t_n uniform on [1, T], eps ~ N(0, I).
template <typename T>
struct NoiseDraw {
  Tensor<T> z_t;
  Tensor<T> eps;
  std::vector<std::size_t> ts;
};

template <typename T>
NoiseDraw<T> draw_noise(const Tensor<T>& z, const diffusion::NoiseSchedule& schedule,
                        std::uint64_t seed);

template <typename T>
using EpsModel = std::function<Var<T>(const Var<T>& z_t, const std::vector<std::size_t>& ts)>;

// mean ||eps - model(z_t, t)||^2 over batch and elements.
template <typename T>
Var<T> denoising_loss(const EpsModel<T>& model, const Tensor<T>& z,
                      const diffusion::NoiseSchedule& schedule, std::uint64_t seed);

template <typename T>
Var<T> denoising_loss(const UNet<T>& unet, const Tensor<T>& z,
                      const diffusion::NoiseSchedule& schedule, std::uint64_t seed);

}  // namespace eegldm::denoiser
