#include "eegldm/denoiser/unet.hpp"

#include <cmath>
#include <stdexcept>

#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::denoiser {

void UNetConfig::validate() const {
  if (channels.size() < 2) throw std::invalid_argument("unet: need at least two levels");
  for (std::size_t i = 1; i < channels.size(); ++i) {
    if (channels[i] <= channels[i - 1]) {
      throw std::invalid_argument("unet: channels must strictly increase with depth");
    }
  }
  if (time_dim == 0 || time_dim % 2 != 0) throw std::invalid_argument("unet: time_dim must be even");
  if (kernel % 2 == 0) throw std::invalid_argument("unet: kernel must be odd");
  if (latent_channels == 0) throw std::invalid_argument("unet: latent_channels must be positive");
}

void to_json(nlohmann::json& j, const UNetConfig& c) {
  j = {{"latent_channels", c.latent_channels},
       {"channels", c.channels},
       {"time_dim", c.time_dim},
       {"kernel", c.kernel}};
}

void from_json(const nlohmann::json& j, UNetConfig& c) {
  j.at("latent_channels").get_to(c.latent_channels);
  j.at("channels").get_to(c.channels);
  j.at("time_dim").get_to(c.time_dim);
  j.at("kernel").get_to(c.kernel);
}

std::vector<double> time_embed(double t, std::size_t dim, double base) {
  if (dim == 0 || dim % 2 != 0) {
    throw std::invalid_argument("time_embed: dim must be even, got " + std::to_string(dim));
  }
  const std::size_t half = dim / 2;
  std::vector<double> out(dim);
  for (std::size_t k = 0; k < half; ++k) {
    const double w = std::pow(base, -static_cast<double>(k) / static_cast<double>(half));
    out[k] = std::sin(t * w);
    out[half + k] = std::cos(t * w);
  }
  return out;
}

template <typename T>
ResBlock<T>::ResBlock(nd::ParameterTree<T>& tree, const std::string& name, std::size_t in,
                      std::size_t out, std::size_t time_dim, std::size_t kernel, nd::Rng& rng)
    : norm1_(tree, name + ".norm1", in),
      conv1_(tree, name + ".conv1", in, out, kernel, 1, rng),
      time_proj_(tree, name + ".time", time_dim, out, rng),
      norm2_(tree, name + ".norm2", out),
      conv2_(tree, name + ".conv2", out, out, kernel, 1, rng) {
  if (in != out) skip_ = std::make_unique<nd::Conv2d<T>>(tree, name + ".skip", in, out, 1, 1, rng);
}

template <typename T>
Var<T> ResBlock<T>::forward(const Var<T>& x, const Var<T>& temb) const {
  Var<T> h = conv1_.forward(nd::silu(norm1_.forward(x)));
  h = nd::add_channel_bias(h, time_proj_.forward(nd::silu(temb)));
  h = conv2_.forward(nd::silu(norm2_.forward(h)));
  return nd::add(h, skip_ ? skip_->forward(x) : x);
}

template <typename T>
UNetEncoder<T>::UNetEncoder(nd::ParameterTree<T>& tree, const std::string& prefix,
                            const UNetConfig& config, nd::Rng& rng)
    : prefix_(prefix),
      in_conv_(tree, prefix + ".in", config.latent_channels, config.channels[0], config.kernel, 1,
               rng) {
  const auto& ch = config.channels;
  for (std::size_t i = 0; i < ch.size(); ++i) {
    const std::string lvl = prefix + ".level" + std::to_string(i);
    if (i == 0) {
      down_.push_back(nullptr);
    } else {
      down_.push_back(std::make_unique<nd::Conv2d<T>>(tree, lvl + ".down", ch[i - 1], ch[i],
                                                      config.kernel, 2, rng));
    }
    blocks_.push_back(std::make_unique<ResBlock<T>>(tree, lvl + ".block", ch[i], ch[i],
                                                    config.time_dim, config.kernel, rng));
  }
}

template <typename T>
std::vector<Var<T>> UNetEncoder<T>::forward(const Var<T>& x, const Var<T>& temb) const {
  std::vector<Var<T>> features;
  Var<T> h = in_conv_.forward(x);
  for (std::size_t i = 0; i < blocks_.size(); ++i) {
    if (down_[i]) h = down_[i]->forward(h);
    h = blocks_[i]->forward(h, temb);
    features.push_back(h);
  }
  return features;
}

template <typename T>
UNet<T>::UNet(nd::ParameterTree<T>& tree, const std::string& prefix, UNetConfig config,
              nd::Rng& rng)
    : prefix_(prefix),
      config_((config.validate(), std::move(config))),
      time1_(tree, prefix + ".time.fc1", config_.time_dim, config_.time_dim, rng),
      time2_(tree, prefix + ".time.fc2", config_.time_dim, config_.time_dim, rng),
      encoder_(tree, prefix + ".encoder", config_, rng),
      bottleneck_(tree, prefix + ".bottleneck", config_.channels.back(),
                  config_.channels.back(), config_.time_dim, config_.kernel, rng),
      out_norm_(tree, prefix + ".decoder.out_norm", config_.channels[0]),
      out_conv_(tree, prefix + ".decoder.out", config_.channels[0], config_.latent_channels,
                config_.kernel, 1, rng) {
  const auto& ch = config_.channels;
  for (std::size_t i = ch.size(); i-- > 0;) {
    const std::string lvl = prefix + ".decoder.level" + std::to_string(i);
    dec_blocks_.push_back(std::make_unique<ResBlock<T>>(tree, lvl + ".block", 2 * ch[i], ch[i],
                                                        config_.time_dim, config_.kernel, rng));
    if (i > 0) {
      up_convs_.push_back(
          std::make_unique<nd::Conv2d<T>>(tree, lvl + ".up", ch[i], ch[i - 1], config_.kernel, 1, rng));
    }
  }
}

template <typename T>
Var<T> UNet<T>::embed_time(const std::vector<std::size_t>& ts) const {
  const std::size_t d = config_.time_dim;
  Tensor<T> sin(Shape{ts.size(), d});
  for (std::size_t n = 0; n < ts.size(); ++n) {
    const auto e = time_embed(static_cast<double>(ts[n]), d);
    for (std::size_t k = 0; k < d; ++k) sin[n * d + k] = static_cast<T>(e[k]);
  }
  return time2_.forward(nd::silu(time1_.forward(Var<T>(std::move(sin)))));
}

template <typename T>
Var<T> UNet<T>::decode(const std::vector<Var<T>>& features, const Var<T>& temb) const {
  const std::size_t levels = config_.levels();
  if (features.size() != levels) {
    throw nd::ShapeError("unet decode: expected " + std::to_string(levels) + " feature maps, got " +
                         std::to_string(features.size()));
  }
  Var<T> h = bottleneck_.forward(features.back(), temb);
  for (std::size_t k = 0; k < levels; ++k) {
    const std::size_t i = levels - 1 - k;
    h = dec_blocks_[k]->forward(nd::concat_channels(h, features[i]), temb);
    if (i > 0) {
      const auto& target = features[i - 1];
      h = nd::upsample_nearest2x(h, target.dim(2), target.dim(3));
      h = up_convs_[k]->forward(h);
    }
  }
  return out_conv_.forward(nd::silu(out_norm_.forward(h)));
}

template <typename T>
std::size_t UNet<T>::check_input(const Shape& s) const {
  if (s.size() != 4 || s[1] != config_.latent_channels) {
    throw nd::ShapeError("unet: expected [N, " + std::to_string(config_.latent_channels) +
                         ", F, S], got " + nd::shape_to_string(s));
  }
  return s[0];
}

template <typename T>
UNetOutput<T> UNet<T>::forward(const Var<T>& z_t, const std::vector<std::size_t>& ts) const {
  const std::size_t n = check_input(z_t.shape());
  if (ts.size() != n) throw nd::ShapeError("unet: one timestep per sample required");
  const Var<T> temb = embed_time(ts);
  UNetOutput<T> out;
  out.features = encoder_.forward(z_t, temb);
  out.eps = decode(out.features, temb);
  return out;
}

template <typename T>
Tensor<T> UNet<T>::predict(const Tensor<T>& z_t, const std::vector<std::size_t>& ts) const {
  return forward(Var<T>(z_t), ts).eps.value();
}

template <typename T>
NoiseDraw<T> draw_noise(const Tensor<T>& z, const diffusion::NoiseSchedule& schedule,
                        std::uint64_t seed) {
  if (z.rank() == 0 || z.dim(0) == 0) throw std::invalid_argument("denoising loss: empty batch");
  const std::size_t n = z.dim(0), per = z.size() / n;
  nd::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(1, schedule.steps());
  NoiseDraw<T> d;
  for (std::size_t i = 0; i < n; ++i) d.ts.push_back(pick(rng));
  d.eps = nd::randn<T>(z.shape(), rng);
  d.z_t = Tensor<T>(z.shape());
  for (std::size_t i = 0; i < n; ++i) {
    const double ab = schedule.alphabar(d.ts[i]);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    for (std::size_t k = i * per; k < (i + 1) * per; ++k) {
      d.z_t[k] = static_cast<T>(a * z[k] + b * d.eps[k]);
    }
  }
  return d;
}

template <typename T>
Var<T> denoising_loss(const EpsModel<T>& model, const Tensor<T>& z,
                      const diffusion::NoiseSchedule& schedule, std::uint64_t seed) {
  auto d = draw_noise(z, schedule, seed);
  Var<T> pred = model(Var<T>(std::move(d.z_t)), d.ts);
  return nd::mse(pred, Var<T>(std::move(d.eps)));
}

template <typename T>
Var<T> denoising_loss(const UNet<T>& unet, const Tensor<T>& z,
                      const diffusion::NoiseSchedule& schedule, std::uint64_t seed) {
  return denoising_loss<T>(
      [&unet](const Var<T>& z_t, const std::vector<std::size_t>& ts) {
        return unet.forward(z_t, ts).eps;
      },
      z, schedule, seed);
}

#define EEGLDM_INSTANTIATE_UNET(T)                                                            \
  template class ResBlock<T>;                                                                 \
  template class UNetEncoder<T>;                                                              \
  template class UNet<T>;                                                                     \
  template NoiseDraw<T> draw_noise(const Tensor<T>&, const diffusion::NoiseSchedule&,         \
                                   std::uint64_t);                                            \
  template Var<T> denoising_loss(const EpsModel<T>&, const Tensor<T>&,                        \
                                 const diffusion::NoiseSchedule&, std::uint64_t);             \
  template Var<T> denoising_loss(const UNet<T>&, const Tensor<T>&,                            \
                                 const diffusion::NoiseSchedule&, std::uint64_t);

EEGLDM_INSTANTIATE_UNET(float)
EEGLDM_INSTANTIATE_UNET(double)

}  // namespace eegldm::denoiser
