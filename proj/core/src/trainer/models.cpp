#include "eegldm/trainer/models.hpp"

#include <algorithm>
#include <cmath>

#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::trainer {

diffusion::NoiseSchedule ScheduleConfig::build() const {
  return diffusion::NoiseSchedule::linear(steps, beta_start, beta_end);
}

void to_json(nlohmann::json& j, const ScheduleConfig& c) {
  j = {{"steps", c.steps}, {"beta_start", c.beta_start}, {"beta_end", c.beta_end}};
}

void from_json(const nlohmann::json& j, ScheduleConfig& c) {
  j.at("steps").get_to(c.steps);
  j.at("beta_start").get_to(c.beta_start);
  j.at("beta_end").get_to(c.beta_end);
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = {{"vae_variant", c.vae_variant},
       {"grid", c.grid},
       {"patch", {c.patch_freq, c.patch_time}},
       {"latent_channels", c.latent_channels},
       {"conv_vae", c.conv_vae},
       {"unet", c.unet},
       {"projector", c.projector},
       {"schedule", c.schedule},
       {"latent_mean", c.latent_mean},
       {"latent_std", c.latent_std}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  j.at("vae_variant").get_to(c.vae_variant);
  j.at("grid").get_to(c.grid);
  const auto patch = j.at("patch").get<std::vector<std::size_t>>();
  if (patch.size() != 2) throw std::invalid_argument("model config: patch must be [freq, time]");
  c.patch_freq = patch[0];
  c.patch_time = patch[1];
  j.at("latent_channels").get_to(c.latent_channels);
  j.at("conv_vae").get_to(c.conv_vae);
  j.at("unet").get_to(c.unet);
  j.at("projector").get_to(c.projector);
  j.at("schedule").get_to(c.schedule);
  j.at("latent_mean").get_to(c.latent_mean);
  j.at("latent_std").get_to(c.latent_std);
}

ModelSet::ModelSet(ModelConfig config, std::uint64_t seed)
    : config_(std::move(config)), seed_(seed), schedule_(config_.schedule.build()) {
  nd::Rng vae_rng(nd::derive_seed(seed_, {1}));
  if (config_.vae_variant == "analytic") {
    vae_ = std::make_unique<latentvae::AnalyticVae<float>>(
        config_.grid, config_.patch_freq, config_.patch_time, config_.latent_channels);
  } else if (config_.vae_variant == "conv") {
    auto conv = std::make_unique<latentvae::ConvVae<float>>(tree_, kVaePrefix, config_.grid,
                                                            config_.conv_vae, vae_rng);
    conv_vae_ = conv.get();
    vae_ = std::move(conv);
  } else {
    throw std::invalid_argument("unknown VAE variant '" + config_.vae_variant + "'");
  }
  config_.unet.latent_channels = vae_->latent().channels;
  if (!config_.latent_mean.empty() || !config_.latent_std.empty()) {
    set_latent_standardization(config_.latent_mean, config_.latent_std);
  }
  nd::Rng unet_rng(nd::derive_seed(seed_, {2}));
  unet_ = std::make_unique<denoiser::UNet<float>>(tree_, kUNetPrefix, config_.unet, unet_rng);
}

void ModelSet::attach_adapter(std::size_t subject_count) {
  if (adapter_) throw std::logic_error("adapter already attached");
  nd::Rng rng(nd::derive_seed(seed_, {3}));
  adapter_ = std::make_unique<controlnet::Adapter<float>>(
      tree_, kAdapterPrefix, *unet_, controlnet::AdapterConfig{config_.projector, subject_count},
      latent(), rng);
}

const controlnet::Adapter<float>& ModelSet::adapter() const {
  if (!adapter_) throw std::logic_error("no adapter attached");
  return *adapter_;
}

controlnet::Adapter<float>& ModelSet::adapter() {
  if (!adapter_) throw std::logic_error("no adapter attached");
  return *adapter_;
}

void ModelSet::attach_baseline() {
  if (baseline_) throw std::logic_error("baseline already attached");
  nd::Rng rng(nd::derive_seed(seed_, {4}));
  baseline_ = std::make_unique<controlnet::Projector<float>>(tree_, kBaselinePrefix,
                                                              config_.projector, latent(), rng);
}

const controlnet::Projector<float>& ModelSet::baseline() const {
  if (!baseline_) throw std::logic_error("no baseline attached");
  return *baseline_;
}

void ModelSet::set_latent_standardization(std::vector<double> mean, std::vector<double> std) {
  const std::size_t c = vae_->latent().channels;
  if (mean.size() != c || std.size() != c) {
    throw std::invalid_argument("latent standardization needs one mean and std per channel");
  }
  for (double s : std) {
    if (!(s > 0) || !std::isfinite(s)) throw std::invalid_argument("latent std must be positive");
  }
  config_.latent_mean = std::move(mean);
  config_.latent_std = std::move(std);
}

namespace {

// z[n, c, ...] = z * scale[c] + shift[c]
void affine_channels(Tensor<float>& z, const std::vector<double>& scale,
                     const std::vector<double>& shift) {
  const std::size_t n = z.dim(0), c = z.dim(1), per = z.size() / (n * c);
  float* p = z.data();
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t k = 0; k < c; ++k) {
      const auto a = static_cast<float>(scale[k]), b = static_cast<float>(shift[k]);
      for (std::size_t j = 0; j < per; ++j, ++p) *p = *p * a + b;
    }
  }
}

}  // namespace

Tensor<float> ModelSet::encode(const Tensor<float>& x) const {
  Tensor<float> z = vae_->encode_mean(x);
  if (config_.latent_std.empty()) return z;
  std::vector<double> scale, shift;
  for (std::size_t k = 0; k < config_.latent_std.size(); ++k) {
    scale.push_back(1.0 / config_.latent_std[k]);
    shift.push_back(-config_.latent_mean[k] / config_.latent_std[k]);
  }
  affine_channels(z, scale, shift);
  return z;
}

Tensor<float> ModelSet::decode(const Tensor<float>& z) const {
  if (config_.latent_std.empty()) return vae_->decode(z);
  Tensor<float> u = z;
  affine_channels(u, config_.latent_std, config_.latent_mean);
  return vae_->decode(u);
}

void ModelSet::load(const nd::TensorContainer& checkpoint) {
  std::size_t loaded = 0;
  for (const auto& prefix : {kVaePrefix, kUNetPrefix, kAdapterPrefix, kBaselinePrefix}) {
    const std::string p = prefix + ".";
    const auto names = checkpoint.names();
    const bool present = std::any_of(names.begin(), names.end(),
                                     [&](const std::string& n) { return n.rfind(p, 0) == 0; });
    if (!present) continue;
    tree_.assign(checkpoint, p);
    ++loaded;
  }
  if (loaded == 0) throw std::out_of_range("checkpoint holds no known model parameters");
}

Tensor<float> sample_unconditional(const ModelSet& models, std::size_t count,
                                   std::size_t ddim_steps, std::uint64_t seed) {
  const auto& unet = models.unet();
  diffusion::DenoiseFn<float> fn = [&](const Tensor<float>& z_t, std::size_t t) {
    return unet.predict(z_t, std::vector<std::size_t>(z_t.dim(0), t));
  };
  const auto z0 = diffusion::sample(fn, models.schedule(), ddim_steps,
                                    models.latent().batch_shape(count), seed);
  return models.decode(z0);
}

Tensor<float> sample_conditioned(const ModelSet& models, const Tensor<float>& y,
                                 const std::vector<std::size_t>& subjects, std::size_t ddim_steps,
                                 std::uint64_t seed) {
  const auto& unet = models.unet();
  const auto& adapter = models.adapter();
  const Var<float> yv(y);
  diffusion::DenoiseFn<float> fn = [&](const Tensor<float>& z_t, std::size_t t) {
    return controlnet::fused_forward(unet, adapter, Var<float>(z_t), yv, subjects,
                                     std::vector<std::size_t>(z_t.dim(0), t))
        .value();
  };
  const auto z0 = diffusion::sample(fn, models.schedule(), ddim_steps,
                                    models.latent().batch_shape(y.dim(0)), seed);
  return models.decode(z0);
}

Tensor<float> regress(const ModelSet& models, const Tensor<float>& y) {
  return models.decode(models.baseline().forward(Var<float>(y)).value());
}

Tensor<float> reconstruct(const ModelSet& models, const Tensor<float>& x) {
  return models.decode(models.encode(x));
}

Tensor<float> stack(const std::vector<Tensor<float>>& items) {
  if (items.empty()) throw nd::ShapeError("stack: no items");
  Shape s = items[0].shape();
  const std::size_t per = items[0].size();
  s.insert(s.begin(), items.size());
  Tensor<float> out(s);
  for (std::size_t i = 0; i < items.size(); ++i) {
    nd::require_same_shape(items[i].shape(), items[0].shape(), "stack");
    std::copy_n(items[i].data(), per, out.data() + i * per);
  }
  return out;
}

std::vector<Tensor<float>> unstack(const Tensor<float>& batch) {
  if (batch.rank() < 2) throw nd::ShapeError("unstack: need rank >= 2");
  const Shape item(batch.shape().begin() + 1, batch.shape().end());
  const std::size_t per = nd::shape_size(item);
  std::vector<Tensor<float>> out;
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    Tensor<float> t(item);
    std::copy_n(batch.data() + i * per, per, t.data());
    out.push_back(std::move(t));
  }
  return out;
}

}  // namespace eegldm::trainer
