#include "eegldm/controlnet/adapter.hpp"

#include <cmath>
#include <stdexcept>

#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::controlnet {

std::size_t ProjectorConfig::output_steps() const {
  std::size_t len = input_steps;
  for (auto s : strides) len = nd::same_out_extent(len, s);
  return len;
}

void to_json(nlohmann::json& j, const ProjectorConfig& c) {
  j = {{"input_channels", c.input_channels}, {"input_steps", c.input_steps},
       {"channels", c.channels},             {"strides", c.strides},
       {"kernel", c.kernel}};
}

void from_json(const nlohmann::json& j, ProjectorConfig& c) {
  j.at("input_channels").get_to(c.input_channels);
  j.at("input_steps").get_to(c.input_steps);
  j.at("channels").get_to(c.channels);
  j.at("strides").get_to(c.strides);
  j.at("kernel").get_to(c.kernel);
}

void to_json(nlohmann::json& j, const AdapterConfig& c) {
  j = {{"projector", c.projector}, {"subject_count", c.subject_count}};
}

void from_json(const nlohmann::json& j, AdapterConfig& c) {
  j.at("projector").get_to(c.projector);
  j.at("subject_count").get_to(c.subject_count);
}

template <typename T>
Projector<T>::Projector(nd::ParameterTree<T>& tree, const std::string& prefix,
                        ProjectorConfig config, LatentDims latent, nd::Rng& rng)
    : config_(std::move(config)), latent_(latent) {
  if (config_.channels.empty() || config_.channels.size() != config_.strides.size()) {
    throw nd::ShapeError("projector: need one stride per stage");
  }
  if (config_.output_steps() != latent.time) {
    throw nd::ShapeError("projector: " + std::to_string(config_.input_steps) +
                         " steps reduce to " + std::to_string(config_.output_steps()) +
                         ", latent needs " + std::to_string(latent.time));
  }
  std::size_t in = config_.input_channels;
  for (std::size_t k = 0; k < config_.channels.size(); ++k) {
    const std::size_t out = config_.channels[k];
    const std::string name = prefix + ".stage" + std::to_string(k);
    Stage s;
    s.w = tree.add(name + ".weight",
                   nd::randn<T>({out, in, config_.kernel}, rng,
                                1.0 / std::sqrt(static_cast<double>(in * config_.kernel))));
    s.gamma = tree.add(name + ".norm.gamma", Tensor<T>(Shape{out}, T(1)));
    s.beta = tree.add(name + ".norm.beta", Tensor<T>(Shape{out}));
    s.stride = config_.strides[k];
    s.groups = nd::default_groups(out);
    stages_.push_back(s);
    in = out;
  }
  const std::size_t head = latent.freq * latent.channels;
  head_w_ = tree.add(prefix + ".head.weight",
                     nd::randn<T>({head, in, 1}, rng, 1.0 / std::sqrt(static_cast<double>(in))));
  head_b_ = tree.add(prefix + ".head.bias", Tensor<T>(Shape{head}));
}

template <typename T>
Var<T> Projector<T>::forward(const Var<T>& y) const {
  const auto& s = y.shape();
  if (s.size() != 3 || s[1] != config_.input_channels || s[2] != config_.input_steps) {
    throw nd::ShapeError("projector: expected [N, " + std::to_string(config_.input_channels) +
                         ", " + std::to_string(config_.input_steps) + "], got " +
                         nd::shape_to_string(s));
  }
  Var<T> h = y;
  for (const auto& st : stages_) {
    h = nd::silu(nd::group_norm(nd::conv1d(h, st.w, Var<T>(), st.stride), st.gamma, st.beta,
                                st.groups));
  }
  h = nd::conv1d(h, head_w_, head_b_, 1);
  return nd::reshape(h, latent_.batch_shape(s[0]));
}

template <typename T>
SubjectLayer<T>::SubjectLayer(nd::ParameterTree<T>& tree, const std::string& prefix,
                              std::size_t subjects, std::size_t channels) {
  if (subjects == 0) throw std::invalid_argument("subject layer: need at least one subject");
  Tensor<T> eye(Shape{subjects, channels, channels});
  for (std::size_t s = 0; s < subjects; ++s)
    for (std::size_t c = 0; c < channels; ++c) eye[(s * channels + c) * channels + c] = T(1);
  mixers_ = tree.add(prefix + ".mixers", std::move(eye));
}

template <typename T>
Var<T> SubjectLayer<T>::forward(const Var<T>& y, const std::vector<std::size_t>& subjects) const {
  return nd::mix_channels(y, mixers_, subjects);
}

template <typename T>
Adapter<T>::Adapter(nd::ParameterTree<T>& tree, const std::string& prefix,
                    const denoiser::UNet<T>& donor, AdapterConfig config, LatentDims latent,
                    nd::Rng& rng)
    : prefix_(prefix),
      config_(std::move(config)),
      projector_(tree, prefix + ".projector", config_.projector, latent, rng),
      encoder_(tree, prefix + ".encoder", donor.config(), rng) {
  const auto& uc = donor.config();
  if (uc.latent_channels != latent.channels) {
    throw nd::ShapeError("adapter: donor expects " + std::to_string(uc.latent_channels) +
                         " latent channels, latent has " + std::to_string(latent.channels));
  }
  if (config_.subject_count > 0) {
    subject_ = std::make_unique<SubjectLayer<T>>(tree, prefix + ".subject", config_.subject_count,
                                                 config_.projector.input_channels);
  }
  c_in_ = std::make_unique<nd::Conv2d<T>>(tree, prefix + ".zero_in", latent.channels,
                                          latent.channels, 1, 1, rng, nd::Init::kZero);
  for (std::size_t i = 0; i < uc.levels(); ++i) {
    c_.push_back(std::make_unique<nd::Conv2d<T>>(tree, prefix + ".zero" + std::to_string(i),
                                                 uc.channels[i], uc.channels[i], 1, 1, rng,
                                                 nd::Init::kZero));
  }
  tree.copy_values(donor.encoder_prefix(), prefix + ".encoder");
}

template <typename T>
Var<T> Adapter<T>::condition(const Var<T>& y, const std::vector<std::size_t>& subjects) const {
  if (y.rank() != 3 || subjects.size() != y.dim(0)) {
    throw nd::ShapeError("adapter: one subject id per conditioning signal required");
  }
  return projector_.forward(subject_ ? subject_->forward(y, subjects) : y);
}

template <typename T>
std::vector<Var<T>> Adapter<T>::features(const Var<T>& z_t, const Var<T>& y,
                                         const std::vector<std::size_t>& subjects,
                                         const Var<T>& temb) const {
  Var<T> p = condition(y, subjects);
  nd::require_same_shape(z_t.shape(), p.shape(), "adapter input");
  return encoder_.forward(nd::add(c_in_->forward(z_t), p), temb);
}

template <typename T>
std::vector<Var<T>> Adapter<T>::injections(const std::vector<Var<T>>& adapter_features) const {
  if (adapter_features.size() != c_.size()) {
    throw nd::ShapeError("adapter: expected " + std::to_string(c_.size()) + " feature levels");
  }
  std::vector<Var<T>> out;
  for (std::size_t i = 0; i < c_.size(); ++i) out.push_back(c_[i]->forward(adapter_features[i]));
  return out;
}

template <typename T>
void Adapter<T>::scale_zero_convs(T lambda) {
  for (auto& c : c_) {
    Var<T> w = c->weight(), b = c->bias();
    for (auto& v : w.mutable_value().values()) v *= lambda;
    for (auto& v : b.mutable_value().values()) v *= lambda;
  }
}

template <typename T>
Var<T> fused_forward(const denoiser::UNet<T>& unet, const Adapter<T>& adapter, const Var<T>& z_t,
                     const Var<T>& y, const std::vector<std::size_t>& subjects,
                     const std::vector<std::size_t>& ts) {
  if (z_t.rank() != 4 || ts.size() != z_t.dim(0)) {
    throw nd::ShapeError("fused_forward: one timestep per sample required");
  }
  const Var<T> temb = unet.embed_time(ts);
  auto base = unet.encoder().forward(z_t, temb);
  auto inject = adapter.injections(adapter.features(z_t, y, subjects, temb));
  for (std::size_t i = 0; i < base.size(); ++i) base[i] = nd::add(base[i], inject[i]);
  return unet.decode(base, temb);
}

template <typename T>
Var<T> adapter_loss(const denoiser::UNet<T>& unet, const Adapter<T>& adapter,
                    const ConditionedBatch<T>& batch, const diffusion::NoiseSchedule& schedule,
                    std::uint64_t seed) {
  const Var<T> y(batch.y);
  return denoiser::denoising_loss<T>(
      [&](const Var<T>& z_t, const std::vector<std::size_t>& ts) {
        return fused_forward(unet, adapter, z_t, y, batch.subjects, ts);
      },
      batch.z, schedule, seed);
}

#define EEGLDM_INSTANTIATE_ADAPTER(T)                                                         \
  template class Projector<T>;                                                                \
  template class SubjectLayer<T>;                                                             \
  template class Adapter<T>;                                                                  \
  template Var<T> fused_forward(const denoiser::UNet<T>&, const Adapter<T>&, const Var<T>&,   \
                                const Var<T>&, const std::vector<std::size_t>&,               \
                                const std::vector<std::size_t>&);                             \
  template Var<T> adapter_loss(const denoiser::UNet<T>&, const Adapter<T>&,                   \
                               const ConditionedBatch<T>&, const diffusion::NoiseSchedule&,   \
                               std::uint64_t);

EEGLDM_INSTANTIATE_ADAPTER(float)
EEGLDM_INSTANTIATE_ADAPTER(double)

}  // namespace eegldm::controlnet
