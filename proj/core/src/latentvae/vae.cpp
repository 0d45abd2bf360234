#include "eegldm/latentvae/vae.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::latentvae {

namespace {

template <typename T>
Tensor<T> lecun(const Shape& shape, std::size_t fan_in, nd::Rng& rng) {
  return nd::randn<T>(shape, rng, 1.0 / std::sqrt(static_cast<double>(fan_in)));
}

double dct_coeff(std::size_t k, std::size_t n, std::size_t len) {
  const double a = k == 0 ? std::sqrt(1.0 / len) : std::sqrt(2.0 / len);
  return a * std::cos(std::numbers::pi * (n + 0.5) * k / len);
}

}  // namespace

void to_json(nlohmann::json& j, const GridDims& g) {
  j = {{"freq_bins", g.freq_bins}, {"time_bins", g.time_bins}};
}
void from_json(const nlohmann::json& j, GridDims& g) {
  j.at("freq_bins").get_to(g.freq_bins);
  j.at("time_bins").get_to(g.time_bins);
}
void to_json(nlohmann::json& j, const ConvVaeConfig& c) {
  j = {{"channels", c.channels}, {"strides", c.strides}, {"latent_channels", c.latent_channels}};
}
void from_json(const nlohmann::json& j, ConvVaeConfig& c) {
  j.at("channels").get_to(c.channels);
  j.at("strides").get_to(c.strides);
  j.at("latent_channels").get_to(c.latent_channels);
}

template <typename T>
std::size_t Vae<T>::check_grid(const Shape& s) const {
  const auto g = grid();
  if (s.size() != 3 || s[1] != g.freq_bins || s[2] != g.time_bins) {
    throw nd::ShapeError("vae: expected spectrogram batch [N, " + std::to_string(g.freq_bins) +
                         ", " + std::to_string(g.time_bins) + "], got " + nd::shape_to_string(s));
  }
  return s[0];
}

template <typename T>
std::size_t Vae<T>::check_latent(const Shape& s) const {
  const auto l = latent();
  if (s.size() != 4 || s[1] != l.channels || s[2] != l.freq || s[3] != l.time) {
    throw nd::ShapeError("vae: expected latent batch " + nd::shape_to_string(l.batch_shape(0)) +
                         " (any N), got " + nd::shape_to_string(s));
  }
  return s[0];
}

template <typename T>
Encoded<T> Vae<T>::encode(const Tensor<T>& x, std::uint64_t seed) const {
  Encoded<T> out{posterior(x), {}};
  nd::Rng rng(seed);
  const auto eta = nd::randn<T>(out.posterior.mean.shape(), rng);
  out.sample = Tensor<T>(eta.shape());
  const auto& mu = out.posterior.mean;
  const auto& lv = out.posterior.logvar;
  for (std::size_t i = 0; i < eta.size(); ++i) {
    out.sample[i] = static_cast<T>(mu[i] + std::exp(0.5 * lv[i]) * eta[i]);
  }
  return out;
}

template <typename T>
nlohmann::json Vae<T>::describe() const {
  const auto l = latent();
  return {{"variant", variant()},
          {"grid", grid()},
          {"latent", {{"channels", l.channels}, {"freq", l.freq}, {"time", l.time}}}};
}

template <typename T>
AnalyticVae<T>::AnalyticVae(GridDims grid, std::size_t patch_freq, std::size_t patch_time,
                            std::size_t latent_channels)
    : grid_(grid), pf_(patch_freq), ps_(patch_time) {
  if (pf_ == 0 || ps_ == 0 || grid.freq_bins % pf_ != 0 || grid.time_bins % ps_ != 0) {
    throw nd::ShapeError("analytic vae: patch " + std::to_string(pf_) + "x" + std::to_string(ps_) +
                         " does not tile " + std::to_string(grid.freq_bins) + "x" +
                         std::to_string(grid.time_bins));
  }
  if (latent_channels == 0 || latent_channels > pf_ * ps_) {
    throw nd::ShapeError("analytic vae: latent channels must lie in [1, patch area]");
  }
  latent_ = {latent_channels, grid.freq_bins / pf_, grid.time_bins / ps_};

  std::vector<std::pair<std::size_t, std::size_t>> order;
  for (std::size_t u = 0; u < pf_; ++u)
    for (std::size_t v = 0; v < ps_; ++v) order.emplace_back(u, v);
  std::stable_sort(order.begin(), order.end(), [](auto a, auto b) {
    return a.first + a.second < b.first + b.second;
  });
  basis_ = Tensor<double>(Shape{latent_channels, pf_, ps_});
  for (std::size_t d = 0; d < latent_channels; ++d) {
    const auto [u, v] = order[d];
    for (std::size_t a = 0; a < pf_; ++a)
      for (std::size_t b = 0; b < ps_; ++b)
        basis_[(d * pf_ + a) * ps_ + b] = dct_coeff(u, a, pf_) * dct_coeff(v, b, ps_);
  }
}

template <typename T>
Posterior<T> AnalyticVae<T>::posterior(const Tensor<T>& x) const {
  const std::size_t n = this->check_grid(x.shape());
  const std::size_t F = grid_.freq_bins, S = grid_.time_bins, D = latent_.channels;
  const std::size_t fz = latent_.freq, sz = latent_.time;
  Posterior<T> out{Tensor<T>(latent_.batch_shape(n)),
                   Tensor<T>(latent_.batch_shape(n), static_cast<T>(kLogvarMin))};
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < D; ++d)
      for (std::size_t p = 0; p < fz; ++p)
        for (std::size_t q = 0; q < sz; ++q) {
          double acc = 0;
          for (std::size_t a = 0; a < pf_; ++a)
            for (std::size_t b = 0; b < ps_; ++b)
              acc += basis_[(d * pf_ + a) * ps_ + b] *
                     static_cast<double>(x[(i * F + p * pf_ + a) * S + q * ps_ + b]);
          out.mean[((i * D + d) * fz + p) * sz + q] = static_cast<T>(acc);
        }
  return out;
}

template <typename T>
Tensor<T> AnalyticVae<T>::decode(const Tensor<T>& z) const {
  const std::size_t n = this->check_latent(z.shape());
  const std::size_t F = grid_.freq_bins, S = grid_.time_bins, D = latent_.channels;
  const std::size_t fz = latent_.freq, sz = latent_.time;
  Tensor<T> x(Shape{n, F, S});
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < fz; ++p)
      for (std::size_t q = 0; q < sz; ++q)
        for (std::size_t a = 0; a < pf_; ++a)
          for (std::size_t b = 0; b < ps_; ++b) {
            double acc = 0;
            for (std::size_t d = 0; d < D; ++d)
              acc += basis_[(d * pf_ + a) * ps_ + b] *
                     static_cast<double>(z[((i * D + d) * fz + p) * sz + q]);
            x[(i * F + p * pf_ + a) * S + q * ps_ + b] = static_cast<T>(acc);
          }
  return x;
}

template <typename T>
nlohmann::json AnalyticVae<T>::describe() const {
  auto j = Vae<T>::describe();
  j["patch"] = {pf_, ps_};
  return j;
}

template <typename T>
typename ConvVae<T>::Stage ConvVae<T>::make_stage(nd::ParameterTree<T>& tree,
                                                  const std::string& name, std::size_t in,
                                                  std::size_t out, std::size_t kf, std::size_t kt,
                                                  std::size_t sf, std::size_t st, nd::Rng& rng) {
  Stage s;
  s.w = tree.add(name + ".weight", lecun<T>({out, in, kf, kt}, in * kf * kt, rng));
  s.gamma = tree.add(name + ".norm.gamma", Tensor<T>(Shape{out}, T(1)));
  s.beta = tree.add(name + ".norm.beta", Tensor<T>(Shape{out}));
  s.sf = sf;
  s.st = st;
  s.groups = nd::default_groups(out);
  return s;
}

template <typename T>
Var<T> ConvVae<T>::apply(const Stage& s, const Var<T>& x) const {
  return nd::silu(
      nd::group_norm(nd::conv2d(x, s.w, Var<T>(), s.sf, s.st), s.gamma, s.beta, s.groups));
}

template <typename T>
ConvVae<T>::ConvVae(nd::ParameterTree<T>& tree, const std::string& prefix, GridDims grid,
                    ConvVaeConfig config, nd::Rng& rng)
    : prefix_(prefix), grid_(grid), config_(std::move(config)) {
  const auto& ch = config_.channels;
  const auto& st = config_.strides;
  if (ch.empty() || ch.size() != st.size()) {
    throw nd::ShapeError("conv vae: need one stride pair per stage");
  }
  const std::size_t D = config_.latent_channels;
  std::vector<std::pair<std::size_t, std::size_t>> dims = {{grid.freq_bins, grid.time_bins}};
  for (auto [sf, stt] : st) {
    if (sf == 0 || stt == 0) throw nd::ShapeError("conv vae: zero stride");
    dims.emplace_back(nd::same_out_extent(dims.back().first, sf),
                      nd::same_out_extent(dims.back().second, stt));
  }
  latent_ = {D, dims.back().first, dims.back().second};

  stem_ = make_stage(tree, prefix + ".enc.stem", 1, ch[0], 3, 3, 1, 1, rng);
  for (std::size_t k = 0; k < ch.size(); ++k) {
    const std::size_t in = k == 0 ? ch[0] : ch[k - 1];
    const auto [sf, stt] = st[k];
    down_.push_back(make_stage(tree, prefix + ".enc.down" + std::to_string(k), in, ch[k],
                               std::max<std::size_t>(3, sf + 1), std::max<std::size_t>(3, stt + 1),
                               sf, stt, rng));
  }
  const std::size_t top = ch.back();
  mean_w_ = tree.add(prefix + ".enc.mean.weight", lecun<T>({D, top, 1, 1}, top, rng));
  mean_b_ = tree.add(prefix + ".enc.mean.bias", Tensor<T>(Shape{D}));
  logvar_w_ = tree.add(prefix + ".enc.logvar.weight", lecun<T>({D, top, 1, 1}, top, rng));
  logvar_b_ = tree.add(prefix + ".enc.logvar.bias", Tensor<T>(Shape{D}));

  dec_in_ = make_stage(tree, prefix + ".dec.in", D, top, 3, 3, 1, 1, rng);
  for (std::size_t k = ch.size(); k-- > 0;) {
    const std::size_t out = k == 0 ? ch[0] : ch[k - 1];
    up_.push_back(make_stage(tree, prefix + ".dec.up" + std::to_string(k), ch[k], out, 3, 3, 1, 1,
                             rng));
    up_.back().sf = st[k].first;
    up_.back().st = st[k].second;
    up_targets_.push_back(dims[k]);
  }
  out_w_ = tree.add(prefix + ".dec.out.weight", lecun<T>({1, ch[0], 3, 3}, ch[0] * 9, rng));
  out_b_ = tree.add(prefix + ".dec.out.bias", Tensor<T>(Shape{1}));
}

template <typename T>
VarPosterior<T> ConvVae<T>::posterior_var(const Var<T>& x) const {
  const std::size_t n = this->check_grid(x.shape());
  Var<T> h = nd::reshape(x, {n, 1, grid_.freq_bins, grid_.time_bins});
  h = apply(stem_, h);
  for (const auto& s : down_) h = apply(s, h);
  Var<T> mean = nd::conv2d(h, mean_w_, mean_b_, 1, 1);
  Var<T> lv = nd::clamp(nd::conv2d(h, logvar_w_, logvar_b_, 1, 1), static_cast<T>(kLogvarMin),
                        static_cast<T>(kLogvarMax));
  return {mean, lv};
}

template <typename T>
Var<T> ConvVae<T>::decode_var(const Var<T>& z) const {
  const std::size_t n = this->check_latent(z.shape());
  Var<T> h = apply(dec_in_, z);
  for (std::size_t k = 0; k < up_.size(); ++k) {
    const auto& s = up_[k];
    h = nd::upsample_nearest(h, s.sf, s.st, up_targets_[k].first, up_targets_[k].second);
    h = nd::silu(nd::group_norm(nd::conv2d(h, s.w, Var<T>(), 1, 1), s.gamma, s.beta, s.groups));
  }
  h = nd::conv2d(h, out_w_, out_b_, 1, 1);
  return nd::reshape(h, {n, grid_.freq_bins, grid_.time_bins});
}

template <typename T>
Posterior<T> ConvVae<T>::posterior(const Tensor<T>& x) const {
  auto p = posterior_var(Var<T>(x));
  return {p.mean.value(), p.logvar.value()};
}

template <typename T>
Tensor<T> ConvVae<T>::decode(const Tensor<T>& z) const {
  return decode_var(Var<T>(z)).value();
}

template <typename T>
VaeLoss<T> ConvVae<T>::loss(const Tensor<T>& x, std::uint64_t seed, double beta_kl) const {
  Var<T> xv(x);
  auto post = posterior_var(xv);
  nd::Rng rng(seed);
  Var<T> eta(nd::randn<T>(post.mean.shape(), rng));
  Var<T> z = nd::add(post.mean, nd::mul(nd::exp(nd::scale(post.logvar, T(0.5))), eta));
  return vae_loss(xv, decode_var(z), post.mean, post.logvar, beta_kl);
}

template <typename T>
nlohmann::json ConvVae<T>::describe() const {
  auto j = Vae<T>::describe();
  j["conv"] = config_;
  return j;
}

template <typename T>
VaeLoss<T> vae_loss(const Var<T>& x, const Var<T>& recon, const Var<T>& mean,
                    const Var<T>& logvar, double beta_kl) {
  VaeLoss<T> out;
  out.recon = nd::mse(recon, x);
  out.kl = nd::gaussian_kl(mean, logvar);
  out.total = nd::add(out.recon, nd::scale(out.kl, static_cast<T>(beta_kl)));
  return out;
}

template <typename T>
double relative_reconstruction_error(const Tensor<T>& recon, const Tensor<T>& x) {
  nd::require_same_shape(recon.shape(), x.shape(), "relative_reconstruction_error");
  double num = 0, den = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double d = static_cast<double>(recon[i]) - static_cast<double>(x[i]);
    num += d * d;
    den += static_cast<double>(x[i]) * static_cast<double>(x[i]);
  }
  if (den == 0) return num == 0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::sqrt(num / den);
}

#define EEGLDM_INSTANTIATE_VAE(T)                                                            \
  template class Vae<T>;                                                                     \
  template class AnalyticVae<T>;                                                             \
  template class ConvVae<T>;                                                                 \
  template VaeLoss<T> vae_loss(const Var<T>&, const Var<T>&, const Var<T>&, const Var<T>&,   \
                               double);                                                      \
  template double relative_reconstruction_error(const Tensor<T>&, const Tensor<T>&);

EEGLDM_INSTANTIATE_VAE(float)
EEGLDM_INSTANTIATE_VAE(double)

}  // namespace eegldm::latentvae
