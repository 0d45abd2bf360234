#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/nd/layers.hpp"
#include "eegldm/nd/params.hpp"

// Spectrogram batches are [N, F_x, S_x]; latent batches are channels-first
// [N, D_z, F_z, S_z] so the denoiser can convolve over (F_z, S_z).
namespace eegldm::latentvae {

using nd::Shape;
using nd::Tensor;
using nd::Var;

inline constexpr double kLogvarMin = -10.0;
inline constexpr double kLogvarMax = 10.0;

struct GridDims {
  std::size_t freq_bins = 64;
  std::size_t time_bins = 56;
  bool operator==(const GridDims&) const = default;
};

struct LatentDims {
  std::size_t channels = 4;
  std::size_t freq = 8;
  std::size_t time = 14;
  std::size_t size() const { return channels * freq * time; }
  Shape batch_shape(std::size_t n) const { return {n, channels, freq, time}; }
  bool operator==(const LatentDims&) const = default;
};

template <typename T>
struct Posterior {
  Tensor<T> mean;
  Tensor<T> logvar;
};

template <typename T>
struct Encoded {
  Posterior<T> posterior;
  Tensor<T> sample;
};

template <typename T>
class Vae {
 public:
  virtual ~Vae() = default;
  virtual std::string variant() const = 0;
  virtual GridDims grid() const = 0;
  virtual LatentDims latent() const = 0;

  // Logvar already clamped to [kLogvarMin, kLogvarMax].
  virtual Posterior<T> posterior(const Tensor<T>& x) const = 0;
  virtual Tensor<T> decode(const Tensor<T>& z) const = 0;

  // sample = mean + exp(logvar / 2) * eta, eta ~ N(0, I) drawn from seed.
  Encoded<T> encode(const Tensor<T>& x, std::uint64_t seed) const;
  Tensor<T> encode_mean(const Tensor<T>& x) const { return posterior(x).mean; }

  virtual nlohmann::json describe() const;

 protected:
  std::size_t check_grid(const Shape& s) const;
  std::size_t check_latent(const Shape& s) const;
};

// Non-learned patch codec: each pf x ps patch is projected onto the first D_z
// functions of the orthonormal 2D DCT-II basis (ordered by u + v, then u).
// With D_z = pf * ps it is an exact bijection; otherwise decode(encode_mean(x))
// is the orthogonal projection of x onto the retained basis.
template <typename T>
class AnalyticVae final : public Vae<T> {
 public:
  AnalyticVae(GridDims grid, std::size_t patch_freq, std::size_t patch_time,
              std::size_t latent_channels);

  std::string variant() const override { return "analytic"; }
  GridDims grid() const override { return grid_; }
  LatentDims latent() const override { return latent_; }
  Posterior<T> posterior(const Tensor<T>& x) const override;
  Tensor<T> decode(const Tensor<T>& z) const override;
  nlohmann::json describe() const override;

  // [D_z, pf, ps]; rows are orthonormal.
  const Tensor<double>& basis() const { return basis_; }

 private:
  GridDims grid_;
  LatentDims latent_;
  std::size_t pf_, ps_;
  Tensor<double> basis_;
};

struct ConvVaeConfig {
  std::vector<std::size_t> channels = {16, 32};
  // (freq, time) stride of each downsampling stage.
  std::vector<std::pair<std::size_t, std::size_t>> strides = {{2, 2}, {4, 2}};
  std::size_t latent_channels = 4;
};

void to_json(nlohmann::json& j, const ConvVaeConfig& c);
void from_json(const nlohmann::json& j, ConvVaeConfig& c);
void to_json(nlohmann::json& j, const GridDims& g);
void from_json(const nlohmann::json& j, GridDims& g);

template <typename T>
struct VarPosterior {
  Var<T> mean;
  Var<T> logvar;
};

template <typename T>
struct VaeLoss {
  Var<T> total;
  Var<T> recon;
  Var<T> kl;
};

// Small trained encoder/decoder with one strided conv per downsampling stage
// and nearest upsampling + conv per decoder stage. Parameters live in the tree
// under prefix.
template <typename T>
class ConvVae final : public Vae<T> {
 public:
  ConvVae(nd::ParameterTree<T>& tree, const std::string& prefix, GridDims grid,
          ConvVaeConfig config, nd::Rng& rng);

  std::string variant() const override { return "conv"; }
  GridDims grid() const override { return grid_; }
  LatentDims latent() const override { return latent_; }
  Posterior<T> posterior(const Tensor<T>& x) const override;
  Tensor<T> decode(const Tensor<T>& z) const override;
  nlohmann::json describe() const override;

  VarPosterior<T> posterior_var(const Var<T>& x) const;
  Var<T> decode_var(const Var<T>& z) const;
  // Reparameterized sample with seeded eta; reconstruction MSE + beta_kl * KL.
  VaeLoss<T> loss(const Tensor<T>& x, std::uint64_t seed, double beta_kl) const;

  const std::string& prefix() const { return prefix_; }

 private:
  // Conv without bias (the following group norm would cancel it).
  struct Stage {
    Var<T> w, gamma, beta;
    std::size_t sf, st;
    std::size_t groups;
  };
  Stage make_stage(nd::ParameterTree<T>& tree, const std::string& name, std::size_t in,
                   std::size_t out, std::size_t kf, std::size_t kt, std::size_t sf,
                   std::size_t st, nd::Rng& rng);
  Var<T> apply(const Stage& s, const Var<T>& x) const;

  std::string prefix_;
  GridDims grid_;
  ConvVaeConfig config_;
  LatentDims latent_;
  Stage stem_;
  std::vector<Stage> down_;
  Var<T> mean_w_, mean_b_, logvar_w_, logvar_b_;
  Stage dec_in_;
  std::vector<Stage> up_;
  std::vector<std::pair<std::size_t, std::size_t>> up_targets_;
  Var<T> out_w_, out_b_;
};

// mse(x, recon) + beta_kl * KL(N(mu, exp(logvar)) || N(0, I)), KL averaged over the batch.
template <typename T>
VaeLoss<T> vae_loss(const Var<T>& x, const Var<T>& recon, const Var<T>& mean,
                    const Var<T>& logvar, double beta_kl);

// ||a - b|| / ||b||.
template <typename T>
double relative_reconstruction_error(const Tensor<T>& recon, const Tensor<T>& x);

}  // namespace eegldm::latentvae
