#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/nd/tensor.hpp"

namespace eegldm::evalkit {

using nd::Shape;
using nd::Tensor;

class MetricError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

using Embedding = std::vector<double>;

// I frames x D_f values, row-major.
struct FrameEmbeddingSeq {
  Tensor<double> frames;
  double frame_rate = 0;
  std::size_t count() const { return frames.dim(0); }
  std::size_t dim() const { return frames.dim(1); }
};

struct EmbedderConfig {
  std::size_t bands = 16;
  std::size_t global_dim = 32;
  std::size_t frame_dim = 16;
  std::size_t pooling = 4;     // spectrogram frames per embedding frame
  double spec_fps = 16.0;
  std::uint64_t seed = 0x5eedu;
};

void to_json(nlohmann::json& j, const EmbedderConfig& c);
void from_json(const nlohmann::json& j, EmbedderConfig& c);

// Analytic stand-ins for learned audio encoders. Band energies are
// log1p(mean over the band's bins of expm1(max(x, 0))) for each spectrogram
// frame of a [F_x, S_x] log-magnitude grid.
class Embedder {
 public:
  Embedder(EmbedderConfig config, std::size_t freq_bins);

  const EmbedderConfig& config() const { return config_; }
  std::size_t freq_bins() const { return freq_bins_; }

  // [bands, S_x]
  Tensor<double> band_energies(const Tensor<float>& x) const;
  // Per-band time mean and std, 2 * bands values.
  std::vector<double> global_features(const Tensor<float>& x) const;

  // normalize(R (features - centering)); an all-zero grid (or a vanishing
  // projection) maps to the first basis vector.
  Embedding global(const Tensor<float>& x) const;
  // Frame k pools spectrogram frames [k p, (k + 1) p) by averaging band
  // energies, then projects to frame_dim. No normalization.
  FrameEmbeddingSeq frames(const Tensor<float>& x) const;

  const std::vector<double>& centering() const { return centering_; }
  void set_centering(std::vector<double> c);
  // Mean global feature vector over a corpus.
  void fit_centering(const std::vector<Tensor<float>>& corpus);

 private:
  EmbedderConfig config_;
  std::size_t freq_bins_;
  std::vector<double> centering_;
  Tensor<double> global_proj_;  // [global_dim, 2 * bands]
  Tensor<double> frame_proj_;   // [frame_dim, bands]
};

struct GaussianStats {
  std::vector<double> mean;
  Tensor<double> cov;  // [d, d]
  std::size_t count = 0;
  std::size_t dim() const { return mean.size(); }
};

// Unbiased (n - 1) covariance plus ridge on the diagonal; with fewer samples
// than dimensions the off-diagonal entries are dropped.
GaussianStats fit_gaussian(const std::vector<Embedding>& samples, double ridge = 1e-6);

// Symmetric PSD root via eigendecomposition, negative eigenvalues clipped to 0.
Tensor<double> sqrtm_psd(const Tensor<double>& sigma);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 sqrtm(S1^1/2 S2 S1^1/2)), clipped at 0.
double frechet_distance(const GaussianStats& a, const GaussianStats& b);
double fad(const std::vector<Embedding>& reference, const std::vector<Embedding>& generated,
           double ridge = 1e-6);

// r = sum (e - mean e)(f - mean f) / sqrt(sum (e - mean e)^2 sum (f - mean f)^2);
// 0 when exactly one side is constant.
double pearson(std::span<const double> e, std::span<const double> f);
// Inner product of two unit-norm embeddings.
double clap_score(std::span<const double> e, std::span<const double> f);
// (1 / I) sum of squared differences over all I x D entries.
double mse_frames(const FrameEmbeddingSeq& e, const FrameEmbeddingSeq& f);
double pearson_frames(const FrameEmbeddingSeq& e, const FrameEmbeddingSeq& f);

enum class Direction { kHigherBetter, kLowerBetter };

struct SignificanceResult {
  double observed = 0;
  std::size_t resamples = 0;
  double p_value = 1;
  Direction direction = Direction::kHigherBetter;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SignificanceResult& r);

// score(d, g): metric between decoded item d and ground truth g.
using PairScore = std::function<double(std::size_t decoded, std::size_t truth)>;

// observed = mean_i score(i, i). Each null draw pairs ground truth i with a
// decoded index drawn uniformly with replacement. p = (1 + k) / (R + 1) where
// k counts draws at least as extreme as observed.
SignificanceResult bootstrap_p(const PairScore& score, std::size_t pairs, std::size_t resamples,
                               std::uint64_t seed, Direction direction);

using EmbeddingScore = std::function<double(const Embedding&, const Embedding&)>;

// M[i][j] = mean over decoded chunks of track i and ground-truth chunks of track j.
Tensor<double> cross_score_matrix(const std::vector<std::vector<Embedding>>& decoded,
                                  const std::vector<std::vector<Embedding>>& truth,
                                  const EmbeddingScore& score);
// Rows whose strict argmax is the diagonal entry.
std::size_t diagonal_rows(const Tensor<double>& matrix);

}  // namespace eegldm::evalkit
