#include "eegldm/evalkit/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numeric>

#include "eegldm/nd/rng.hpp"

namespace eegldm::evalkit {

void to_json(nlohmann::json& j, const EmbedderConfig& c) {
  j = {{"bands", c.bands},         {"global_dim", c.global_dim}, {"frame_dim", c.frame_dim},
       {"pooling", c.pooling},     {"spec_fps", c.spec_fps},     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, EmbedderConfig& c) {
  j.at("bands").get_to(c.bands);
  j.at("global_dim").get_to(c.global_dim);
  j.at("frame_dim").get_to(c.frame_dim);
  j.at("pooling").get_to(c.pooling);
  j.at("spec_fps").get_to(c.spec_fps);
  j.at("seed").get_to(c.seed);
}

namespace {

using Matrix = Eigen::MatrixXd;

Matrix to_eigen(const Tensor<double>& t) {
  Matrix m(t.dim(0), t.dim(1));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m(i, j) = t[i * t.dim(1) + j];
  return m;
}

Tensor<double> from_eigen(const Matrix& m) {
  Tensor<double> t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j) t[i * m.cols() + j] = m(i, j);
  return t;
}

Matrix sqrtm_sym(const Matrix& a) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(0.5 * (a + a.transpose()));
  if (es.info() != Eigen::Success) throw MetricError("sqrtm: eigendecomposition failed");
  const Eigen::VectorXd root = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * root.asDiagonal() * es.eigenvectors().transpose();
}

void require_unit(std::span<const double> e, const char* what) {
  double n = 0;
  for (double v : e) n += v * v;
  if (std::abs(std::sqrt(n) - 1.0) > 1e-4) {
    throw MetricError(std::string(what) + ": embedding norm " + std::to_string(std::sqrt(n)) +
                      " is not 1");
  }
}

}  // namespace

Embedder::Embedder(EmbedderConfig config, std::size_t freq_bins)
    : config_(config), freq_bins_(freq_bins), centering_(2 * config.bands, 0.0) {
  if (config_.bands == 0 || config_.bands > freq_bins_) {
    throw MetricError("embedder: need 1 <= bands <= frequency bins");
  }
  if (config_.global_dim == 0 || config_.frame_dim == 0 || config_.pooling == 0) {
    throw MetricError("embedder: dimensions and pooling width must be positive");
  }
  nd::Rng rng(config_.seed);
  global_proj_ = nd::randn<double>({config_.global_dim, 2 * config_.bands}, rng,
                                   1.0 / std::sqrt(2.0 * config_.bands));
  frame_proj_ = nd::randn<double>({config_.frame_dim, config_.bands}, rng,
                                  1.0 / std::sqrt(static_cast<double>(config_.bands)));
}

Tensor<double> Embedder::band_energies(const Tensor<float>& x) const {
  if (x.rank() != 2 || x.dim(0) != freq_bins_ || x.dim(1) == 0) {
    throw nd::ShapeError("embedder: expected [" + std::to_string(freq_bins_) + ", S], got " +
                         nd::shape_to_string(x.shape()));
  }
  const std::size_t B = config_.bands, S = x.dim(1);
  Tensor<double> e(Shape{B, S});
  for (std::size_t b = 0; b < B; ++b) {
    const std::size_t lo = b * freq_bins_ / B, hi = (b + 1) * freq_bins_ / B;
    for (std::size_t t = 0; t < S; ++t) {
      double sum = 0;
      for (std::size_t f = lo; f < hi; ++f) sum += std::expm1(std::max(0.0f, x[f * S + t]));
      e[b * S + t] = std::log1p(sum / static_cast<double>(hi - lo));
    }
  }
  return e;
}

std::vector<double> Embedder::global_features(const Tensor<float>& x) const {
  const auto e = band_energies(x);
  const std::size_t B = config_.bands, S = x.dim(1);
  std::vector<double> f(2 * B);
  for (std::size_t b = 0; b < B; ++b) {
    double mean = 0;
    for (std::size_t t = 0; t < S; ++t) mean += e[b * S + t];
    mean /= static_cast<double>(S);
    double var = 0;
    for (std::size_t t = 0; t < S; ++t) var += (e[b * S + t] - mean) * (e[b * S + t] - mean);
    f[b] = mean;
    f[B + b] = std::sqrt(var / static_cast<double>(S));
  }
  return f;
}

Embedding Embedder::global(const Tensor<float>& x) const {
  Embedding out(config_.global_dim, 0.0);
  const auto f = global_features(x);
  const bool all_zero =
      std::all_of(x.storage().begin(), x.storage().end(), [](float v) { return v == 0.0f; });
  double norm = 0;
  if (!all_zero) {
    const std::size_t K = f.size();
    for (std::size_t d = 0; d < config_.global_dim; ++d) {
      double s = 0;
      for (std::size_t k = 0; k < K; ++k) s += global_proj_[d * K + k] * (f[k] - centering_[k]);
      out[d] = s;
      norm += s * s;
    }
    norm = std::sqrt(norm);
  }
  if (all_zero || norm < 1e-12) {
    std::fill(out.begin(), out.end(), 0.0);
    out[0] = 1.0;
    return out;
  }
  for (auto& v : out) v /= norm;
  return out;
}

FrameEmbeddingSeq Embedder::frames(const Tensor<float>& x) const {
  const auto e = band_energies(x);
  const std::size_t B = config_.bands, S = x.dim(1), p = config_.pooling;
  const std::size_t I = S / p;
  if (I == 0) throw MetricError("embedder: fewer spectrogram frames than the pooling width");
  FrameEmbeddingSeq out{Tensor<double>(Shape{I, config_.frame_dim}), config_.spec_fps / p};
  std::vector<double> pooled(B);
  for (std::size_t k = 0; k < I; ++k) {
    for (std::size_t b = 0; b < B; ++b) {
      double s = 0;
      for (std::size_t t = k * p; t < (k + 1) * p; ++t) s += e[b * S + t];
      pooled[b] = s / static_cast<double>(p);
    }
    for (std::size_t d = 0; d < config_.frame_dim; ++d) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) s += frame_proj_[d * B + b] * pooled[b];
      out.frames[k * config_.frame_dim + d] = s;
    }
  }
  return out;
}

void Embedder::set_centering(std::vector<double> c) {
  if (c.size() != 2 * config_.bands) throw MetricError("embedder: centering has wrong length");
  centering_ = std::move(c);
}

void Embedder::fit_centering(const std::vector<Tensor<float>>& corpus) {
  if (corpus.empty()) throw MetricError("embedder: cannot center on an empty corpus");
  std::vector<double> c(2 * config_.bands, 0.0);
  for (const auto& x : corpus) {
    const auto f = global_features(x);
    for (std::size_t k = 0; k < c.size(); ++k) c[k] += f[k];
  }
  for (auto& v : c) v /= static_cast<double>(corpus.size());
  centering_ = std::move(c);
}

GaussianStats fit_gaussian(const std::vector<Embedding>& samples, double ridge) {
  if (samples.size() < 2) throw MetricError("fit_gaussian: need at least 2 samples");
  const std::size_t n = samples.size(), d = samples[0].size();
  for (const auto& s : samples) {
    if (s.size() != d) throw MetricError("fit_gaussian: samples differ in dimension");
  }
  GaussianStats g;
  g.count = n;
  g.mean.assign(d, 0.0);
  for (const auto& s : samples)
    for (std::size_t k = 0; k < d; ++k) g.mean[k] += s[k];
  for (auto& v : g.mean) v /= static_cast<double>(n);
  g.cov = Tensor<double>(Shape{d, d});
  const bool diagonal = n < d;
  for (const auto& s : samples) {
    for (std::size_t i = 0; i < d; ++i) {
      const double a = s[i] - g.mean[i];
      if (diagonal) {
        g.cov[i * d + i] += a * a;
        continue;
      }
      for (std::size_t j = 0; j < d; ++j) g.cov[i * d + j] += a * (s[j] - g.mean[j]);
    }
  }
  for (auto& v : g.cov.values()) v /= static_cast<double>(n - 1);
  for (std::size_t i = 0; i < d; ++i) g.cov[i * d + i] += ridge;
  return g;
}

Tensor<double> sqrtm_psd(const Tensor<double>& sigma) {
  if (sigma.rank() != 2 || sigma.dim(0) != sigma.dim(1)) {
    throw nd::ShapeError("sqrtm: expected a square matrix, got " +
                         nd::shape_to_string(sigma.shape()));
  }
  const Matrix a = to_eigen(sigma);
  const double scale = std::max(1.0, a.cwiseAbs().maxCoeff());
  if ((a - a.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
    throw MetricError("sqrtm: matrix is not symmetric");
  }
  return from_eigen(sqrtm_sym(a));
}

double frechet_distance(const GaussianStats& a, const GaussianStats& b) {
  if (a.dim() != b.dim()) throw MetricError("fad: embedding dimensions differ");
  const Eigen::Map<const Eigen::VectorXd> ma(a.mean.data(), a.dim()), mb(b.mean.data(), b.dim());
  const Matrix s1 = to_eigen(a.cov), s2 = to_eigen(b.cov);
  const Matrix r1 = sqrtm_sym(s1);
  const Matrix cross = sqrtm_sym(r1 * s2 * r1);
  const double v = (ma - mb).squaredNorm() + s1.trace() + s2.trace() - 2.0 * cross.trace();
  return std::max(0.0, v);
}

double fad(const std::vector<Embedding>& reference, const std::vector<Embedding>& generated,
           double ridge) {
  return frechet_distance(fit_gaussian(reference, ridge), fit_gaussian(generated, ridge));
}

double pearson(std::span<const double> e, std::span<const double> f) {
  if (e.size() != f.size() || e.size() < 2) {
    throw MetricError("pearson: need two vectors of equal length >= 2");
  }
  const double n = static_cast<double>(e.size());
  const double me = std::accumulate(e.begin(), e.end(), 0.0) / n;
  const double mf = std::accumulate(f.begin(), f.end(), 0.0) / n;
  double sef = 0, see = 0, sff = 0;
  for (std::size_t i = 0; i < e.size(); ++i) {
    const double a = e[i] - me, b = f[i] - mf;
    sef += a * b;
    see += a * a;
    sff += b * b;
  }
  if (see == 0 && sff == 0) throw MetricError("pearson: both inputs are constant");
  if (see == 0 || sff == 0) return 0.0;
  return std::clamp(sef / std::sqrt(see * sff), -1.0, 1.0);
}

double clap_score(std::span<const double> e, std::span<const double> f) {
  if (e.size() != f.size()) throw MetricError("clap_score: embedding lengths differ");
  require_unit(e, "clap_score");
  require_unit(f, "clap_score");
  return std::clamp(std::inner_product(e.begin(), e.end(), f.begin(), 0.0), -1.0, 1.0);
}

double mse_frames(const FrameEmbeddingSeq& e, const FrameEmbeddingSeq& f) {
  if (e.frames.shape() != f.frames.shape()) throw MetricError("mse_frames: shapes differ");
  double s = 0;
  for (std::size_t i = 0; i < e.frames.size(); ++i) {
    const double d = e.frames[i] - f.frames[i];
    s += d * d;
  }
  return s / static_cast<double>(e.count());
}

double pearson_frames(const FrameEmbeddingSeq& e, const FrameEmbeddingSeq& f) {
  if (e.frames.shape() != f.frames.shape()) throw MetricError("pearson_frames: shapes differ");
  return pearson(e.frames.values(), f.frames.values());
}

void to_json(nlohmann::json& j, const SignificanceResult& r) {
  j = {{"observed", r.observed},
       {"resamples", r.resamples},
       {"p_value", r.p_value},
       {"direction", r.direction == Direction::kHigherBetter ? "higher-better" : "lower-better"},
       {"seed", r.seed}};
}

SignificanceResult bootstrap_p(const PairScore& score, std::size_t pairs, std::size_t resamples,
                               std::uint64_t seed, Direction direction) {
  if (pairs < 2) throw MetricError("bootstrap: need at least 2 pairs");
  if (resamples == 0) throw MetricError("bootstrap: need at least one resample");
  std::vector<double> table(pairs * pairs);
  for (std::size_t d = 0; d < pairs; ++d) {
    for (std::size_t g = 0; g < pairs; ++g) {
      const double v = score(d, g);
      if (!std::isfinite(v)) throw MetricError("bootstrap: metric is not finite on a pairing");
      table[d * pairs + g] = v;
    }
  }
  SignificanceResult r;
  r.resamples = resamples;
  r.direction = direction;
  r.seed = seed;
  for (std::size_t i = 0; i < pairs; ++i) r.observed += table[i * pairs + i];
  r.observed /= static_cast<double>(pairs);
  // Ties within rounding of the observed mean count as at least as extreme.
  const double slack = 1e-12 * std::max(1.0, std::abs(r.observed));
  nd::Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, pairs - 1);
  std::size_t extreme = 0;
  for (std::size_t k = 0; k < resamples; ++k) {
    double m = 0;
    for (std::size_t g = 0; g < pairs; ++g) m += table[pick(rng) * pairs + g];
    m /= static_cast<double>(pairs);
    const bool hit = direction == Direction::kHigherBetter ? m >= r.observed - slack
                                                           : m <= r.observed + slack;
    extreme += hit;
  }
  r.p_value = static_cast<double>(1 + extreme) / static_cast<double>(resamples + 1);
  return r;
}

Tensor<double> cross_score_matrix(const std::vector<std::vector<Embedding>>& decoded,
                                  const std::vector<std::vector<Embedding>>& truth,
                                  const EmbeddingScore& score) {
  if (decoded.empty() || truth.empty()) throw MetricError("cross matrix: no tracks");
  Tensor<double> m(Shape{decoded.size(), truth.size()});
  for (std::size_t i = 0; i < decoded.size(); ++i) {
    if (decoded[i].empty()) throw MetricError("cross matrix: decoded track " + std::to_string(i) + " is empty");
    for (std::size_t j = 0; j < truth.size(); ++j) {
      if (truth[j].empty()) throw MetricError("cross matrix: truth track " + std::to_string(j) + " is empty");
      double s = 0;
      for (const auto& a : decoded[i])
        for (const auto& b : truth[j]) s += score(a, b);
      m[i * truth.size() + j] = s / static_cast<double>(decoded[i].size() * truth[j].size());
    }
  }
  return m;
}

std::size_t diagonal_rows(const Tensor<double>& matrix) {
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < rows && i < cols; ++i) {
    const double diag = matrix[i * cols + i];
    bool best = true;
    for (std::size_t j = 0; j < cols; ++j) {
      if (j != i && matrix[i * cols + j] >= diag) best = false;
    }
    hits += best;
  }
  return hits;
}

}  // namespace eegldm::evalkit
