#include <cmath>
#include <numbers>
#include <random>

#include "eegldm/datakit/datakit.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::datakit {

void to_json(nlohmann::json& j, const SynthConfig& c) {
  j = {{"tracks", c.tracks},
       {"subjects", c.subjects},
       {"duration_seconds", c.duration_seconds},
       {"eeg_channels", c.eeg_channels},
       {"artifact_channels", c.artifact_channels},
       {"eeg_rate", c.eeg_rate},
       {"spec_bins", c.spec_bins},
       {"spec_fps", c.spec_fps},
       {"bands", c.bands},
       {"noise_std", c.noise_std},
       {"dc_offset_std", c.dc_offset_std},
       {"texture", c.texture},
       {"section_min_seconds", c.section_min_seconds},
       {"section_max_seconds", c.section_max_seconds},
       {"identity_lift", c.identity_lift},
       {"identity_mixing", c.identity_mixing}};
}

void from_json(const nlohmann::json& j, SynthConfig& c) {
  j.at("tracks").get_to(c.tracks);
  j.at("subjects").get_to(c.subjects);
  j.at("duration_seconds").get_to(c.duration_seconds);
  j.at("eeg_channels").get_to(c.eeg_channels);
  j.at("artifact_channels").get_to(c.artifact_channels);
  j.at("eeg_rate").get_to(c.eeg_rate);
  j.at("spec_bins").get_to(c.spec_bins);
  j.at("spec_fps").get_to(c.spec_fps);
  j.at("bands").get_to(c.bands);
  j.at("noise_std").get_to(c.noise_std);
  j.at("dc_offset_std").get_to(c.dc_offset_std);
  j.at("texture").get_to(c.texture);
  j.at("section_min_seconds").get_to(c.section_min_seconds);
  j.at("section_max_seconds").get_to(c.section_max_seconds);
  j.at("identity_lift").get_to(c.identity_lift);
  j.at("identity_mixing").get_to(c.identity_mixing);
}

namespace {

// Seed domains so track, subject and recording streams never share a sequence.
enum : std::uint64_t { kTrackStream = 1, kSubjectStream = 2, kRecordingStream = 3, kLiftStream = 4 };

void validate(const SynthConfig& c) {
  const auto fail = [](const std::string& m) { throw DataError("synth config: " + m); };
  if (c.tracks == 0 || c.subjects == 0) fail("need at least one track and one subject");
  if (!(c.duration_seconds > 0) || !(c.eeg_rate > 0) || !(c.spec_fps > 0)) {
    fail("duration and rates must be positive");
  }
  if (c.eeg_channels == 0 || c.bands == 0 || c.spec_bins < c.bands) {
    fail("need eeg_channels >= 1 and spec_bins >= bands >= 1");
  }
  if (c.identity_lift && c.eeg_channels < c.bands) fail("identity lift needs eeg_channels >= bands");
  if (!(c.section_min_seconds > 0) || c.section_max_seconds < c.section_min_seconds) {
    fail("section length range is empty");
  }
  if (c.noise_std < 0 || c.dc_offset_std < 0 || c.texture < 0) fail("noise levels must be >= 0");
}

Tensor<float> make_envelopes(const SynthConfig& c, std::size_t frames, nd::Rng& rng) {
  std::normal_distribution<double> normal;
  std::uniform_real_distribution<double> rate(0.5, 3.0), depth(0.3, 0.8),
      phase(0.0, 2 * std::numbers::pi), section(c.section_min_seconds, c.section_max_seconds);
  const std::size_t B = c.bands;
  std::vector<double> profile(B), r(B), m(B), phi(B);
  for (std::size_t b = 0; b < B; ++b) {
    profile[b] = 0.5 * normal(rng);
    r[b] = rate(rng);
    m[b] = depth(rng);
    phi[b] = phase(rng);
  }
  Tensor<float> env(Shape{B, frames});
  std::vector<double> level(B);
  std::size_t next_change = 0;
  for (std::size_t f = 0; f < frames; ++f) {
    if (f == next_change) {
      for (std::size_t b = 0; b < B; ++b) level[b] = std::exp(profile[b] + 0.5 * normal(rng));
      next_change = f + std::max<std::size_t>(1, std::llround(section(rng) * c.spec_fps));
    }
    const double t = static_cast<double>(f) / c.spec_fps;
    for (std::size_t b = 0; b < B; ++b) {
      const double mod = 1.0 + m[b] * std::sin(2 * std::numbers::pi * r[b] * t + phi[b]);
      env[b * frames + f] = static_cast<float>(level[b] * mod);
    }
  }
  return env;
}

Tensor<float> render_spectrogram(const SynthConfig& c, const Tensor<float>& env, nd::Rng& rng) {
  constexpr std::size_t kBlockBins = 4, kBlockFrames = 2;
  constexpr double kGain = 8.0;
  const std::size_t F = c.spec_bins, B = c.bands, frames = env.dim(1);
  const double width = static_cast<double>(F) / (2.0 * static_cast<double>(B));
  std::vector<double> bump(B * F);
  for (std::size_t b = 0; b < B; ++b) {
    const double center = (static_cast<double>(b) + 0.5) * static_cast<double>(F) / B;
    for (std::size_t f = 0; f < F; ++f) {
      const double d = (static_cast<double>(f) - center) / width;
      bump[b * F + f] = kGain * std::exp(-0.5 * d * d);
    }
  }
  const std::size_t rows = (F + kBlockBins - 1) / kBlockBins;
  const std::size_t cols = (frames + kBlockFrames - 1) / kBlockFrames;
  const auto tex = nd::randn<double>({rows, cols}, rng);
  Tensor<float> x(Shape{F, frames});
  for (std::size_t f = 0; f < F; ++f) {
    for (std::size_t t = 0; t < frames; ++t) {
      double s = 0;
      for (std::size_t b = 0; b < B; ++b) s += env[b * frames + t] * bump[b * F + f];
      const double g = std::max(0.1, 1.0 + c.texture * tex[(f / kBlockBins) * cols + t / kBlockFrames]);
      x[f * frames + t] = static_cast<float>(std::log1p(s * g));
    }
  }
  return x;
}

// Linear interpolation from frame times f / fps to sample times i / rate.
std::vector<double> upsample_row(const float* row, std::size_t frames, std::size_t steps,
                                 double fps, double rate) {
  std::vector<double> out(steps);
  for (std::size_t i = 0; i < steps; ++i) {
    const double p = static_cast<double>(i) * fps / rate;
    const auto j = std::min(static_cast<std::size_t>(p), frames - 1);
    const std::size_t k = std::min(j + 1, frames - 1);
    const double a = row[j], b = row[k];
    out[i] = a + (b - a) * (p - static_cast<double>(j));
  }
  return out;
}

}  // namespace

SynthCorpus synth_generate(const SynthConfig& config, std::uint64_t seed) {
  validate(config);
  const auto frames = static_cast<std::size_t>(std::llround(config.duration_seconds * config.spec_fps));
  const auto steps = static_cast<std::size_t>(std::llround(config.duration_seconds * config.eeg_rate));
  const std::size_t B = config.bands, C = config.eeg_channels;

  SynthCorpus corpus;
  corpus.config = config;
  corpus.seed = seed;

  std::vector<double> lift(C * B, 0.0);
  {
    nd::Rng rng(nd::derive_seed(seed, {kLiftStream}));
    std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(B)));
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t b = 0; b < B; ++b)
        lift[ch * B + b] = config.identity_lift ? (ch == b ? 1.0 : 0.0) : normal(rng);
  }
  std::vector<std::vector<double>> mixing(config.subjects, std::vector<double>(C * C, 0.0));
  for (std::size_t s = 0; s < config.subjects; ++s) {
    nd::Rng rng(nd::derive_seed(seed, {kSubjectStream, s}));
    std::normal_distribution<double> normal(0.0, 0.3 / std::sqrt(static_cast<double>(C)));
    for (std::size_t i = 0; i < C; ++i)
      for (std::size_t j = 0; j < C; ++j)
        mixing[s][i * C + j] = (i == j ? 1.0 : 0.0) + (config.identity_mixing ? 0.0 : normal(rng));
  }

  for (std::size_t t = 0; t < config.tracks; ++t) {
    nd::Rng rng(nd::derive_seed(seed, {kTrackStream, t}));
    corpus.envelopes.push_back(make_envelopes(config, frames, rng));
    corpus.spectrograms.push_back(render_spectrogram(config, corpus.envelopes.back(), rng));

    const Tensor<float>& env = corpus.envelopes.back();
    std::vector<std::vector<double>> up(B);
    for (std::size_t b = 0; b < B; ++b) {
      up[b] = upsample_row(env.data() + b * frames, frames, steps, config.spec_fps, config.eeg_rate);
    }
    std::vector<double> lifted(C * steps, 0.0);
    for (std::size_t ch = 0; ch < C; ++ch)
      for (std::size_t b = 0; b < B; ++b) {
        const double u = lift[ch * B + b];
        if (u == 0.0) continue;
        for (std::size_t i = 0; i < steps; ++i) lifted[ch * steps + i] += u * up[b][i];
      }

    for (std::size_t s = 0; s < config.subjects; ++s) {
      nd::Rng rec_rng(nd::derive_seed(seed, {kRecordingStream, t, s}));
      std::normal_distribution<double> normal;
      RawRecording rec;
      rec.rate = config.eeg_rate;
      rec.subject = s;
      rec.track = t;
      rec.data = Tensor<float>(Shape{C + config.artifact_channels, steps});
      for (std::size_t ch = 0; ch < C; ++ch) {
        const double dc = config.dc_offset_std * normal(rec_rng);
        for (std::size_t i = 0; i < steps; ++i) {
          double v = 0;
          for (std::size_t d = 0; d < C; ++d) {
            const double w = mixing[s][ch * C + d];
            if (w != 0.0) v += w * lifted[d * steps + i];
          }
          const double noise = config.noise_std > 0 ? config.noise_std * normal(rec_rng) : 0.0;
          rec.data[ch * steps + i] = static_cast<float>(v + noise + dc);
        }
      }
      for (std::size_t a = 0; a < config.artifact_channels; ++a)
        for (std::size_t i = 0; i < steps; ++i)
          rec.data[(C + a) * steps + i] = static_cast<float>(20.0 * normal(rec_rng));
      corpus.recordings.push_back(std::move(rec));
    }
  }
  return corpus;
}

void write_tensors(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, Tensor<float>>>& tensors,
                   const nlohmann::json& meta) {
  nd::TensorContainer c;
  for (const auto& [name, t] : tensors) c.put(name, t);
  c.meta() = meta;
  c.write(path);
}

nd::TensorContainer read_tensors(const std::filesystem::path& path) {
  return nd::TensorContainer::read(path);
}

void save_corpus(const SynthCorpus& corpus, const std::filesystem::path& path) {
  nd::TensorContainer c;
  auto recs = nlohmann::json::array();
  for (std::size_t t = 0; t < corpus.spectrograms.size(); ++t) {
    c.put("envelope/" + std::to_string(t), corpus.envelopes[t]);
    c.put("spectrogram/" + std::to_string(t), corpus.spectrograms[t]);
  }
  for (std::size_t i = 0; i < corpus.recordings.size(); ++i) {
    const auto& r = corpus.recordings[i];
    c.put("eeg/" + std::to_string(i), r.data);
    recs.push_back({{"track", r.track}, {"subject", r.subject}, {"rate", r.rate}});
  }
  c.meta() = {{"kind", "synthetic-corpus"},
              {"config", corpus.config},
              {"seed", corpus.seed},
              {"recordings", std::move(recs)}};
  c.write(path);
}

SynthCorpus load_corpus(const std::filesystem::path& path) {
  const auto c = nd::TensorContainer::read(path);
  const auto& meta = c.meta();
  if (meta.value("kind", "") != "synthetic-corpus") {
    throw nd::CorruptContainerError(path.string() + " does not hold a synthetic corpus");
  }
  SynthCorpus corpus;
  try {
    meta.at("config").get_to(corpus.config);
    meta.at("seed").get_to(corpus.seed);
    for (std::size_t t = 0; t < corpus.config.tracks; ++t) {
      corpus.envelopes.push_back(c.get<float>("envelope/" + std::to_string(t)));
      corpus.spectrograms.push_back(c.get<float>("spectrogram/" + std::to_string(t)));
    }
    const auto& recs = meta.at("recordings");
    for (std::size_t i = 0; i < recs.size(); ++i) {
      RawRecording r;
      r.data = c.get<float>("eeg/" + std::to_string(i));
      recs[i].at("track").get_to(r.track);
      recs[i].at("subject").get_to(r.subject);
      recs[i].at("rate").get_to(r.rate);
      corpus.recordings.push_back(std::move(r));
    }
  } catch (const nlohmann::json::exception& e) {
    throw nd::CorruptContainerError(std::string("corpus manifest: ") + e.what());
  } catch (const std::out_of_range& e) {
    throw nd::CorruptContainerError(std::string("corpus entries: ") + e.what());
  }
  return corpus;
}

}  // namespace eegldm::datakit
