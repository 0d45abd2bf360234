#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/nd/container.hpp"
#include "eegldm/nd/tensor.hpp"

namespace eegldm::datakit {

using nd::Shape;
using nd::Tensor;

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct RawRecording {
  Tensor<float> data;  // [channels, steps]
  double rate = 0;     // Hz
  std::size_t subject = 0;
  std::size_t track = 0;
};

struct PreprocessConfig {
  std::vector<std::size_t> excluded_channels;
  std::size_t baseline_steps = 1000;
  double clamp_std = 20.0;
  double quantile_low = 0.25;
  double quantile_high = 0.75;
};

void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);

// Linear interpolation between order statistics (rank q * (n - 1)).
double quantile(std::vector<double> values, double q);

// Each step works per channel on a [channels, steps] matrix.
Tensor<float> exclude_channels(const Tensor<float>& data, const std::vector<std::size_t>& excluded);
Tensor<float> center_on_baseline(const Tensor<float>& data, std::size_t baseline_steps);
// (v - median) / (q_high - q_low); a zero spread divides by 1.
Tensor<float> robust_scale(const Tensor<float>& data, double q_low, double q_high);

// Per-channel symmetric bounds k * std (population std over the whole signal).
std::vector<double> clamp_bounds(const Tensor<float>& data, double k);
Tensor<float> clamp_to(const Tensor<float>& data, const std::vector<double>& bounds);
Tensor<float> clamp_std(const Tensor<float>& data, double k);

// Recording-level steps: exclusion, then baseline centering.
Tensor<float> prepare_recording(const RawRecording& rec, const PreprocessConfig& cfg);
// Chunk-level steps: robust scaling, then std clamping.
Tensor<float> scale_and_clamp(const Tensor<float>& chunk, const PreprocessConfig& cfg);
// All four steps over one signal.
Tensor<float> preprocess(const RawRecording& rec, const PreprocessConfig& cfg);

struct PairedExample {
  Tensor<float> y;  // [F_y, S_y]
  Tensor<float> x;  // [F_x, S_x]
  std::size_t subject = 0;
  std::size_t track = 0;
  std::size_t chunk = 0;
};

struct ChunkSpec {
  double chunk_seconds = 3.5;
  double eeg_rate = 160.0;
  double spec_fps = 16.0;
  std::size_t eeg_steps() const;   // round(chunk_seconds * eeg_rate)
  std::size_t spec_frames() const; // round(chunk_seconds * spec_fps)
};

void to_json(nlohmann::json& j, const ChunkSpec& c);
void from_json(const nlohmann::json& j, ChunkSpec& c);

// Consecutive non-overlapping chunks; the trailing remainder is dropped. Throws
// DataError when the two stream durations differ by a chunk or more.
std::vector<PairedExample> chunk_align(const Tensor<float>& eeg, const Tensor<float>& spectrogram,
                                       const ChunkSpec& spec, std::size_t subject,
                                       std::size_t track);

struct SplitRatios {
  double train = 0.8;
  double validation = 0.1;
  double test = 0.1;
};

// Indices into the example list handed to split_dataset.
struct DatasetSplit {
  std::vector<std::size_t> train, validation, test, ood;
};

// Per (track, subject) recording, boundaries floor(r_train n) and
// floor((r_train + r_val) n) on the chunk index. OOD tracks go to `ood` only.
DatasetSplit split_dataset(const std::vector<PairedExample>& examples, const SplitRatios& ratios,
                           const std::vector<std::size_t>& ood_tracks);

struct SynthConfig {
  std::size_t tracks = 8;
  std::size_t subjects = 3;
  double duration_seconds = 120.0;
  std::size_t eeg_channels = 16;    // F_y after exclusion
  std::size_t artifact_channels = 2;  // appended, meant to be excluded
  double eeg_rate = 160.0;
  std::size_t spec_bins = 64;
  double spec_fps = 16.0;
  std::size_t bands = 8;
  double noise_std = 0.5;          // sigma_y
  double dc_offset_std = 5.0;      // per-channel offset removed by baseline centering
  double texture = 0.35;           // block texture noise multiplier in the spectrogram
  double section_min_seconds = 4.0;
  double section_max_seconds = 10.0;
  bool identity_lift = false;      // U = [I; 0] instead of a random lift
  bool identity_mixing = false;    // W_subject = I
};

void to_json(nlohmann::json& j, const SynthConfig& c);
void from_json(const nlohmann::json& j, SynthConfig& c);

struct SynthCorpus {
  SynthConfig config;
  std::uint64_t seed = 0;
  std::vector<Tensor<float>> envelopes;     // per track [bands, frames]
  std::vector<Tensor<float>> spectrograms;  // per track [spec_bins, frames]
  std::vector<RawRecording> recordings;     // track-major, subject-minor
};

// Each track is a sequence of sections; every section fixes band levels that,
// with track-specific band rhythms, form the band envelopes. The spectrogram is
// log1p of the envelopes rendered through fixed frequency bumps times block
// texture noise. The EEG is W_subject U upsample(envelopes) + sigma_y noise plus
// a per-channel offset, followed by artifact channels.
SynthCorpus synth_generate(const SynthConfig& config, std::uint64_t seed);

// Tensor container round trip for a corpus.
void save_corpus(const SynthCorpus& corpus, const std::filesystem::path& path);
SynthCorpus load_corpus(const std::filesystem::path& path);

// Layout-only container for any named tensors.
void write_tensors(const std::filesystem::path& path,
                   const std::vector<std::pair<std::string, Tensor<float>>>& tensors,
                   const nlohmann::json& meta = nlohmann::json::object());
nd::TensorContainer read_tensors(const std::filesystem::path& path);

struct DatasetConfig {
  PreprocessConfig preprocess;
  ChunkSpec chunks;
  SplitRatios ratios;
  std::vector<std::size_t> ood_tracks = {0};
};

void to_json(nlohmann::json& j, const DatasetConfig& c);
void from_json(const nlohmann::json& j, DatasetConfig& c);

struct Dataset {
  std::vector<PairedExample> examples;
  DatasetSplit split;
};

// Excludes the synthetic artifact channels and matches the corpus rates.
DatasetConfig default_dataset_config(const SynthConfig& synth);

// prepare_recording, chunk_align, scale_and_clamp per chunk, then split_dataset.
Dataset build_dataset(const SynthCorpus& corpus, const DatasetConfig& config);

// Human-readable inventory: per-example track/subject/chunk/split plus the config echo.
nlohmann::json dataset_manifest(const Dataset& dataset, const DatasetConfig& config);

}  // namespace eegldm::datakit
