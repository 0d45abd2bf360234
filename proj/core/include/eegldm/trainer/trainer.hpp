#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/evalkit/metrics.hpp"
#include "eegldm/trainer/models.hpp"

namespace eegldm::trainer {

class TrainingError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class Mode { kVae, kDiffusion, kAdapter, kScratchJoint, kBaseline };

std::string to_string(Mode m);
Mode mode_from_string(const std::string& s);

struct TrainConfig {
  Mode mode = Mode::kAdapter;
  std::size_t steps = 2000;
  std::size_t batch_size = 8;
  double learning_rate = 1e-4;
  std::size_t validation_interval = 250;
  std::uint64_t seed = 1;
  bool subject_layer = false;
  std::size_t validation_ddim_steps = 20;
  double beta_kl = 1e-4;

  // Throws std::invalid_argument for lr <= 0, zero batch, or steps < interval.
  void validate() const;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// One paired example in training form.
struct Sample {
  Tensor<float> x;  // [F_x, S_x]
  Tensor<float> y;  // [F_y, S_y]
  std::size_t subject = 0;
};

struct StepRecord {
  std::size_t step;
  double loss;
};

struct ValidationRecord {
  std::size_t step;
  double score;
};

struct TrainLog {
  std::vector<StepRecord> steps;
  std::vector<ValidationRecord> validations;
  std::size_t best_step = 0;
  double best_score = -2.0;
  std::vector<std::string> checkpoints;
  std::string frozen_digest_before, frozen_digest_after;  // adapter mode only
};

void to_json(nlohmann::json& j, const TrainLog& log);
// One JSON object per line: every step record, then every validation record.
void write_log_lines(const TrainLog& log, const std::filesystem::path& path);

// Mean of the first and last `window` step losses.
double smoothed_loss(const TrainLog& log, bool head, std::size_t window = 50);

// Mean clap_score between embeddings of produced and ground-truth spectrograms.
double proxy_score(const evalkit::Embedder& embedder, const std::vector<Tensor<float>>& produced,
                   const std::vector<Tensor<float>>& truth);

// Produces one spectrogram per validation example with the mode's model; the
// sampler uses validation_ddim_steps DDIM steps.
std::vector<Tensor<float>> produce(const ModelSet& models, Mode mode,
                                   const std::vector<Sample>& examples, std::size_t ddim_steps,
                                   std::uint64_t seed);

double validate(const ModelSet& models, Mode mode, const std::vector<Sample>& validation,
                const evalkit::Embedder& embedder, std::size_t ddim_steps, std::uint64_t seed);

// Prefixes updated by each mode.
std::vector<std::string> trainable_prefixes(const ModelSet& models, Mode mode);

// Runs the mode's loop on `train`, validating every validation_interval steps
// and at the end. The best-scoring parameters of the trainable prefixes are
// restored into the tree on return; when checkpoint_dir is set, best.eegt and
// final.eegt are written there. The adapter must already be attached for the
// adapter modes, the baseline for baseline mode. Non-finite loss throws.
TrainLog train(ModelSet& models, const TrainConfig& config, const std::vector<Sample>& train,
               const std::vector<Sample>& validation, const evalkit::Embedder& embedder,
               const std::optional<std::filesystem::path>& checkpoint_dir = std::nullopt);

struct LatentStats {
  std::vector<double> mean, std;
};

// Per-channel mean and population std of the raw VAE posterior means of the
// training spectrograms. Throws TrainingError for a constant channel.
LatentStats latent_statistics(const ModelSet& models, const std::vector<Sample>& train);

}  // namespace eegldm::trainer
