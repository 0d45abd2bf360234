#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "eegldm/datakit/datakit.hpp"
#include "eegldm/evalkit/report.hpp"
#include "eegldm/trainer/trainer.hpp"

namespace eegldm::pipeline {

// Invalid or inconsistent configuration, including a config hash that differs
// from the one recorded by an upstream stage.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A required upstream artifact is missing or its bytes no longer match the
// hash recorded when it was produced.
class ArtifactError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class EvaluationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ExperimentConfig {
  std::uint64_t seed = 2024;
  std::filesystem::path output_dir = "runs/desk";
  datakit::SynthConfig synth;
  datakit::DatasetConfig dataset = datakit::default_dataset_config(datakit::SynthConfig{});
  trainer::ModelConfig model;
  trainer::TrainConfig vae_training;
  trainer::TrainConfig diffusion_training;
  trainer::TrainConfig adapter_training;
  trainer::TrainConfig baseline_training;
  std::size_t train_subject = 0;  // per-subject variants
  std::size_t eval_subject = 0;   // test and OOD chunks are always this subject's
  std::size_t sampler_steps = 50;
  evalkit::EmbedderConfig embedder;
  evalkit::EvalConfig evaluation;

  ExperimentConfig();
  // Throws ConfigError.
  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

ExperimentConfig load_config(const std::filesystem::path& path);
void save_config(const ExperimentConfig& config, const std::filesystem::path& path);

// SHA-256 of the canonical JSON of everything except output_dir.
std::string config_hash(const ExperimentConfig& config);

std::string file_sha256(const std::filesystem::path& path);

// Which subjects an adapter variant trains on, and how it is trained.
struct AdapterOptions {
  bool scratch = false;
  bool subject_layer = false;
  std::optional<std::size_t> subject = 0;  // nullopt: every subject

  // adapter-frozen | scratch-joint, then "-all" or nothing, then "-sl" with the subject layer.
  std::string variant() const;
};

// Model names understood by sample and matrix besides adapter variants.
inline const std::string kUnconditional = "unconditional";
inline const std::string kBaselineModel = "baseline-regressor";

// Each stage writes into its own directory below output_dir and records a
// stage.json with the config hash, the seed, the config echo, and SHA-256
// hashes of its inputs and outputs. Every stage returns a short summary.
nlohmann::json run_synth_data(const ExperimentConfig& config);
nlohmann::json run_train_vae(const ExperimentConfig& config);
nlohmann::json run_train_diffusion(const ExperimentConfig& config);
nlohmann::json run_train_adapter(const ExperimentConfig& config, const AdapterOptions& options);
nlohmann::json run_train_baseline(const ExperimentConfig& config);
// Decodes the eval subject's test and OOD chunks with each named model; an
// empty list means every model trained so far.
nlohmann::json run_sample(const ExperimentConfig& config, std::vector<std::string> models);
// Metric report and comparison table over every sampled model.
nlohmann::json run_evaluate(const ExperimentConfig& config);
// Decoded-vs-ground-truth cross-score matrices over the non-OOD test tracks.
nlohmann::json run_matrix(const ExperimentConfig& config, std::vector<std::string> models);

// Models with a finished training stage, in table order.
std::vector<std::string> trained_models(const ExperimentConfig& config);

}  // namespace eegldm::pipeline
