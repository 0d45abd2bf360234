#include <cstdint>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "eegldm/datakit/datakit.hpp"
#include "eegldm/evalkit/metrics.hpp"
#include "eegldm/nd/container.hpp"
#include "eegldm/pipeline/experiment.hpp"
#include "eegldm/trainer/trainer.hpp"

namespace {

using eegldm::pipeline::ExperimentConfig;

enum Exit : int { kOk = 0, kOther = 1, kConfig = 2, kData = 3, kTraining = 4, kEvaluation = 5 };

int fail(int code, const std::string& what) {
  std::cerr << "error: " << what << "\n";
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"EEG-conditioned latent diffusion: data, training, sampling, and evaluation"};
  app.require_subcommand(1);

  std::string config_path;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  app.add_option("-c,--config", config_path, "Experiment config (JSON); defaults when omitted");
  app.add_option("-o,--output", output_dir, "Override the config's output directory");
  app.add_option("--seed", seed, "Override the master seed");

  auto* init = app.add_subcommand("init-config", "Write the default experiment config");
  std::string init_path = "experiment.json";
  init->add_option("path", init_path, "Destination file");

  app.add_subcommand("synth-data", "Generate the synthetic corpus and its manifest");
  app.add_subcommand("train-vae", "Train the convolutional VAE (analytic: latent statistics only)");
  app.add_subcommand("train-diffusion", "Train the unconditional latent denoiser");

  auto* adapter = app.add_subcommand("train-adapter", "Train an EEG adapter variant");
  bool scratch = false, subject_layer = false;
  std::string subject = "";
  adapter->add_flag("--scratch", scratch, "Train the denoiser jointly from scratch");
  adapter->add_flag("--subject-layer", subject_layer, "Add the per-subject channel mixing layer");
  adapter->add_option("--subject", subject, "Subject id, or 'all' (default: config train_subject)");

  app.add_subcommand("train-baseline", "Train the direct latent regressor");

  auto* sample = app.add_subcommand("sample", "Decode the eval subject's test and OOD chunks");
  std::vector<std::string> sample_models;
  sample->add_option("--model", sample_models, "Model names (default: every trained model)");

  app.add_subcommand("evaluate", "Metric report and comparison table over sampled models");

  auto* matrix = app.add_subcommand("matrix", "Cross-score matrices as CSV and PGM");
  std::vector<std::string> matrix_models;
  matrix->add_option("--model", matrix_models, "Model names (default: every sampled model)");

  CLI11_PARSE(app, argc, argv);

  try {
    ExperimentConfig config;
    if (!config_path.empty()) config = eegldm::pipeline::load_config(config_path);
    if (!output_dir.empty()) config.output_dir = output_dir;
    if (seed) config.seed = *seed;
    config.validate();

    nlohmann::json result;
    if (init->parsed()) {
      eegldm::pipeline::save_config(config, init_path);
      result = {{"written", init_path}, {"config_hash", eegldm::pipeline::config_hash(config)}};
    } else if (app.got_subcommand("synth-data")) {
      result = eegldm::pipeline::run_synth_data(config);
    } else if (app.got_subcommand("train-vae")) {
      result = eegldm::pipeline::run_train_vae(config);
    } else if (app.got_subcommand("train-diffusion")) {
      result = eegldm::pipeline::run_train_diffusion(config);
    } else if (adapter->parsed()) {
      eegldm::pipeline::AdapterOptions o;
      o.scratch = scratch;
      o.subject_layer = subject_layer;
      if (subject == "all") {
        o.subject = std::nullopt;
      } else if (subject.empty()) {
        o.subject = config.train_subject;
      } else {
        try {
          o.subject = std::stoul(subject);
        } catch (const std::exception&) {
          return fail(kConfig, "--subject must be an id or 'all'");
        }
      }
      result = eegldm::pipeline::run_train_adapter(config, o);
    } else if (app.got_subcommand("train-baseline")) {
      result = eegldm::pipeline::run_train_baseline(config);
    } else if (sample->parsed()) {
      result = eegldm::pipeline::run_sample(config, sample_models);
    } else if (app.got_subcommand("evaluate")) {
      result = eegldm::pipeline::run_evaluate(config);
    } else if (matrix->parsed()) {
      result = eegldm::pipeline::run_matrix(config, matrix_models);
    }
    std::cout << result.dump(2) << "\n";
    return kOk;
  } catch (const eegldm::pipeline::ConfigError& e) {
    return fail(kConfig, e.what());
  } catch (const eegldm::pipeline::ArtifactError& e) {
    return fail(kData, e.what());
  } catch (const eegldm::datakit::DataError& e) {
    return fail(kData, e.what());
  } catch (const eegldm::nd::CorruptContainerError& e) {
    return fail(kData, e.what());
  } catch (const eegldm::trainer::TrainingError& e) {
    return fail(kTraining, e.what());
  } catch (const eegldm::pipeline::EvaluationError& e) {
    return fail(kEvaluation, e.what());
  } catch (const eegldm::evalkit::MetricError& e) {
    return fail(kEvaluation, e.what());
  } catch (const std::exception& e) {
    return fail(kOther, e.what());
  }
}
