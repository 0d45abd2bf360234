#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>

#include "eegldm/pipeline/experiment.hpp"

using namespace eegldm;
using namespace eegldm::pipeline;
namespace fs = std::filesystem;

namespace {

ExperimentConfig tiny(const std::string& dir) {
  ExperimentConfig c;
  c.output_dir = fs::temp_directory_path() / dir;
  c.synth.tracks = 3;
  c.synth.subjects = 2;
  c.synth.duration_seconds = 40;
  for (auto* t : {&c.vae_training, &c.diffusion_training, &c.adapter_training,
                  &c.baseline_training}) {
    t->steps = 6;
    t->validation_interval = 3;
    t->batch_size = 2;
    t->validation_ddim_steps = 2;
  }
  c.sampler_steps = 3;
  c.evaluation.resamples = 50;
  return c;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void run_all(const ExperimentConfig& c) {
  run_synth_data(c);
  run_train_vae(c);
  run_train_diffusion(c);
  run_train_adapter(c, {});
  run_train_adapter(c, {true, false, std::nullopt});
  run_train_baseline(c);
  run_sample(c, {});
  run_evaluate(c);
  run_matrix(c, {});
}

}  // namespace

TEST(ExperimentConfig, DefaultsValidateAndRoundTrip) {
  const ExperimentConfig c;
  EXPECT_NO_THROW(c.validate());
  const auto d = nlohmann::json(c).get<ExperimentConfig>();
  EXPECT_EQ(nlohmann::json(d), nlohmann::json(c));
  EXPECT_EQ(config_hash(d), config_hash(c));
}

TEST(ExperimentConfig, HashIgnoresOutputDirOnly) {
  ExperimentConfig a, b;
  b.output_dir = "elsewhere";
  EXPECT_EQ(config_hash(a), config_hash(b));
  b.seed = a.seed + 1;
  EXPECT_NE(config_hash(a), config_hash(b));
}

TEST(ExperimentConfig, InconsistentSettingsAreRejected) {
  ExperimentConfig c;
  c.eval_subject = c.synth.subjects;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.sampler_steps = c.model.schedule.steps + 1;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.adapter_training.mode = trainer::Mode::kBaseline;
  EXPECT_THROW(c.validate(), ConfigError);
  c = ExperimentConfig{};
  c.synth.eeg_channels = 12;
  EXPECT_THROW(c.validate(), ConfigError);
}

TEST(ExperimentConfig, FileRoundTripAndBadFiles) {
  const auto dir = fs::temp_directory_path() / "eegldm_cfg_test";
  fs::create_directories(dir);
  ExperimentConfig c;
  c.seed = 99;
  save_config(c, dir / "c.json");
  EXPECT_EQ(config_hash(load_config(dir / "c.json")), config_hash(c));
  std::ofstream(dir / "bad.json") << "{\"seed\": 1}";
  EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
  EXPECT_THROW(load_config(dir / "missing.json"), ConfigError);
  fs::remove_all(dir);
}

TEST(AdapterOptions, VariantNames) {
  EXPECT_EQ(AdapterOptions{}.variant(), "adapter-frozen");
  EXPECT_EQ((AdapterOptions{true, false, 0}).variant(), "scratch-joint");
  EXPECT_EQ((AdapterOptions{false, true, std::nullopt}).variant(), "adapter-frozen-all-sl");
}

TEST(Pipeline, SynthDataIsByteIdenticalAcrossRuns) {
  auto c = tiny("eegldm_pipe_synth");
  fs::remove_all(c.output_dir);
  run_synth_data(c);
  const auto first = slurp(c.output_dir / "data" / "corpus.eegt");
  const auto manifest = slurp(c.output_dir / "data" / "manifest.json");
  run_synth_data(c);
  EXPECT_EQ(slurp(c.output_dir / "data" / "corpus.eegt"), first);
  EXPECT_EQ(slurp(c.output_dir / "data" / "manifest.json"), manifest);
  fs::remove_all(c.output_dir);
}

TEST(Pipeline, StagesRefuseMissingOrInconsistentUpstream) {
  auto c = tiny("eegldm_pipe_guard");
  fs::remove_all(c.output_dir);
  EXPECT_THROW(run_train_vae(c), ArtifactError);
  run_synth_data(c);
  run_train_vae(c);
  EXPECT_THROW(run_train_adapter(c, {}), ArtifactError);  // no diffusion stage yet

  auto other = c;
  other.seed += 1;
  EXPECT_THROW(run_train_diffusion(other), ConfigError);

  // Tampered artifact.
  { std::ofstream(c.output_dir / "data" / "manifest.json", std::ios::app) << " "; }
  EXPECT_NO_THROW(run_train_diffusion(c));  // the manifest is not an input
  { std::ofstream(c.output_dir / "data" / "corpus.eegt", std::ios::app) << "x"; }
  EXPECT_THROW(run_train_diffusion(c), ArtifactError);
  fs::remove_all(c.output_dir);
}

TEST(Pipeline, FullRunProducesTableAndIsReproducible) {
  auto a = tiny("eegldm_pipe_a"), b = tiny("eegldm_pipe_b");
  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
  run_all(a);
  run_all(b);

  const std::vector<std::string> expected = {"baseline-regressor", "unconditional",
                                             "adapter-frozen", "scratch-joint-all"};
  EXPECT_EQ(trained_models(a), expected);
  const auto table = slurp(a.output_dir / "evaluate" / "table.txt");
  for (const auto& m : expected) EXPECT_NE(table.find(m), std::string::npos) << m;
  for (const char* col : {"FAD-g", "FAD-f", "CLAP", "r-frame", "MSE-frame"}) {
    EXPECT_NE(table.find(col), std::string::npos) << col;
  }
  for (const auto& m : expected) {
    EXPECT_TRUE(fs::exists(a.output_dir / "matrix" / (m + ".csv")));
    EXPECT_TRUE(fs::exists(a.output_dir / "matrix" / (m + ".pgm")));
  }
  for (const char* f : {"evaluate/report.json", "evaluate/table.csv", "matrix/summary.json",
                        "samples/adapter-frozen/decoded.eegt"}) {
    EXPECT_EQ(slurp(a.output_dir / f), slurp(b.output_dir / f)) << f;
  }

  // Provenance: the evaluation stage lists the hashes of the decoded sets it read.
  std::ifstream in(a.output_dir / "evaluate" / "stage.json");
  const auto rec = nlohmann::json::parse(in);
  EXPECT_EQ(rec.at("config_hash"), config_hash(a));
  const auto& inputs = rec.at("inputs");
  ASSERT_TRUE(inputs.contains("samples/adapter-frozen/decoded.eegt"));
  EXPECT_EQ(inputs.at("samples/adapter-frozen/decoded.eegt").get<std::string>(),
            file_sha256(a.output_dir / "samples" / "adapter-frozen" / "decoded.eegt"));
  EXPECT_EQ(rec.at("config").at("seed"), a.seed);

  fs::remove_all(a.output_dir);
  fs::remove_all(b.output_dir);
}

TEST(Pipeline, UnknownModelIsAnArtifactError) {
  auto c = tiny("eegldm_pipe_unknown");
  fs::remove_all(c.output_dir);
  run_synth_data(c);
  run_train_vae(c);
  EXPECT_THROW(run_sample(c, {"no-such-model"}), ArtifactError);
  EXPECT_THROW(run_evaluate(c), ArtifactError);
  fs::remove_all(c.output_dir);
}
