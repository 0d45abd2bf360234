#include "eegldm/pipeline/experiment.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "eegldm/nd/params.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::pipeline {

namespace fs = std::filesystem;
using nd::Tensor;
using trainer::Mode;
using trainer::ModelSet;
using trainer::Sample;
using trainer::TrainConfig;

namespace {

TrainConfig training_defaults(Mode mode, std::size_t steps, double lr, std::size_t batch,
                              std::size_t interval) {
  TrainConfig c;
  c.mode = mode;
  c.steps = steps;
  c.learning_rate = lr;
  c.batch_size = batch;
  c.validation_interval = interval;
  return c;
}

}  // namespace

ExperimentConfig::ExperimentConfig()
    : vae_training(training_defaults(Mode::kVae, 1500, 2e-3, 8, 250)),
      diffusion_training(training_defaults(Mode::kDiffusion, 2000, 1e-3, 32, 500)),
      adapter_training(training_defaults(Mode::kAdapter, 2000, 1e-3, 32, 500)),
      baseline_training(training_defaults(Mode::kBaseline, 2000, 1e-3, 8, 500)) {}

void ExperimentConfig::validate() const {
  const auto fail = [](const std::string& m) { throw ConfigError("config: " + m); };
  const auto check_mode = [&](const TrainConfig& t, Mode m, const char* name) {
    if (t.mode != m) fail(std::string(name) + " must use mode '" + trainer::to_string(m) + "'");
    try {
      t.validate();
    } catch (const std::invalid_argument& e) {
      fail(std::string(name) + ": " + e.what());
    }
  };
  check_mode(vae_training, Mode::kVae, "vae_training");
  check_mode(diffusion_training, Mode::kDiffusion, "diffusion_training");
  check_mode(baseline_training, Mode::kBaseline, "baseline_training");
  if (adapter_training.mode != Mode::kAdapter && adapter_training.mode != Mode::kScratchJoint) {
    fail("adapter_training must use mode 'adapter' or 'scratch-joint'");
  }
  try {
    adapter_training.validate();
  } catch (const std::invalid_argument& e) {
    fail(std::string("adapter_training: ") + e.what());
  }
  if (train_subject >= synth.subjects) fail("train_subject out of range");
  if (eval_subject >= synth.subjects) fail("eval_subject out of range");
  if (sampler_steps == 0 || sampler_steps > model.schedule.steps) {
    fail("sampler_steps must lie in [1, schedule steps]");
  }
  if (model.grid.freq_bins != synth.spec_bins) fail("model grid frequency bins differ from synth");
  if (model.grid.time_bins != dataset.chunks.spec_frames()) {
    fail("model grid time bins differ from the chunk length");
  }
  if (model.projector.input_channels != synth.eeg_channels) {
    fail("projector input channels differ from the EEG channel count");
  }
  if (model.projector.input_steps != dataset.chunks.eeg_steps()) {
    fail("projector input steps differ from the chunk length");
  }
  if (dataset.chunks.eeg_rate != synth.eeg_rate || dataset.chunks.spec_fps != synth.spec_fps) {
    fail("dataset chunk rates differ from synth rates");
  }
  for (auto t : dataset.ood_tracks) {
    if (t >= synth.tracks) fail("OOD track out of range");
  }
  if (dataset.ood_tracks.size() >= synth.tracks) fail("no in-distribution tracks left");
  if (embedder.spec_fps != synth.spec_fps) fail("embedder frame rate differs from synth");
  if (evaluation.resamples == 0) fail("evaluation needs at least one resample");
}

void to_json(nlohmann::json& j, const ExperimentConfig& c) {
  j = {{"seed", c.seed},
       {"output_dir", c.output_dir.string()},
       {"synth", c.synth},
       {"dataset", c.dataset},
       {"model", c.model},
       {"vae_training", c.vae_training},
       {"diffusion_training", c.diffusion_training},
       {"adapter_training", c.adapter_training},
       {"baseline_training", c.baseline_training},
       {"train_subject", c.train_subject},
       {"eval_subject", c.eval_subject},
       {"sampler_steps", c.sampler_steps},
       {"embedder", c.embedder},
       {"evaluation", c.evaluation}};
}

void from_json(const nlohmann::json& j, ExperimentConfig& c) {
  j.at("seed").get_to(c.seed);
  c.output_dir = j.at("output_dir").get<std::string>();
  j.at("synth").get_to(c.synth);
  j.at("dataset").get_to(c.dataset);
  j.at("model").get_to(c.model);
  j.at("vae_training").get_to(c.vae_training);
  j.at("diffusion_training").get_to(c.diffusion_training);
  j.at("adapter_training").get_to(c.adapter_training);
  j.at("baseline_training").get_to(c.baseline_training);
  j.at("train_subject").get_to(c.train_subject);
  j.at("eval_subject").get_to(c.eval_subject);
  j.at("sampler_steps").get_to(c.sampler_steps);
  j.at("embedder").get_to(c.embedder);
  j.at("evaluation").get_to(c.evaluation);
}

ExperimentConfig load_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config " + path.string());
  ExperimentConfig c;
  try {
    c = nlohmann::json::parse(in).get<ExperimentConfig>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError("config " + path.string() + ": " + e.what());
  }
  c.validate();
  return c;
}

void save_config(const ExperimentConfig& config, const fs::path& path) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << nlohmann::json(config).dump(2) << "\n";
}

std::string config_hash(const ExperimentConfig& config) {
  nlohmann::json j = config;
  j.erase("output_dir");
  return nd::sha256_hex(j.dump());
}

std::string file_sha256(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ArtifactError("missing artifact " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return nd::sha256_hex(ss.str());
}

std::string AdapterOptions::variant() const {
  std::string name = scratch ? "scratch-joint" : "adapter-frozen";
  if (!subject) name += "-all";
  if (subject_layer) name += "-sl";
  return name;
}

namespace {

// Stage directories below output_dir.
const char* kDataDir = "data";
const char* kVaeDir = "vae";
const char* kDiffusionDir = "diffusion";
const char* kBaselineDir = "baseline-regressor";
const char* kSamplesDir = "samples";
const char* kEvalDir = "evaluate";
const char* kMatrixDir = "matrix";

// Seed keys of the stages.
enum : std::uint64_t {
  kSeedSynth = 1,
  kSeedModels,
  kSeedVae,
  kSeedDiffusion,
  kSeedAdapter,
  kSeedBaseline,
  kSeedSample
};

// Reads and writes stage.json records and checks upstream ones.
class Stage {
 public:
  Stage(const ExperimentConfig& config, std::string name, fs::path dir)
      : config_(config), hash_(config_hash(config)), name_(std::move(name)), dir_(std::move(dir)) {
    config_.validate();
  }

  const fs::path& dir() const { return dir_; }
  fs::path root() const { return config_.output_dir; }

  // Returns the path of an upstream artifact after checking its stage record.
  fs::path input(const fs::path& upstream_dir, const std::string& file) {
    const fs::path record = upstream_dir / "stage.json";
    if (!fs::exists(record)) {
      throw ArtifactError("stage '" + name_ + "' needs " + upstream_dir.string() +
                          " (run that stage first)");
    }
    std::ifstream in(record);
    const auto j = nlohmann::json::parse(in);
    if (j.at("config_hash").get<std::string>() != hash_) {
      throw ConfigError("config hash mismatch: " + record.string() + " was produced by config " +
                        j.at("config_hash").get<std::string>() + ", current config is " + hash_);
    }
    const fs::path path = upstream_dir / file;
    const std::string digest = file_sha256(path);
    const auto& outputs = j.at("outputs");
    if (!outputs.contains(file) || outputs.at(file).get<std::string>() != digest) {
      throw ArtifactError("artifact " + path.string() + " does not match its stage record");
    }
    inputs_[fs::relative(path, root()).generic_string()] = digest;
    return path;
  }

  fs::path output(const std::string& file) {
    fs::create_directories(dir_);
    outputs_.push_back(file);
    return dir_ / file;
  }

  void finish(std::uint64_t seed, const nlohmann::json& summary) {
    nlohmann::json out = nlohmann::json::object();
    for (const auto& f : outputs_) out[f] = file_sha256(dir_ / f);
    nlohmann::json record = {{"stage", name_},
                             {"config_hash", hash_},
                             {"seed", seed},
                             {"inputs", inputs_},
                             {"outputs", out},
                             {"summary", summary},
                             {"config", config_}};
    std::ofstream f(dir_ / "stage.json");
    if (!f) throw std::runtime_error("cannot write " + (dir_ / "stage.json").string());
    f << record.dump(2) << "\n";
  }

 private:
  const ExperimentConfig& config_;
  std::string hash_;
  std::string name_;
  fs::path dir_;
  nlohmann::json inputs_ = nlohmann::json::object();
  std::vector<std::string> outputs_;
};

std::uint64_t stage_seed(const ExperimentConfig& c, std::uint64_t key, std::uint64_t local = 0) {
  return nd::derive_seed(c.seed, {key, local});
}

datakit::Dataset load_dataset(Stage& stage, const ExperimentConfig& c) {
  const auto path = stage.input(stage.root() / kDataDir, "corpus.eegt");
  return datakit::build_dataset(datakit::load_corpus(path), c.dataset);
}

Sample to_sample(const datakit::PairedExample& e) { return {e.x, e.y, e.subject}; }

// subject == nullopt keeps every subject.
std::vector<Sample> pick(const datakit::Dataset& ds, const std::vector<std::size_t>& idx,
                         std::optional<std::size_t> subject) {
  std::vector<Sample> out;
  for (auto i : idx) {
    const auto& e = ds.examples[i];
    if (!subject || e.subject == *subject) out.push_back(to_sample(e));
  }
  return out;
}

// One sample per distinct (track, chunk); spectrograms do not depend on the subject.
std::vector<Sample> pick_unique(const datakit::Dataset& ds, const std::vector<std::size_t>& idx) {
  std::set<std::pair<std::size_t, std::size_t>> seen;
  std::vector<Sample> out;
  for (auto i : idx) {
    const auto& e = ds.examples[i];
    if (seen.insert({e.track, e.chunk}).second) out.push_back(to_sample(e));
  }
  return out;
}

std::vector<std::size_t> tracks_of(const datakit::Dataset& ds, const std::vector<std::size_t>& idx,
                                   std::size_t subject) {
  std::vector<std::size_t> out;
  for (auto i : idx) {
    if (ds.examples[i].subject == subject) out.push_back(ds.examples[i].track);
  }
  return out;
}

std::vector<Tensor<float>> spectrograms(const std::vector<Sample>& s) {
  std::vector<Tensor<float>> out;
  for (const auto& e : s) out.push_back(e.x);
  return out;
}

evalkit::Embedder make_embedder(const ExperimentConfig& c, const datakit::Dataset& ds) {
  evalkit::Embedder e(c.embedder, c.synth.spec_bins);
  e.fit_centering(spectrograms(pick_unique(ds, ds.split.train)));
  return e;
}

struct VaeArtifact {
  trainer::LatentStats stats;
  std::optional<nd::TensorContainer> params;
};

VaeArtifact load_vae(Stage& stage) {
  const auto path = stage.input(stage.root() / kVaeDir, "model.eegt");
  auto c = nd::TensorContainer::read(path);
  VaeArtifact a;
  c.meta().at("latent_mean").get_to(a.stats.mean);
  c.meta().at("latent_std").get_to(a.stats.std);
  if (c.entry_count() > 0) a.params = std::move(c);
  return a;
}

std::unique_ptr<ModelSet> make_models(const ExperimentConfig& c, const VaeArtifact& vae) {
  auto m = std::make_unique<ModelSet>(c.model, stage_seed(c, kSeedModels));
  if (vae.params) m->load(*vae.params);
  m->set_latent_standardization(vae.stats.mean, vae.stats.std);
  return m;
}

nd::TensorContainer checkpoint(const ModelSet& m, const std::vector<std::string>& prefixes,
                               const nlohmann::json& meta) {
  nd::TensorContainer c;
  for (const auto& p : prefixes) {
    const auto part = m.tree().to_container(p + ".");
    for (const auto& name : part.names()) c.put(name, part.get<float>(name));
  }
  c.meta() = meta;
  return c;
}

TrainConfig seeded(TrainConfig t, const ExperimentConfig& c, std::uint64_t key) {
  t.seed = stage_seed(c, key, t.seed);
  return t;
}

nlohmann::json log_summary(const trainer::TrainLog& log) { return nlohmann::json(log); }

void write_json(const fs::path& path, const nlohmann::json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void write_text(const fs::path& path, const std::string& s) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << s;
}

// Adapter variant directories are named after the variant.
struct AdapterRecord {
  AdapterOptions options;
  fs::path dir;
};

std::optional<AdapterOptions> adapter_options_of(const fs::path& dir) {
  const auto record = dir / "stage.json";
  if (!fs::exists(record)) return std::nullopt;
  std::ifstream in(record);
  const auto j = nlohmann::json::parse(in);
  if (j.at("stage").get<std::string>() != "train-adapter") return std::nullopt;
  const auto& s = j.at("summary").at("options");
  AdapterOptions o;
  s.at("scratch").get_to(o.scratch);
  s.at("subject_layer").get_to(o.subject_layer);
  o.subject = s.at("subject").is_null() ? std::nullopt
                                        : std::optional<std::size_t>(s.at("subject").get<std::size_t>());
  return o;
}

nlohmann::json options_json(const AdapterOptions& o) {
  return {{"scratch", o.scratch},
          {"subject_layer", o.subject_layer},
          {"subject", o.subject ? nlohmann::json(*o.subject) : nlohmann::json(nullptr)}};
}

}  // namespace

nlohmann::json run_synth_data(const ExperimentConfig& config) {
  Stage stage(config, "synth-data", config.output_dir / kDataDir);
  const auto seed = stage_seed(config, kSeedSynth);
  const auto corpus = datakit::synth_generate(config.synth, seed);
  datakit::save_corpus(corpus, stage.output("corpus.eegt"));
  const auto ds = datakit::build_dataset(corpus, config.dataset);
  write_json(stage.output("manifest.json"), datakit::dataset_manifest(ds, config.dataset));
  const nlohmann::json summary = {{"recordings", corpus.recordings.size()},
                                  {"examples", ds.examples.size()},
                                  {"train", ds.split.train.size()},
                                  {"validation", ds.split.validation.size()},
                                  {"test", ds.split.test.size()},
                                  {"ood", ds.split.ood.size()}};
  stage.finish(seed, summary);
  return summary;
}

nlohmann::json run_train_vae(const ExperimentConfig& config) {
  Stage stage(config, "train-vae", config.output_dir / kVaeDir);
  const auto ds = load_dataset(stage, config);
  const auto train = pick_unique(ds, ds.split.train);
  const auto val = pick_unique(ds, ds.split.validation);
  ModelSet models(config.model, stage_seed(config, kSeedModels));
  nlohmann::json summary = {{"variant", config.model.vae_variant}};
  const auto tc = seeded(config.vae_training, config, kSeedVae);
  if (models.conv_vae()) {
    const auto embedder = make_embedder(config, ds);
    const auto log = trainer::train(models, tc, train, val, embedder);
    trainer::write_log_lines(log, stage.output("train_log.jsonl"));
    summary["log"] = log_summary(log);
  }
  const auto stats = trainer::latent_statistics(models, train);
  nd::TensorContainer c;
  if (models.conv_vae()) c = checkpoint(models, {trainer::kVaePrefix}, {});
  c.meta() = {{"latent_mean", stats.mean}, {"latent_std", stats.std}, {"seed", tc.seed}};
  c.write(stage.output("model.eegt"));
  summary["latent_mean"] = stats.mean;
  summary["latent_std"] = stats.std;
  stage.finish(tc.seed, summary);
  return summary;
}

nlohmann::json run_train_diffusion(const ExperimentConfig& config) {
  Stage stage(config, "train-diffusion", config.output_dir / kDiffusionDir);
  const auto ds = load_dataset(stage, config);
  auto models = make_models(config, load_vae(stage));
  const auto embedder = make_embedder(config, ds);
  const auto tc = seeded(config.diffusion_training, config, kSeedDiffusion);
  const auto log = trainer::train(*models, tc, pick_unique(ds, ds.split.train),
                                  pick_unique(ds, ds.split.validation), embedder);
  trainer::write_log_lines(log, stage.output("train_log.jsonl"));
  checkpoint(*models, {trainer::kUNetPrefix}, {{"seed", tc.seed}})
      .write(stage.output("model.eegt"));
  const nlohmann::json summary = {{"log", log_summary(log)}};
  stage.finish(tc.seed, summary);
  return summary;
}

namespace {

// Builds the models of an adapter variant; loads its trained weights when `trained`.
std::unique_ptr<ModelSet> adapter_models(Stage& stage, const ExperimentConfig& config,
                                         const AdapterOptions& o, bool trained) {
  auto models = make_models(config, load_vae(stage));
  if (!o.scratch) {
    models->load(nd::TensorContainer::read(
        stage.input(stage.root() / kDiffusionDir, "model.eegt")));
  }
  models->attach_adapter(o.subject_layer ? config.synth.subjects : 0);
  if (trained) {
    models->load(nd::TensorContainer::read(stage.input(stage.root() / o.variant(), "model.eegt")));
  }
  return models;
}

}  // namespace

nlohmann::json run_train_adapter(const ExperimentConfig& config, const AdapterOptions& options) {
  if (options.subject && *options.subject >= config.synth.subjects) {
    throw ConfigError("train-adapter: subject out of range");
  }
  Stage stage(config, "train-adapter", config.output_dir / options.variant());
  const auto ds = load_dataset(stage, config);
  auto models = adapter_models(stage, config, options, false);
  const auto embedder = make_embedder(config, ds);
  auto tc = seeded(config.adapter_training, config, kSeedAdapter);
  tc.mode = options.scratch ? Mode::kScratchJoint : Mode::kAdapter;
  tc.subject_layer = options.subject_layer;
  const auto train = pick(ds, ds.split.train, options.subject);
  const auto val = pick(ds, ds.split.validation, options.subject);
  const auto log = trainer::train(*models, tc, train, val, embedder);
  trainer::write_log_lines(log, stage.output("train_log.jsonl"));
  std::vector<std::string> prefixes = {trainer::kAdapterPrefix};
  if (options.scratch) prefixes.push_back(trainer::kUNetPrefix);
  checkpoint(*models, prefixes, {{"seed", tc.seed}, {"variant", options.variant()}})
      .write(stage.output("model.eegt"));
  const nlohmann::json summary = {{"variant", options.variant()},
                                  {"options", options_json(options)},
                                  {"train_examples", train.size()},
                                  {"log", log_summary(log)}};
  stage.finish(tc.seed, summary);
  return summary;
}

nlohmann::json run_train_baseline(const ExperimentConfig& config) {
  Stage stage(config, "train-baseline", config.output_dir / kBaselineDir);
  const auto ds = load_dataset(stage, config);
  auto models = make_models(config, load_vae(stage));
  models->attach_baseline();
  const auto embedder = make_embedder(config, ds);
  const auto tc = seeded(config.baseline_training, config, kSeedBaseline);
  const auto log =
      trainer::train(*models, tc, pick(ds, ds.split.train, config.train_subject),
                     pick(ds, ds.split.validation, config.train_subject), embedder);
  trainer::write_log_lines(log, stage.output("train_log.jsonl"));
  checkpoint(*models, {trainer::kBaselinePrefix}, {{"seed", tc.seed}})
      .write(stage.output("model.eegt"));
  const nlohmann::json summary = {{"log", log_summary(log)}};
  stage.finish(tc.seed, summary);
  return summary;
}

std::vector<std::string> trained_models(const ExperimentConfig& config) {
  std::vector<std::string> out;
  const fs::path root = config.output_dir;
  if (fs::exists(root / kBaselineDir / "stage.json")) out.push_back(kBaselineModel);
  if (fs::exists(root / kDiffusionDir / "stage.json")) out.push_back(kUnconditional);
  std::vector<std::string> adapters;
  if (fs::exists(root)) {
    for (const auto& entry : fs::directory_iterator(root)) {
      if (entry.is_directory() && adapter_options_of(entry.path())) {
        adapters.push_back(entry.path().filename().string());
      }
    }
  }
  // adapter-frozen variants sort before scratch-joint ones.
  std::sort(adapters.begin(), adapters.end());
  out.insert(out.end(), adapters.begin(), adapters.end());
  return out;
}

namespace {

struct Decoded {
  std::vector<Tensor<float>> test, ood;
};

Decoded decode_model(Stage& stage, const ExperimentConfig& config, const std::string& name,
                     const std::vector<Sample>& test, const std::vector<Sample>& ood) {
  const auto seed = stage_seed(config, kSeedSample);
  const auto run = [&](const ModelSet& m, Mode mode) {
    Decoded d;
    d.test = trainer::produce(m, mode, test, config.sampler_steps, seed);
    if (!ood.empty()) {
      d.ood = trainer::produce(m, mode, ood, config.sampler_steps, nd::derive_seed(seed, {1}));
    }
    return d;
  };
  if (name == kUnconditional) {
    auto m = make_models(config, load_vae(stage));
    m->load(nd::TensorContainer::read(stage.input(stage.root() / kDiffusionDir, "model.eegt")));
    return run(*m, Mode::kDiffusion);
  }
  if (name == kBaselineModel) {
    auto m = make_models(config, load_vae(stage));
    m->attach_baseline();
    m->load(nd::TensorContainer::read(stage.input(stage.root() / kBaselineDir, "model.eegt")));
    return run(*m, Mode::kBaseline);
  }
  const auto options = adapter_options_of(stage.root() / name);
  if (!options) throw ArtifactError("unknown or untrained model '" + name + "'");
  auto m = adapter_models(stage, config, *options, true);
  return run(*m, options->scratch ? Mode::kScratchJoint : Mode::kAdapter);
}

std::vector<Tensor<float>> read_split(const nd::TensorContainer& c, const std::string& split) {
  std::vector<Tensor<float>> out;
  const std::size_t n = c.meta().at(split + "_count").get<std::size_t>();
  for (std::size_t i = 0; i < n; ++i) out.push_back(c.get<float>(split + "/" + std::to_string(i)));
  return out;
}

std::vector<std::string> sampled_models(const ExperimentConfig& config) {
  std::vector<std::string> out;
  for (const auto& m : trained_models(config)) {
    if (fs::exists(config.output_dir / kSamplesDir / m / "stage.json")) out.push_back(m);
  }
  return out;
}

}  // namespace

nlohmann::json run_sample(const ExperimentConfig& config, std::vector<std::string> models) {
  if (models.empty()) models = trained_models(config);
  if (models.empty()) throw ArtifactError("sample: no trained models under " +
                                          config.output_dir.string());
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& name : models) {
    Stage stage(config, "sample", config.output_dir / kSamplesDir / name);
    const auto ds = load_dataset(stage, config);
    const auto test = pick(ds, ds.split.test, config.eval_subject);
    const auto ood = pick(ds, ds.split.ood, config.eval_subject);
    if (test.empty()) throw datakit::DataError("sample: the eval subject has no test chunks");
    const auto d = decode_model(stage, config, name, test, ood);
    std::vector<std::pair<std::string, Tensor<float>>> items;
    for (std::size_t i = 0; i < d.test.size(); ++i) items.push_back({"test/" + std::to_string(i), d.test[i]});
    for (std::size_t i = 0; i < d.ood.size(); ++i) items.push_back({"ood/" + std::to_string(i), d.ood[i]});
    const auto seed = stage_seed(config, kSeedSample);
    datakit::write_tensors(stage.output("decoded.eegt"), items,
                           {{"model", name},
                            {"seed", seed},
                            {"sampler_steps", config.sampler_steps},
                            {"test_count", d.test.size()},
                            {"ood_count", d.ood.size()},
                            {"config_hash", config_hash(config)}});
    const nlohmann::json s = {{"test", d.test.size()}, {"ood", d.ood.size()}};
    stage.finish(seed, s);
    summary[name] = s;
  }
  return summary;
}

nlohmann::json run_evaluate(const ExperimentConfig& config) {
  Stage stage(config, "evaluate", config.output_dir / kEvalDir);
  const auto models = sampled_models(config);
  if (models.empty()) throw ArtifactError("evaluate: no sampled models (run sample first)");
  const auto ds = load_dataset(stage, config);
  const auto embedder = make_embedder(config, ds);
  const auto test = spectrograms(pick(ds, ds.split.test, config.eval_subject));
  const auto ood = spectrograms(pick(ds, ds.split.ood, config.eval_subject));

  std::vector<evalkit::TableRow> rows;
  nlohmann::json report = {{"embedder", config.embedder},
                           {"evaluation", config.evaluation},
                           {"fad_frame_pooling", "per-chunk mean frame embedding"},
                           {"bootstrap_null", "decoded indices resampled with replacement"},
                           {"eval_subject", config.eval_subject},
                           {"models", nlohmann::json::object()}};
  for (const auto& name : models) {
    const auto c = nd::TensorContainer::read(
        stage.input(stage.root() / kSamplesDir / name, "decoded.eegt"));
    const auto dt = read_split(c, "test");
    const auto dood = read_split(c, "ood");
    if (dt.size() != test.size() || dood.size() != ood.size()) {
      throw EvaluationError("evaluate: sample counts of '" + name + "' do not match the dataset");
    }
    evalkit::TableRow row{name, {}, {}};
    try {
      row.test = evalkit::evaluate_pairs(embedder, dt, test, config.evaluation);
      if (!ood.empty()) row.ood = evalkit::evaluate_pairs(embedder, dood, ood, config.evaluation);
    } catch (const evalkit::MetricError& e) {
      throw EvaluationError("evaluate '" + name + "': " + e.what());
    }
    report["models"][name] = {{"test", row.test}, {"ood", row.ood}};
    rows.push_back(std::move(row));
  }
  write_json(stage.output("report.json"), report);
  write_text(stage.output("table.txt"), evalkit::format_table(rows));
  evalkit::write_table_csv(rows, stage.output("table.csv"));
  nlohmann::json summary = nlohmann::json::object();
  for (const auto& r : rows) {
    summary[r.model] = {{"clap", r.test.clap}, {"clap_p", r.test.clap_sig.p_value},
                        {"fad_global", r.test.fad_global}};
  }
  stage.finish(config.evaluation.seed, summary);
  return summary;
}

nlohmann::json run_matrix(const ExperimentConfig& config, std::vector<std::string> models) {
  if (models.empty()) models = sampled_models(config);
  if (models.empty()) throw ArtifactError("matrix: no sampled models (run sample first)");
  Stage stage(config, "matrix", config.output_dir / kMatrixDir);
  const auto ds = load_dataset(stage, config);
  const auto embedder = make_embedder(config, ds);
  const auto truth = spectrograms(pick(ds, ds.split.test, config.eval_subject));
  const auto tracks = tracks_of(ds, ds.split.test, config.eval_subject);

  std::vector<std::size_t> order(tracks.begin(), tracks.end());
  std::sort(order.begin(), order.end());
  order.erase(std::unique(order.begin(), order.end()), order.end());
  std::map<std::size_t, std::size_t> row_of;
  for (std::size_t i = 0; i < order.size(); ++i) row_of[order[i]] = i;

  std::vector<std::vector<evalkit::Embedding>> gt(order.size());
  for (std::size_t i = 0; i < truth.size(); ++i) gt[row_of[tracks[i]]].push_back(embedder.global(truth[i]));

  nlohmann::json summary = {{"tracks", order}, {"models", nlohmann::json::object()}};
  for (const auto& name : models) {
    const auto c = nd::TensorContainer::read(
        stage.input(stage.root() / kSamplesDir / name, "decoded.eegt"));
    const auto decoded = read_split(c, "test");
    if (decoded.size() != truth.size()) {
      throw EvaluationError("matrix: sample count of '" + name + "' does not match the dataset");
    }
    std::vector<std::vector<evalkit::Embedding>> dec(order.size());
    for (std::size_t i = 0; i < decoded.size(); ++i) {
      dec[row_of[tracks[i]]].push_back(embedder.global(decoded[i]));
    }
    const auto m = evalkit::cross_score_matrix(
        dec, gt, [](const evalkit::Embedding& a, const evalkit::Embedding& b) {
          return evalkit::clap_score(a, b);
        });
    evalkit::write_matrix_csv(m, stage.output(name + ".csv"));
    evalkit::write_matrix_pgm(m, stage.output(name + ".pgm"));
    summary["models"][name] = {{"diagonal_rows", evalkit::diagonal_rows(m)},
                               {"rows", order.size()}};
  }
  write_json(stage.output("summary.json"), summary);
  stage.finish(config.evaluation.seed, summary);
  return summary;
}

}  // namespace eegldm::pipeline
