#include "eegldm/trainer/trainer.hpp"

#include <cmath>
#include <fstream>
#include <numeric>

#include "eegldm/nd/adam.hpp"
#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

namespace eegldm::trainer {

std::string to_string(Mode m) {
  switch (m) {
    case Mode::kVae: return "vae";
    case Mode::kDiffusion: return "diffusion";
    case Mode::kAdapter: return "adapter";
    case Mode::kScratchJoint: return "scratch-joint";
    case Mode::kBaseline: return "baseline";
  }
  return "?";
}

Mode mode_from_string(const std::string& s) {
  for (Mode m : {Mode::kVae, Mode::kDiffusion, Mode::kAdapter, Mode::kScratchJoint, Mode::kBaseline})
    if (to_string(m) == s) return m;
  throw std::invalid_argument("unknown training mode '" + s + "'");
}

void TrainConfig::validate() const {
  if (!(learning_rate > 0)) throw std::invalid_argument("train: learning rate must be positive");
  if (batch_size == 0) throw std::invalid_argument("train: batch size must be positive");
  if (validation_interval == 0 || steps < validation_interval) {
    throw std::invalid_argument("train: need 0 < validation interval <= steps");
  }
  if (validation_ddim_steps == 0) throw std::invalid_argument("train: need >= 1 sampler step");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"mode", to_string(c.mode)},
       {"steps", c.steps},
       {"batch_size", c.batch_size},
       {"learning_rate", c.learning_rate},
       {"validation_interval", c.validation_interval},
       {"seed", c.seed},
       {"subject_layer", c.subject_layer},
       {"validation_ddim_steps", c.validation_ddim_steps},
       {"beta_kl", c.beta_kl}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.mode = mode_from_string(j.at("mode").get<std::string>());
  j.at("steps").get_to(c.steps);
  j.at("batch_size").get_to(c.batch_size);
  j.at("learning_rate").get_to(c.learning_rate);
  j.at("validation_interval").get_to(c.validation_interval);
  j.at("seed").get_to(c.seed);
  j.at("subject_layer").get_to(c.subject_layer);
  j.at("validation_ddim_steps").get_to(c.validation_ddim_steps);
  j.at("beta_kl").get_to(c.beta_kl);
}

void to_json(nlohmann::json& j, const TrainLog& log) {
  auto vals = nlohmann::json::array();
  for (const auto& v : log.validations) vals.push_back({{"step", v.step}, {"score", v.score}});
  j = {{"steps", log.steps.size()},
       {"validations", std::move(vals)},
       {"best_step", log.best_step},
       {"best_score", log.best_score},
       {"checkpoints", log.checkpoints},
       {"loss_head", smoothed_loss(log, true)},
       {"loss_tail", smoothed_loss(log, false)}};
  if (!log.frozen_digest_before.empty()) {
    j["frozen_digest_before"] = log.frozen_digest_before;
    j["frozen_digest_after"] = log.frozen_digest_after;
  }
}

void write_log_lines(const TrainLog& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& s : log.steps) {
    out << nlohmann::json{{"kind", "step"}, {"step", s.step}, {"loss", s.loss}}.dump() << "\n";
  }
  for (const auto& v : log.validations) {
    out << nlohmann::json{{"kind", "validation"}, {"step", v.step}, {"score", v.score}}.dump()
        << "\n";
  }
}

double smoothed_loss(const TrainLog& log, bool head, std::size_t window) {
  if (log.steps.empty()) return 0.0;
  const std::size_t w = std::min(window, log.steps.size());
  double s = 0;
  for (std::size_t i = 0; i < w; ++i) {
    s += log.steps[head ? i : log.steps.size() - 1 - i].loss;
  }
  return s / static_cast<double>(w);
}

double proxy_score(const evalkit::Embedder& embedder, const std::vector<Tensor<float>>& produced,
                   const std::vector<Tensor<float>>& truth) {
  if (produced.size() != truth.size() || produced.empty()) {
    throw TrainingError("proxy score: need equally many non-zero produced and true items");
  }
  double s = 0;
  for (std::size_t i = 0; i < produced.size(); ++i) {
    s += evalkit::clap_score(embedder.global(produced[i]), embedder.global(truth[i]));
  }
  return s / static_cast<double>(produced.size());
}

namespace {

Tensor<float> gather_x(const std::vector<Sample>& s, const std::vector<std::size_t>& idx) {
  std::vector<Tensor<float>> v;
  for (auto i : idx) v.push_back(s[i].x);
  return stack(v);
}

Tensor<float> gather_y(const std::vector<Sample>& s, const std::vector<std::size_t>& idx) {
  std::vector<Tensor<float>> v;
  for (auto i : idx) v.push_back(s[i].y);
  return stack(v);
}

std::vector<std::size_t> subjects_of(const std::vector<Sample>& s,
                                     const std::vector<std::size_t>& idx, bool use) {
  std::vector<std::size_t> out;
  for (auto i : idx) out.push_back(use ? s[i].subject : 0);
  return out;
}

bool uses_subjects(const ModelSet& models) {
  return models.has_adapter() && models.adapter().has_subject_layer();
}

}  // namespace

std::vector<Tensor<float>> produce(const ModelSet& models, Mode mode,
                                   const std::vector<Sample>& examples, std::size_t ddim_steps,
                                   std::uint64_t seed) {
  std::vector<std::size_t> all(examples.size());
  std::iota(all.begin(), all.end(), 0);
  switch (mode) {
    case Mode::kVae:
      return unstack(reconstruct(models, gather_x(examples, all)));
    case Mode::kDiffusion:
      return unstack(sample_unconditional(models, examples.size(), ddim_steps, seed));
    case Mode::kAdapter:
    case Mode::kScratchJoint:
      return unstack(sample_conditioned(models, gather_y(examples, all),
                                        subjects_of(examples, all, uses_subjects(models)),
                                        ddim_steps, seed));
    case Mode::kBaseline:
      return unstack(regress(models, gather_y(examples, all)));
  }
  throw std::logic_error("produce: unknown mode");
}

double validate(const ModelSet& models, Mode mode, const std::vector<Sample>& validation,
                const evalkit::Embedder& embedder, std::size_t ddim_steps, std::uint64_t seed) {
  if (validation.empty()) throw TrainingError("validate: empty validation set");
  std::vector<Tensor<float>> truth;
  for (const auto& s : validation) truth.push_back(s.x);
  return proxy_score(embedder, produce(models, mode, validation, ddim_steps, seed), truth);
}

std::vector<std::string> trainable_prefixes(const ModelSet& models, Mode mode) {
  switch (mode) {
    case Mode::kVae: return {kVaePrefix + "."};
    case Mode::kDiffusion: return {kUNetPrefix + "."};
    case Mode::kAdapter: return {kAdapterPrefix + "."};
    case Mode::kScratchJoint: return {kUNetPrefix + ".", kAdapterPrefix + "."};
    case Mode::kBaseline: return {kBaselinePrefix + "."};
  }
  (void)models;
  return {};
}

LatentStats latent_statistics(const ModelSet& models, const std::vector<Sample>& train) {
  if (train.empty()) throw TrainingError("latent statistics: no training data");
  std::vector<std::size_t> all(train.size());
  std::iota(all.begin(), all.end(), 0);
  const Tensor<float> z = models.vae().encode_mean(gather_x(train, all));
  const std::size_t n = z.dim(0), c = z.dim(1), per = z.size() / (n * c);
  LatentStats out{std::vector<double>(c, 0.0), std::vector<double>(c, 0.0)};
  for (std::size_t k = 0; k < c; ++k) {
    double s = 0;
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < per; ++j) s += z.data()[(i * c + k) * per + j];
    const double mean = s / static_cast<double>(n * per);
    double v = 0;
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < per; ++j) {
        const double d = z.data()[(i * c + k) * per + j] - mean;
        v += d * d;
      }
    }
    const double sd = std::sqrt(v / static_cast<double>(n * per));
    if (!(sd > 0)) throw TrainingError("latent statistics: channel " + std::to_string(k) + " is constant");
    out.mean[k] = mean;
    out.std[k] = sd;
  }
  return out;
}

TrainLog train(ModelSet& models, const TrainConfig& config, const std::vector<Sample>& train,
               const std::vector<Sample>& validation, const evalkit::Embedder& embedder,
               const std::optional<std::filesystem::path>& checkpoint_dir) {
  config.validate();
  if (train.empty()) throw TrainingError("train: empty training set");
  const Mode mode = config.mode;
  if ((mode == Mode::kAdapter || mode == Mode::kScratchJoint) && !models.has_adapter()) {
    throw TrainingError("train: adapter modes need an attached adapter");
  }
  if (mode == Mode::kBaseline && !models.has_baseline()) {
    throw TrainingError("train: baseline mode needs an attached baseline");
  }
  if (mode == Mode::kVae && !models.conv_vae()) {
    throw TrainingError("train: the analytic VAE has no trainable parameters");
  }

  auto& tree = models.tree();
  const auto prefixes = trainable_prefixes(models, mode);
  tree.set_trainable("", false);
  for (const auto& p : prefixes) tree.set_trainable(p, true);

  TrainLog log;
  if (mode == Mode::kAdapter) log.frozen_digest_before = tree.digest(kUNetPrefix + ".");

  // Latents of the training set are fixed for every mode but the VAE's.
  std::vector<Tensor<float>> latents;
  if (mode != Mode::kVae) {
    std::vector<std::size_t> all(train.size());
    std::iota(all.begin(), all.end(), 0);
    latents = unstack(models.encode(gather_x(train, all)));
  }
  const bool subjects = uses_subjects(models);

  nd::AdamState<float> adam;
  adam.config.learning_rate = config.learning_rate;
  nd::Rng rng(nd::derive_seed(config.seed, {0x7a1}));
  std::uniform_int_distribution<std::size_t> pick(0, train.size() - 1);

  const auto snapshot = [&] {
    nd::TensorContainer c;
    for (const auto& p : prefixes) {
      const auto part = tree.to_container(p);
      for (const auto& name : part.names()) c.put(name, part.get<float>(name));
    }
    return c;
  };
  std::optional<nd::TensorContainer> best;

  const auto run_validation = [&](std::size_t step) {
    if (validation.empty()) return;
    const double score =
        trainer::validate(models, mode, validation, embedder, config.validation_ddim_steps,
                          nd::derive_seed(config.seed, {0x7a2}));
    log.validations.push_back({step, score});
    if (score > log.best_score) {
      log.best_score = score;
      log.best_step = step;
      best = snapshot();
    }
  };

  const auto step_loss = [&](const std::vector<std::size_t>& idx, std::uint64_t step_seed) {
    switch (mode) {
      case Mode::kVae:
        return models.conv_vae()->loss(gather_x(train, idx), step_seed, config.beta_kl).total;
      case Mode::kDiffusion: {
        std::vector<Tensor<float>> zs;
        for (auto i : idx) zs.push_back(latents[i]);
        return denoiser::denoising_loss(models.unet(), stack(zs), models.schedule(), step_seed);
      }
      case Mode::kAdapter:
      case Mode::kScratchJoint: {
        std::vector<Tensor<float>> zs;
        for (auto i : idx) zs.push_back(latents[i]);
        controlnet::ConditionedBatch<float> batch{stack(zs), gather_y(train, idx),
                                                  subjects_of(train, idx, subjects)};
        return controlnet::adapter_loss(models.unet(), models.adapter(), batch, models.schedule(),
                                        step_seed);
      }
      case Mode::kBaseline: {
        std::vector<Tensor<float>> zs;
        for (auto i : idx) zs.push_back(latents[i]);
        const Var<float> pred = models.baseline().forward(Var<float>(gather_y(train, idx)));
        return nd::mse(pred, Var<float>(stack(zs)));
      }
    }
    throw std::logic_error("train: unknown mode");
  };

  for (std::size_t step = 1; step <= config.steps; ++step) {
    std::vector<std::size_t> idx(config.batch_size);
    for (auto& i : idx) i = pick(rng);
    const std::uint64_t step_seed = nd::derive_seed(config.seed, {0x7a3, step});
    tree.zero_grad();
    double value = 0;
    try {
      Var<float> loss = step_loss(idx, step_seed);
      value = loss.value()[0];
      if (!std::isfinite(value)) throw nd::NumericError("loss " + std::to_string(value));
      loss.backward();
    } catch (const nd::NumericError& e) {
      throw TrainingError(to_string(mode) + " training diverged at step " + std::to_string(step) +
                          " (" + e.what() + ", lr " + std::to_string(config.learning_rate) + ")");
    }
    nd::adam_step(tree, adam);
    log.steps.push_back({step, value});
    if (step % config.validation_interval == 0 || step == config.steps) run_validation(step);
  }

  if (checkpoint_dir) {
    std::filesystem::create_directories(*checkpoint_dir);
    const auto final_path = *checkpoint_dir / "final.eegt";
    snapshot().write(final_path);
    log.checkpoints.push_back(final_path.string());
  }
  if (best) {
    for (const auto& p : prefixes) tree.assign(*best, p);
    if (checkpoint_dir) {
      const auto best_path = *checkpoint_dir / "best.eegt";
      best->write(best_path);
      log.checkpoints.push_back(best_path.string());
    }
  }
  if (mode == Mode::kAdapter) log.frozen_digest_after = tree.digest(kUNetPrefix + ".");
  tree.set_trainable("", true);
  return log;
}

}  // namespace eegldm::trainer
