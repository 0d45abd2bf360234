// Desk-scale training runs on the default synthetic corpus. Slow (minutes).
#include <gtest/gtest.h>

#include <memory>

#include "eegldm/datakit/datakit.hpp"
#include "eegldm/latentvae/vae.hpp"
#include "eegldm/trainer/trainer.hpp"

using namespace eegldm;
using namespace eegldm::trainer;
using nd::Tensor;

namespace {

struct DeskData {
  std::vector<Sample> train, val, test;
  std::unique_ptr<evalkit::Embedder> embedder;

  DeskData() {
    const datakit::SynthConfig sc;
    const auto ds =
        datakit::build_dataset(datakit::synth_generate(sc, 1), datakit::default_dataset_config(sc));
    const auto pick = [&](const std::vector<std::size_t>& idx) {
      std::vector<Sample> out;
      for (auto i : idx) {
        const auto& e = ds.examples[i];
        if (e.subject == 0) out.push_back({e.x, e.y, 0});
      }
      return out;
    };
    train = pick(ds.split.train);
    val = pick(ds.split.validation);
    test = pick(ds.split.test);
    embedder = std::make_unique<evalkit::Embedder>(evalkit::EmbedderConfig{}, sc.spec_bins);
    std::vector<Tensor<float>> xs;
    for (const auto& s : train) xs.push_back(s.x);
    embedder->fit_centering(xs);
  }
};

const DeskData& desk() {
  static const DeskData d;
  return d;
}

TrainConfig desk_training(Mode mode, std::size_t steps, double lr) {
  TrainConfig c;
  c.mode = mode;
  c.steps = steps;
  c.batch_size = 8;
  c.learning_rate = lr;
  c.validation_interval = 500;
  c.seed = 3;
  return c;
}

Tensor<float> xs_of(const std::vector<Sample>& s) {
  std::vector<Tensor<float>> v;
  for (const auto& e : s) v.push_back(e.x);
  return stack(v);
}

Tensor<float> ys_of(const std::vector<Sample>& s) {
  std::vector<Tensor<float>> v;
  for (const auto& e : s) v.push_back(e.y);
  return stack(v);
}

// Diffusion pretraining followed by frozen-backbone adapter training, shared by the tests below.
struct DeskModels {
  std::unique_ptr<ModelSet> models;
  TrainLog diffusion, adapter;

  DeskModels() {
    const auto& d = desk();
    models = std::make_unique<ModelSet>(ModelConfig{}, 5);
    const auto st = latent_statistics(*models, d.train);
    models->set_latent_standardization(st.mean, st.std);
    diffusion = train(*models, desk_training(Mode::kDiffusion, 2000, 1e-3), d.train, d.val,
                      *d.embedder);
    models->attach_adapter(0);
    adapter = train(*models, desk_training(Mode::kAdapter, 2000, 1e-3), d.train, d.val,
                    *d.embedder);
  }
};

const DeskModels& desk_models() {
  static const DeskModels m;
  return m;
}

}  // namespace

TEST(DeskVae, TrainedConvVaeReconstructsHeldOutSpectrograms) {
  const auto& d = desk();
  ModelConfig mc;
  mc.vae_variant = "conv";
  ModelSet m(mc, 5);
  auto tc = desk_training(Mode::kVae, 1500, 2e-3);
  tc.beta_kl = 1e-4;
  train(m, tc, d.train, d.val, *d.embedder);
  const auto x = xs_of(d.test);
  const double err = latentvae::relative_reconstruction_error(reconstruct(m, x), x);
  RecordProperty("relative_error", std::to_string(err));
  EXPECT_LT(err, 0.15);
}

TEST(DeskDiffusion, SmoothedLossDropsByAtLeastThirtyPercent) {
  const auto& log = desk_models().diffusion;
  const double head = smoothed_loss(log, true), tail = smoothed_loss(log, false);
  RecordProperty("loss_head", std::to_string(head));
  RecordProperty("loss_tail", std::to_string(tail));
  EXPECT_LE(tail, 0.7 * head);
}

TEST(DeskAdapter, ConditionedLossBeatsFrozenUnconditionalOnHeldOutPairs) {
  const auto& d = desk();
  const auto& m = *desk_models().models;
  const auto z = m.encode(xs_of(d.test));
  const auto y = ys_of(d.test);
  const std::vector<std::size_t> subjects(d.test.size(), 0);
  double conditioned = 0, unconditional = 0;
  for (std::uint64_t seed = 100; seed < 110; ++seed) {
    controlnet::ConditionedBatch<float> batch{z, y, subjects};
    conditioned +=
        controlnet::adapter_loss(m.unet(), m.adapter(), batch, m.schedule(), seed).value()[0];
    unconditional += denoiser::denoising_loss(m.unet(), z, m.schedule(), seed).value()[0];
  }
  RecordProperty("conditioned", std::to_string(conditioned / 10));
  RecordProperty("unconditional", std::to_string(unconditional / 10));
  EXPECT_LT(conditioned, unconditional);
}

TEST(DeskAdapter, ConditionedProxyScoreBeatsUnconditional) {
  const auto& d = desk();
  const auto& m = *desk_models().models;
  const double conditioned = validate(m, Mode::kAdapter, d.test, *d.embedder, 20, 17);
  const double unconditional = validate(m, Mode::kDiffusion, d.test, *d.embedder, 20, 17);
  RecordProperty("conditioned", std::to_string(conditioned));
  RecordProperty("unconditional", std::to_string(unconditional));
  EXPECT_GT(conditioned, unconditional);
}

TEST(DeskAdapter, FrozenDenoiserDigestUnchanged) {
  const auto& log = desk_models().adapter;
  EXPECT_EQ(log.frozen_digest_before, log.frozen_digest_after);
  EXPECT_EQ(desk_models().models->tree().digest(kUNetPrefix + "."), log.frozen_digest_before);
}
