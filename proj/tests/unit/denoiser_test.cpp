#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "eegldm/denoiser/unet.hpp"
#include "eegldm/nd/adam.hpp"
#include "eegldm/nd/finite_diff.hpp"
#include "eegldm/nd/ops.hpp"
#include "eegldm/nd/rng.hpp"

using namespace eegldm;
using denoiser::UNet;
using denoiser::UNetConfig;
using nd::Shape;
using nd::Tensor;
using nd::Var;

namespace {

UNetConfig tiny_config() {
  UNetConfig c;
  c.latent_channels = 2;
  c.channels = {16, 24};
  c.time_dim = 8;
  return c;
}

}  // namespace

TEST(TimeEmbed, ZeroStepIsSinZerosCosOnes) {
  auto e = denoiser::time_embed(0, 8);
  for (int k = 0; k < 4; ++k) {
    EXPECT_EQ(e[k], 0.0);
    EXPECT_EQ(e[4 + k], 1.0);
  }
}

TEST(TimeEmbed, TwoFrequencyHandValues) {
  auto e = denoiser::time_embed(1, 4);
  // frequencies 10000^0 = 1 and 10000^(-1/2) = 0.01
  EXPECT_DOUBLE_EQ(e[0], std::sin(1.0));
  EXPECT_DOUBLE_EQ(e[1], std::sin(0.01));
  EXPECT_DOUBLE_EQ(e[2], std::cos(1.0));
  EXPECT_DOUBLE_EQ(e[3], std::cos(0.01));
  EXPECT_EQ(e, denoiser::time_embed(1, 4));
}

TEST(TimeEmbed, OddDimensionRejected) {
  EXPECT_THROW(denoiser::time_embed(3, 5), std::invalid_argument);
}

TEST(UNetConfig, RejectsBadLayouts) {
  UNetConfig c;
  c.channels = {32};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.channels = {32, 32};
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c.channels = {32, 64};
  c.time_dim = 7;
  EXPECT_THROW(c.validate(), std::invalid_argument);
}

TEST(UNet, DeskConfigPreservesShapeAndHalvesFeatures) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(1);
  UNet<float> unet(tree, "unet", {}, rng);
  auto z = nd::randn<float>({3, 4, 8, 14}, rng);
  auto out = unet.forward(Var<float>(z), {1, 100, 200});
  EXPECT_EQ(out.eps.shape(), z.shape());
  ASSERT_EQ(out.features.size(), 3u);
  EXPECT_EQ(out.features[0].shape(), (Shape{3, 32, 8, 14}));
  EXPECT_EQ(out.features[1].shape(), (Shape{3, 64, 4, 7}));
  EXPECT_EQ(out.features[2].shape(), (Shape{3, 128, 2, 4}));
}

TEST(UNet, OddSpatialExtentsStillRoundTrip) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(2);
  UNet<float> unet(tree, "unet", tiny_config(), rng);
  auto z = nd::randn<float>({1, 2, 5, 7}, rng);
  EXPECT_EQ(unet.predict(z, {3}).shape(), z.shape());
}

TEST(UNet, RepeatedCallsAreBitIdentical) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(3);
  UNet<float> unet(tree, "unet", {}, rng);
  auto z = nd::randn<float>({2, 4, 8, 14}, rng);
  EXPECT_EQ(unet.predict(z, {7, 9}), unet.predict(z, {7, 9}));
}

TEST(UNet, ShapeMismatchRaises) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(4);
  UNet<float> unet(tree, "unet", {}, rng);
  EXPECT_THROW(unet.predict(Tensor<float>(Shape{1, 3, 8, 14}), {1}), nd::ShapeError);
  EXPECT_THROW(unet.predict(Tensor<float>(Shape{2, 4, 8, 14}), {1}), nd::ShapeError);
}

TEST(UNet, TimestepChangesPrediction) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(5);
  UNet<float> unet(tree, "unet", {}, rng);
  auto z = nd::randn<float>({1, 4, 8, 14}, rng);
  EXPECT_NE(unet.predict(z, {10}), unet.predict(z, {150}));
}

TEST(UNet, EveryParameterGradientMatchesFiniteDifferences) {
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    nd::ParameterTree<double> tree;
    nd::Rng rng(seed);
    UNet<double> unet(tree, "unet", tiny_config(), rng);
    auto z = nd::randn<double>({2, 2, 4, 6}, rng);
    auto res = nd::check_parameter_gradients(
        tree, [&] { return nd::mean(unet.forward(Var<double>(z), {3, 40}).eps); }, 1e-4, 6, rng);
    EXPECT_LT(res.max_relative_error, 1e-3) << res.worst_parameter << " seed " << seed;
    EXPECT_GT(res.coordinates_checked, 100u);
  }
}

TEST(UNet, EverySkipConnectionInfluencesOutput) {
  nd::ParameterTree<float> tree;
  nd::Rng rng(6);
  UNet<float> unet(tree, "unet", {}, rng);
  auto z = nd::randn<float>({1, 4, 8, 14}, rng);
  auto temb = unet.embed_time({50});
  auto feats = unet.encoder().forward(Var<float>(z), temb);
  const auto base = unet.decode(feats, temb).value();
  for (std::size_t i = 0; i < feats.size(); ++i) {
    auto cut = feats;
    cut[i] = Var<float>(Tensor<float>(feats[i].shape()));
    const auto out = unet.decode(cut, temb).value();
    double diff = 0;
    for (std::size_t k = 0; k < out.size(); ++k) diff += std::abs(out[k] - base[k]);
    EXPECT_GT(diff, 1e-3) << "level " << i;
  }
}

TEST(DenoisingLoss, OracleModelHasZeroLoss) {
  auto sched = diffusion::NoiseSchedule::linear(200, 1e-4, 2e-2);
  nd::Rng rng(7);
  auto z = nd::randn<float>({6, 4, 8, 14}, rng);
  const auto draw = denoiser::draw_noise(z, sched, 42);
  denoiser::EpsModel<float> oracle = [&](const Var<float>& z_t, const std::vector<std::size_t>& ts) {
    EXPECT_EQ(z_t.value(), draw.z_t);
    EXPECT_EQ(ts, draw.ts);
    return Var<float>(draw.eps);
  };
  EXPECT_EQ(denoiser::denoising_loss(oracle, z, sched, 42).value()[0], 0.0f);
}

TEST(DenoisingLoss, ZeroModelGivesUnitLossPerElement) {
  auto sched = diffusion::NoiseSchedule::linear(200, 1e-4, 2e-2);
  nd::Rng rng(8);
  auto z = nd::randn<double>({256, 4, 8, 14}, rng);
  denoiser::EpsModel<double> zero = [](const Var<double>& z_t, const std::vector<std::size_t>&) {
    return Var<double>(Tensor<double>(z_t.shape()));
  };
  EXPECT_NEAR(denoiser::denoising_loss(zero, z, sched, 3).value()[0], 1.0, 0.05);
}

TEST(DenoisingLoss, DrawsCoverScheduleAndAreSeeded) {
  auto sched = diffusion::NoiseSchedule::linear(10, 1e-4, 2e-2);
  Tensor<float> z(Shape{500, 1});
  auto a = denoiser::draw_noise(z, sched, 1);
  auto b = denoiser::draw_noise(z, sched, 1);
  EXPECT_EQ(a.ts, b.ts);
  EXPECT_EQ(a.eps, b.eps);
  EXPECT_EQ(*std::min_element(a.ts.begin(), a.ts.end()), 1u);
  EXPECT_EQ(*std::max_element(a.ts.begin(), a.ts.end()), 10u);
}

TEST(DenoisingLoss, NonNegativeForRandomModel) {
  auto sched = diffusion::NoiseSchedule::linear(200, 1e-4, 2e-2);
  nd::ParameterTree<float> tree;
  nd::Rng rng(9);
  UNet<float> unet(tree, "unet", {}, rng);
  auto z = nd::randn<float>({4, 4, 8, 14}, rng);
  for (std::uint64_t s = 0; s < 5; ++s) {
    EXPECT_GE(denoiser::denoising_loss(unet, z, sched, s).value()[0], 0.0f);
  }
}

// Fixed tiny dataset: four structured latents; batch 8 resampled per step.
TEST(DenoisingTraining, FiveHundredAdamStepsCutSmoothedLoss) {
  auto sched = diffusion::NoiseSchedule::linear(200, 1e-4, 2e-2);
  nd::ParameterTree<float> tree;
  nd::Rng rng(10);
  UNet<float> unet(tree, "unet", {}, rng);
  Tensor<float> data(Shape{4, 4, 8, 14});
  for (std::size_t n = 0; n < 4; ++n)
    for (std::size_t c = 0; c < 4; ++c)
      for (std::size_t f = 0; f < 8; ++f)
        for (std::size_t s = 0; s < 14; ++s)
          data.at({n, c, f, s}) = std::sin(0.5 * (n + 1) * s + c) * (f % 2 ? 1.0f : -1.0f);

  nd::AdamState<float> adam;
  adam.config.learning_rate = 1e-3;
  std::vector<double> losses;
  std::uniform_int_distribution<std::size_t> pick(0, 3);
  for (std::size_t step = 0; step < 500; ++step) {
    Tensor<float> batch(Shape{8, 4, 8, 14});
    const std::size_t per = 4 * 8 * 14;
    for (std::size_t b = 0; b < 8; ++b) {
      const std::size_t src = pick(rng);
      std::copy_n(data.data() + src * per, per, batch.data() + b * per);
    }
    tree.zero_grad();
    auto loss = denoiser::denoising_loss(unet, batch, sched, 1000 + step);
    loss.backward();
    nd::adam_step(tree, adam);
    losses.push_back(loss.value()[0]);
  }
  const double first = std::accumulate(losses.begin(), losses.begin() + 50, 0.0) / 50;
  const double last = std::accumulate(losses.end() - 50, losses.end(), 0.0) / 50;
  EXPECT_LE(last, 0.7 * first) << "first " << first << " last " << last;
}
