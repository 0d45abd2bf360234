#include <gtest/gtest.h>

#include <algorithm>
#include <cstring>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "eegldm/datakit/datakit.hpp"
#include "eegldm/nd/rng.hpp"

using namespace eegldm;
using namespace eegldm::datakit;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "eegldm_datakit_test";
  std::filesystem::create_directories(dir);
  return dir / name;
}

Tensor<float> ramp(std::size_t channels, std::size_t steps) {
  Tensor<float> t(Shape{channels, steps});
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < steps; ++i) t[c * steps + i] = float(c) + 0.01f * float(i);
  return t;
}

std::vector<PairedExample> fake_examples(std::size_t track, std::size_t subject, std::size_t n) {
  std::vector<PairedExample> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back({{}, {}, subject, track, k});
  return out;
}

SynthConfig small_synth() {
  SynthConfig c;
  c.tracks = 3;
  c.subjects = 2;
  c.duration_seconds = 40.0;
  return c;
}

}  // namespace

TEST(Quantile, LinearInterpolationBetweenOrderStatistics) {
  EXPECT_DOUBLE_EQ(quantile({4, 1, 3, 2}, 0.5), 2.5);
  EXPECT_DOUBLE_EQ(quantile({1, 2, 3, 4, 5}, 0.25), 2.0);
  EXPECT_DOUBLE_EQ(quantile({0, 10}, 0.75), 7.5);
  EXPECT_THROW(quantile({}, 0.5), DataError);
}

TEST(Preprocess, ExclusionDropsListedChannelsInOrder) {
  const auto data = ramp(128, 1200);
  const auto out = exclude_channels(data, {0, 7, 64, 127});
  ASSERT_EQ(out.shape(), (Shape{124, 1200}));
  EXPECT_EQ(out[0], data[1 * 1200]);
  EXPECT_EQ(out[6 * 1200], data[8 * 1200]);
  EXPECT_THROW(exclude_channels(data, {128}), DataError);
  std::vector<std::size_t> all(128);
  for (std::size_t i = 0; i < 128; ++i) all[i] = i;
  EXPECT_THROW(exclude_channels(data, all), DataError);
}

TEST(Preprocess, FullPipelineOn128ChannelsYields124) {
  nd::Rng rng(1);
  RawRecording rec{nd::randn<float>({128, 1500}, rng), 1000.0, 0, 0};
  PreprocessConfig cfg;
  cfg.excluded_channels = {125, 126, 127, 124};
  EXPECT_EQ(preprocess(rec, cfg).shape(), (Shape{124, 1500}));
}

TEST(Preprocess, BaselineCenteringUsesOnlyTheWindow) {
  Tensor<float> t(Shape{1, 6}, std::vector<float>{1, 3, 10, 10, 10, 10});
  const auto out = center_on_baseline(t, 2);
  EXPECT_EQ(out, (Tensor<float>(Shape{1, 6}, std::vector<float>{-1, 1, 8, 8, 8, 8})));
  EXPECT_THROW(center_on_baseline(t, 6), DataError);
}

TEST(Preprocess, ConstantChannelFallsBackToUnitDivisorAndZeros) {
  RawRecording rec{Tensor<float>(Shape{2, 2000}, 3.25f), 1000.0, 0, 0};
  for (std::size_t i = 0; i < 2000; ++i) rec.data[2000 + i] = float(i % 7);
  PreprocessConfig cfg;
  const auto out = preprocess(rec, cfg);
  for (std::size_t i = 0; i < 2000; ++i) ASSERT_EQ(out[i], 0.0f);
  const auto direct = robust_scale(Tensor<float>(Shape{1, 5}, 2.0f), 0.25, 0.75);
  EXPECT_EQ(direct, Tensor<float>(Shape{1, 5}));
}

TEST(Preprocess, RobustScaleMatchesHandComputedIqr) {
  Tensor<float> t(Shape{1, 5}, std::vector<float>{1, 2, 3, 4, 100});
  // median 3, q25 2, q75 4
  EXPECT_EQ(robust_scale(t, 0.25, 0.75),
            (Tensor<float>(Shape{1, 5}, std::vector<float>{-1, -0.5f, 0, 0.5f, 48.5f})));
}

TEST(Preprocess, SampleAtTwentyFiveStdsClipsToTwenty) {
  // 2000 samples of +-1 plus one outlier v with v = 25 * std(all samples).
  const std::size_t n = 2000;
  double v = 25.0;
  for (int it = 0; it < 200; ++it) {
    const double m = v / (n + 1);
    const double var = (n * 1.0 + v * v) / (n + 1) - m * m;
    v = 25.0 * std::sqrt(var);
  }
  Tensor<float> t(Shape{1, n + 1});
  for (std::size_t i = 0; i < n; ++i) t[i] = i % 2 ? 1.0f : -1.0f;
  t[n] = float(v);
  const auto bounds = clamp_bounds(t, 20.0);
  const double m = v / (n + 1);
  const double std = std::sqrt((n * 1.0 + v * v) / (n + 1) - m * m);
  EXPECT_NEAR(v / std, 25.0, 1e-4);
  EXPECT_NEAR(bounds[0], 20.0 * std, 1e-3);
  const auto out = clamp_std(t, 20.0);
  EXPECT_NEAR(out[n], 20.0 * std, 1e-3);
  EXPECT_EQ(out[0], -1.0f);
}

TEST(Preprocess, ClampingTwiceAtFixedBoundsEqualsOnce) {
  nd::Rng rng(3);
  auto t = nd::randn<float>({4, 500}, rng);
  t[10] = 400.0f;
  t[700] = -300.0f;
  const auto bounds = clamp_bounds(t, 3.0);
  const auto once = clamp_to(t, bounds);
  EXPECT_EQ(clamp_to(once, bounds), once);
}

TEST(Preprocess, DeterministicAndChannelPermutationEquivariant) {
  nd::Rng rng(4);
  RawRecording rec{nd::randn<float>({3, 1200}, rng, 4.0), 100.0, 0, 0};
  PreprocessConfig cfg;
  cfg.baseline_steps = 100;
  const auto a = preprocess(rec, cfg);
  EXPECT_EQ(a, preprocess(rec, cfg));
  RawRecording swapped = rec;
  std::copy_n(rec.data.data(), 1200, swapped.data.data() + 2400);
  std::copy_n(rec.data.data() + 2400, 1200, swapped.data.data());
  const auto b = preprocess(swapped, cfg);
  EXPECT_TRUE(std::equal(a.data(), a.data() + 1200, b.data() + 2400));
  EXPECT_TRUE(std::equal(a.data() + 1200, a.data() + 2400, b.data() + 1200));
}

TEST(ChunkAlign, HundredTwentySecondsGiveThirtyFourChunks) {
  ChunkSpec spec{3.5, 160.0, 16.0};
  const auto out = chunk_align(Tensor<float>(Shape{16, 19200}), Tensor<float>(Shape{64, 1920}),
                               spec, 2, 5);
  ASSERT_EQ(out.size(), 34u);
  for (std::size_t k = 0; k < out.size(); ++k) {
    EXPECT_EQ(out[k].y.shape(), (Shape{16, 560}));
    EXPECT_EQ(out[k].x.shape(), (Shape{64, 56}));
    EXPECT_EQ(out[k].chunk, k);
    EXPECT_EQ(out[k].subject, 2u);
    EXPECT_EQ(out[k].track, 5u);
    EXPECT_DOUBLE_EQ(560 / 160.0, 56 / 16.0);
  }
}

TEST(ChunkAlign, ChunksAreConsecutiveNonOverlappingSlices) {
  ChunkSpec spec{0.5, 10.0, 4.0};
  const auto y = ramp(2, 20), x = ramp(3, 8);
  const auto out = chunk_align(y, x, spec, 0, 0);
  ASSERT_EQ(out.size(), 4u);
  EXPECT_EQ(out[1].y[0], y[5]);
  EXPECT_EQ(out[1].y[5], y[20 + 5]);
  EXPECT_EQ(out[3].x[1], x[7]);
}

TEST(ChunkAlign, ExactlyOneChunkAndShorterThanOne) {
  ChunkSpec spec{3.5, 160.0, 16.0};
  EXPECT_EQ(chunk_align(Tensor<float>(Shape{4, 560}), Tensor<float>(Shape{8, 56}), spec, 0, 0).size(),
            1u);
  const auto none =
      chunk_align(Tensor<float>(Shape{4, 544}), Tensor<float>(Shape{8, 54}), spec, 0, 0);
  EXPECT_TRUE(none.empty());
}

TEST(ChunkAlign, DurationMismatchBeyondOneChunkRaises) {
  ChunkSpec spec{3.5, 160.0, 16.0};
  EXPECT_THROW(
      chunk_align(Tensor<float>(Shape{4, 19200}), Tensor<float>(Shape{8, 1800}), spec, 0, 0),
      DataError);
  EXPECT_NO_THROW(
      chunk_align(Tensor<float>(Shape{4, 19200}), Tensor<float>(Shape{8, 1900}), spec, 0, 0));
}

TEST(Split, HundredChunksGiveEightyTenTen) {
  const auto ex = fake_examples(1, 0, 100);
  const auto s = split_dataset(ex, {}, {});
  ASSERT_EQ(s.train.size(), 80u);
  ASSERT_EQ(s.validation.size(), 10u);
  ASSERT_EQ(s.test.size(), 10u);
  EXPECT_EQ(ex[s.train.back()].chunk, 79u);
  EXPECT_EQ(ex[s.validation.front()].chunk, 80u);
  EXPECT_EQ(ex[s.test.front()].chunk, 90u);
}

TEST(Split, TenChunksGiveEightOneOne) {
  const auto s = split_dataset(fake_examples(1, 0, 10), {}, {});
  EXPECT_EQ(s.train.size(), 8u);
  EXPECT_EQ(s.validation.size(), 1u);
  EXPECT_EQ(s.test.size(), 1u);
}

TEST(Split, ThirtyFourChunksCutAtFloors) {
  const auto s = split_dataset(fake_examples(1, 0, 34), {}, {});
  EXPECT_EQ(s.train.size(), 27u);  // floor(27.2)
  EXPECT_EQ(s.validation.size(), 3u);  // floor(30.6) - 27
  EXPECT_EQ(s.test.size(), 4u);
}

TEST(Split, OodTrackAppearsOnlyInOodSet) {
  auto ex = fake_examples(0, 0, 12);
  for (auto& e : fake_examples(3, 0, 20)) ex.push_back(e);
  for (auto& e : fake_examples(3, 1, 20)) ex.push_back(e);
  const auto s = split_dataset(ex, {}, {0});
  EXPECT_EQ(s.ood.size(), 12u);
  std::set<std::size_t> seen;
  for (const auto* part : {&s.train, &s.validation, &s.test}) {
    for (auto i : *part) {
      EXPECT_NE(ex[i].track, 0u);
      EXPECT_TRUE(seen.insert(i).second) << "index " << i << " in two splits";
    }
  }
  EXPECT_EQ(seen.size(), 40u);
}

TEST(Split, ShortTrackAndBadRatiosRaise) {
  EXPECT_THROW(split_dataset(fake_examples(1, 0, 9), {}, {}), DataError);
  EXPECT_NO_THROW(split_dataset(fake_examples(1, 0, 9), {}, {1}));
  EXPECT_THROW(split_dataset(fake_examples(1, 0, 20), {0.8, 0.1, 0.2}, {}), DataError);
}

TEST(Synth, TrivialConfigRowsEqualUpsampledEnvelopes) {
  SynthConfig c = small_synth();
  c.noise_std = 0;
  c.dc_offset_std = 0;
  c.identity_lift = true;
  c.identity_mixing = true;
  const auto corpus = synth_generate(c, 11);
  const std::size_t frames = 640, steps = 6400;
  for (const auto& rec : corpus.recordings) {
    const auto& env = corpus.envelopes[rec.track];
    ASSERT_EQ(env.shape(), (Shape{c.bands, frames}));
    ASSERT_EQ(rec.data.shape(), (Shape{c.eeg_channels + c.artifact_channels, steps}));
    for (std::size_t b = 0; b < c.bands; ++b) {
      for (std::size_t i = 0; i < steps; ++i) {
        // 10 samples per frame
        const std::size_t j = i / 10, k = std::min(j + 1, frames - 1);
        const double w = (i % 10) / 10.0;
        const double expect = env[b * frames + j] + w * (env[b * frames + k] - env[b * frames + j]);
        ASSERT_FLOAT_EQ(rec.data[b * steps + i], float(expect)) << "band " << b << " step " << i;
      }
    }
    for (std::size_t ch = c.bands; ch < c.eeg_channels; ++ch) {
      for (std::size_t i = 0; i < steps; ++i) ASSERT_EQ(rec.data[ch * steps + i], 0.0f);
    }
  }
}

TEST(Synth, SameSeedIsBitIdenticalOtherSeedDiffers) {
  const auto a = synth_generate(small_synth(), 5);
  const auto b = synth_generate(small_synth(), 5);
  const auto c = synth_generate(small_synth(), 6);
  ASSERT_EQ(a.recordings.size(), 6u);
  for (std::size_t i = 0; i < a.recordings.size(); ++i) {
    EXPECT_EQ(a.recordings[i].data, b.recordings[i].data);
    EXPECT_NE(a.recordings[i].data, c.recordings[i].data);
  }
  EXPECT_EQ(a.spectrograms, b.spectrograms);
}

TEST(Synth, DistinctTracksHaveDistinctEnvelopes) {
  const auto corpus = synth_generate(small_synth(), 9);
  double min_dist = INFINITY;
  for (std::size_t i = 0; i < corpus.envelopes.size(); ++i) {
    for (std::size_t j = i + 1; j < corpus.envelopes.size(); ++j) {
      double d = 0;
      for (std::size_t k = 0; k < corpus.envelopes[i].size(); ++k) {
        const double e = corpus.envelopes[i][k] - corpus.envelopes[j][k];
        d += e * e;
      }
      min_dist = std::min(min_dist, std::sqrt(d));
    }
  }
  EXPECT_GT(min_dist, 0.0);
}

TEST(Synth, SpectrogramIsFiniteAndNonNegative) {
  const auto corpus = synth_generate(small_synth(), 2);
  for (const auto& x : corpus.spectrograms) {
    ASSERT_EQ(x.shape(), (Shape{64, 640}));
    EXPECT_TRUE(x.all_finite());
    EXPECT_GE(*std::min_element(x.storage().begin(), x.storage().end()), 0.0f);
  }
}

TEST(Synth, InvalidDimsRaise) {
  SynthConfig c = small_synth();
  c.tracks = 0;
  EXPECT_THROW(synth_generate(c, 1), DataError);
  c = small_synth();
  c.identity_lift = true;
  c.eeg_channels = 4;
  EXPECT_THROW(synth_generate(c, 1), DataError);
}

TEST(Dataset, DeskCorpusBuildsAlignedChunksAndSplits) {
  SynthConfig sc = small_synth();
  const auto corpus = synth_generate(sc, 3);
  const auto cfg = default_dataset_config(sc);
  const auto ds = build_dataset(corpus, cfg);
  // 40 s at 3.5 s: 11 chunks per recording, 3 tracks x 2 subjects
  ASSERT_EQ(ds.examples.size(), 66u);
  EXPECT_EQ(ds.split.ood.size(), 22u);
  EXPECT_EQ(ds.split.train.size(), 4u * 8u);
  EXPECT_EQ(ds.split.validation.size(), 4u);
  EXPECT_EQ(ds.split.test.size(), 4u * 2u);
  for (const auto& ex : ds.examples) {
    ASSERT_EQ(ex.y.shape(), (Shape{16, 560}));
    ASSERT_EQ(ex.x.shape(), (Shape{64, 56}));
    EXPECT_TRUE(ex.y.all_finite());
  }
  const auto manifest = dataset_manifest(ds, cfg);
  EXPECT_EQ(manifest["counts"]["ood"], 22);
  EXPECT_EQ(manifest["examples"].size(), 66u);
  EXPECT_EQ(manifest["config"].get<DatasetConfig>().preprocess.excluded_channels,
            (std::vector<std::size_t>{16, 17}));
}

TEST(Dataset, ConfigJsonRoundTrip) {
  DatasetConfig c;
  c.preprocess.excluded_channels = {1, 2};
  c.preprocess.quantile_low = 0.1;
  c.chunks.chunk_seconds = 2.0;
  c.ood_tracks = {0, 4};
  const nlohmann::json j = c;
  EXPECT_EQ(nlohmann::json(j.get<DatasetConfig>()), j);
  SynthConfig s;
  s.noise_std = 0.25;
  const nlohmann::json js = s;
  EXPECT_EQ(nlohmann::json(js.get<SynthConfig>()), js);
}

TEST(TensorIo, CorpusRoundTripIsBitExact) {
  const auto corpus = synth_generate(small_synth(), 4);
  const auto path = temp_file("corpus.eegt");
  save_corpus(corpus, path);
  const auto back = load_corpus(path);
  EXPECT_EQ(back.seed, 4u);
  ASSERT_EQ(back.recordings.size(), corpus.recordings.size());
  for (std::size_t i = 0; i < corpus.recordings.size(); ++i) {
    EXPECT_EQ(back.recordings[i].data, corpus.recordings[i].data);
    EXPECT_EQ(back.recordings[i].track, corpus.recordings[i].track);
    EXPECT_EQ(back.recordings[i].subject, corpus.recordings[i].subject);
  }
  EXPECT_EQ(back.spectrograms, corpus.spectrograms);
  EXPECT_EQ(back.envelopes, corpus.envelopes);
}

TEST(TensorIo, TruncatedCorpusFileIsCorruption) {
  const auto path = temp_file("truncated.eegt");
  save_corpus(synth_generate(small_synth(), 4), path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 3);
  EXPECT_THROW(load_corpus(path), nd::CorruptContainerError);
}

TEST(TensorIo, WriteTensorsPayloadIsExactlyShapeTimesFourBytes) {
  const auto path = temp_file("eeg124.eegt");
  write_tensors(path, {{"eeg", Tensor<float>(Shape{124, 3500}, 0.5f)}});
  const auto c = read_tensors(path);
  EXPECT_EQ(c.get<float>("eeg").shape(), (Shape{124, 3500}));
  std::ifstream in(path, std::ios::binary);
  char header[16];
  in.read(header, 16);
  std::uint64_t mlen = 0;
  std::memcpy(&mlen, header + 8, 8);
  EXPECT_EQ(std::filesystem::file_size(path) - 16 - mlen, 124u * 3500u * 4u);
}
