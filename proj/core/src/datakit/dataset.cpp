#include <cmath>
#include <map>
#include <set>

#include "eegldm/datakit/datakit.hpp"

namespace eegldm::datakit {

std::size_t ChunkSpec::eeg_steps() const {
  return static_cast<std::size_t>(std::llround(chunk_seconds * eeg_rate));
}

std::size_t ChunkSpec::spec_frames() const {
  return static_cast<std::size_t>(std::llround(chunk_seconds * spec_fps));
}

void to_json(nlohmann::json& j, const ChunkSpec& c) {
  j = {{"chunk_seconds", c.chunk_seconds}, {"eeg_rate", c.eeg_rate}, {"spec_fps", c.spec_fps}};
}

void from_json(const nlohmann::json& j, ChunkSpec& c) {
  j.at("chunk_seconds").get_to(c.chunk_seconds);
  j.at("eeg_rate").get_to(c.eeg_rate);
  j.at("spec_fps").get_to(c.spec_fps);
}

namespace {

Tensor<float> columns(const Tensor<float>& m, std::size_t begin, std::size_t count) {
  const std::size_t rows = m.dim(0), width = m.dim(1);
  Tensor<float> out(Shape{rows, count});
  for (std::size_t r = 0; r < rows; ++r) {
    std::copy_n(m.data() + r * width + begin, count, out.data() + r * count);
  }
  return out;
}

}  // namespace

std::vector<PairedExample> chunk_align(const Tensor<float>& eeg, const Tensor<float>& spectrogram,
                                       const ChunkSpec& spec, std::size_t subject,
                                       std::size_t track) {
  if (eeg.rank() != 2 || spectrogram.rank() != 2) {
    throw DataError("chunk_align: both streams must be [rows, time] matrices");
  }
  if (!(spec.chunk_seconds > 0 && spec.eeg_rate > 0 && spec.spec_fps > 0)) {
    throw DataError("chunk_align: chunk length and rates must be positive");
  }
  const std::size_t ylen = spec.eeg_steps(), xlen = spec.spec_frames();
  if (ylen == 0 || xlen == 0) throw DataError("chunk_align: chunk shorter than one sample");
  const double ydur = static_cast<double>(eeg.dim(1)) / spec.eeg_rate;
  const double xdur = static_cast<double>(spectrogram.dim(1)) / spec.spec_fps;
  if (std::abs(ydur - xdur) >= spec.chunk_seconds) {
    throw DataError("chunk_align: stream durations differ (" + std::to_string(ydur) + " s vs " +
                    std::to_string(xdur) + " s)");
  }
  const std::size_t count = std::min(eeg.dim(1) / ylen, spectrogram.dim(1) / xlen);
  std::vector<PairedExample> out;
  out.reserve(count);
  for (std::size_t k = 0; k < count; ++k) {
    out.push_back({columns(eeg, k * ylen, ylen), columns(spectrogram, k * xlen, xlen), subject,
                   track, k});
  }
  return out;
}

DatasetSplit split_dataset(const std::vector<PairedExample>& examples, const SplitRatios& ratios,
                           const std::vector<std::size_t>& ood_tracks) {
  if (ratios.train < 0 || ratios.validation < 0 || ratios.test < 0 ||
      std::abs(ratios.train + ratios.validation + ratios.test - 1.0) > 1e-9) {
    throw DataError("split ratios must be non-negative and sum to 1");
  }
  const std::set<std::size_t> ood(ood_tracks.begin(), ood_tracks.end());
  std::map<std::pair<std::size_t, std::size_t>, std::vector<std::size_t>> groups;
  for (std::size_t i = 0; i < examples.size(); ++i) {
    groups[{examples[i].track, examples[i].subject}].push_back(i);
  }
  DatasetSplit split;
  for (auto& [key, idx] : groups) {
    std::sort(idx.begin(), idx.end(),
              [&](std::size_t a, std::size_t b) { return examples[a].chunk < examples[b].chunk; });
    if (ood.count(key.first)) {
      split.ood.insert(split.ood.end(), idx.begin(), idx.end());
      continue;
    }
    const std::size_t n = idx.size();
    if (n < 10) {
      throw DataError("track " + std::to_string(key.first) + " subject " +
                      std::to_string(key.second) + " has " + std::to_string(n) +
                      " chunks; at least 10 are needed for three splits");
    }
    const auto cut = [n](double r) {
      return static_cast<std::size_t>(std::floor(r * static_cast<double>(n) + 1e-9));
    };
    const std::size_t train_end = cut(ratios.train);
    const std::size_t val_end = cut(ratios.train + ratios.validation);
    for (std::size_t k = 0; k < n; ++k) {
      auto& dst = k < train_end ? split.train : k < val_end ? split.validation : split.test;
      dst.push_back(idx[k]);
    }
  }
  return split;
}

void to_json(nlohmann::json& j, const DatasetConfig& c) {
  j = {{"preprocess", c.preprocess},
       {"chunks", c.chunks},
       {"ratios", {c.ratios.train, c.ratios.validation, c.ratios.test}},
       {"ood_tracks", c.ood_tracks}};
}

void from_json(const nlohmann::json& j, DatasetConfig& c) {
  j.at("preprocess").get_to(c.preprocess);
  j.at("chunks").get_to(c.chunks);
  const auto r = j.at("ratios").get<std::vector<double>>();
  if (r.size() != 3) throw DataError("dataset: ratios must have three entries");
  c.ratios = {r[0], r[1], r[2]};
  j.at("ood_tracks").get_to(c.ood_tracks);
}

DatasetConfig default_dataset_config(const SynthConfig& synth) {
  DatasetConfig c;
  for (std::size_t k = 0; k < synth.artifact_channels; ++k) {
    c.preprocess.excluded_channels.push_back(synth.eeg_channels + k);
  }
  c.chunks.eeg_rate = synth.eeg_rate;
  c.chunks.spec_fps = synth.spec_fps;
  return c;
}

Dataset build_dataset(const SynthCorpus& corpus, const DatasetConfig& config) {
  Dataset ds;
  for (const auto& rec : corpus.recordings) {
    if (rec.track >= corpus.spectrograms.size()) {
      throw DataError("recording refers to unknown track " + std::to_string(rec.track));
    }
    if (std::abs(rec.rate - config.chunks.eeg_rate) > 1e-9) {
      throw DataError("recording rate " + std::to_string(rec.rate) + " Hz differs from the " +
                      std::to_string(config.chunks.eeg_rate) + " Hz chunk spec");
    }
    const Tensor<float> eeg = prepare_recording(rec, config.preprocess);
    auto chunks =
        chunk_align(eeg, corpus.spectrograms[rec.track], config.chunks, rec.subject, rec.track);
    for (auto& ex : chunks) {
      ex.y = scale_and_clamp(ex.y, config.preprocess);
      ds.examples.push_back(std::move(ex));
    }
  }
  ds.split = split_dataset(ds.examples, config.ratios, config.ood_tracks);
  return ds;
}

nlohmann::json dataset_manifest(const Dataset& dataset, const DatasetConfig& config) {
  std::vector<std::string> role(dataset.examples.size(), "unused");
  const auto mark = [&](const std::vector<std::size_t>& idx, const char* name) {
    for (auto i : idx) role.at(i) = name;
  };
  mark(dataset.split.train, "train");
  mark(dataset.split.validation, "validation");
  mark(dataset.split.test, "test");
  mark(dataset.split.ood, "ood");
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < dataset.examples.size(); ++i) {
    const auto& ex = dataset.examples[i];
    rows.push_back({{"index", i},
                    {"track", ex.track},
                    {"subject", ex.subject},
                    {"chunk", ex.chunk},
                    {"split", role[i]},
                    {"y_shape", ex.y.shape()},
                    {"x_shape", ex.x.shape()}});
  }
  return {{"config", config},
          {"counts",
           {{"train", dataset.split.train.size()},
            {"validation", dataset.split.validation.size()},
            {"test", dataset.split.test.size()},
            {"ood", dataset.split.ood.size()}}},
          {"examples", std::move(rows)}};
}

}  // namespace eegldm::datakit
