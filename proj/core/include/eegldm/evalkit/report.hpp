#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "eegldm/evalkit/metrics.hpp"

namespace eegldm::evalkit {

struct PairScores {
  std::vector<double> clap, pearson_frame, mse_frame;
};

struct MetricSummary {
  std::size_t pairs = 0;
  double fad_global = 0;
  double fad_frame = 0;  // Gaussian over per-chunk mean frame embeddings
  double clap = 0;
  double pearson_frame = 0;
  double mse_frame = 0;
  SignificanceResult clap_sig, pearson_sig, mse_sig;
  PairScores per_pair;
};

void to_json(nlohmann::json& j, const MetricSummary& m);

struct EvalConfig {
  std::size_t resamples = 4000;
  std::uint64_t seed = 7;
  double ridge = 1e-6;
};

void to_json(nlohmann::json& j, const EvalConfig& c);
void from_json(const nlohmann::json& j, EvalConfig& c);

// decoded[i] is paired with truth[i].
MetricSummary evaluate_pairs(const Embedder& embedder, const std::vector<Tensor<float>>& decoded,
                             const std::vector<Tensor<float>>& truth, const EvalConfig& config);

// Mean frame embedding of one chunk.
Embedding mean_frame(const FrameEmbeddingSeq& seq);

void write_matrix_csv(const Tensor<double>& matrix, const std::filesystem::path& path);
// 8-bit binary graymap, min-max scaled, each entry drawn as a cell x cell block.
void write_matrix_pgm(const Tensor<double>& matrix, const std::filesystem::path& path,
                      std::size_t cell = 16);

struct TableRow {
  std::string model;
  MetricSummary test, ood;
};

// Comparison table with one row per model and test / OOD column groups.
std::string format_table(const std::vector<TableRow>& rows);
void write_table_csv(const std::vector<TableRow>& rows, const std::filesystem::path& path);

}  // namespace eegldm::evalkit
