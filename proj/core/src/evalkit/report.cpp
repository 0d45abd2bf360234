#include "eegldm/evalkit/report.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

namespace eegldm::evalkit {

void to_json(nlohmann::json& j, const MetricSummary& m) {
  j = {{"pairs", m.pairs},
       {"fad_global", m.fad_global},
       {"fad_frame", m.fad_frame},
       {"clap", m.clap},
       {"pearson_frame", m.pearson_frame},
       {"mse_frame", m.mse_frame},
       {"significance",
        {{"clap", m.clap_sig}, {"pearson_frame", m.pearson_sig}, {"mse_frame", m.mse_sig}}},
       {"per_pair",
        {{"clap", m.per_pair.clap},
         {"pearson_frame", m.per_pair.pearson_frame},
         {"mse_frame", m.per_pair.mse_frame}}}};
}

void to_json(nlohmann::json& j, const EvalConfig& c) {
  j = {{"resamples", c.resamples}, {"seed", c.seed}, {"ridge", c.ridge}};
}

void from_json(const nlohmann::json& j, EvalConfig& c) {
  j.at("resamples").get_to(c.resamples);
  j.at("seed").get_to(c.seed);
  j.at("ridge").get_to(c.ridge);
}

Embedding mean_frame(const FrameEmbeddingSeq& seq) {
  Embedding m(seq.dim(), 0.0);
  for (std::size_t k = 0; k < seq.count(); ++k)
    for (std::size_t d = 0; d < seq.dim(); ++d) m[d] += seq.frames[k * seq.dim() + d];
  for (auto& v : m) v /= static_cast<double>(seq.count());
  return m;
}

MetricSummary evaluate_pairs(const Embedder& embedder, const std::vector<Tensor<float>>& decoded,
                             const std::vector<Tensor<float>>& truth, const EvalConfig& config) {
  if (decoded.size() != truth.size()) throw MetricError("evaluate: decoded/truth counts differ");
  const std::size_t n = decoded.size();
  if (n < 2) throw MetricError("evaluate: need at least 2 pairs");
  std::vector<Embedding> gd, gt, fd, ft;
  std::vector<FrameEmbeddingSeq> sd, st;
  for (std::size_t i = 0; i < n; ++i) {
    gd.push_back(embedder.global(decoded[i]));
    gt.push_back(embedder.global(truth[i]));
    sd.push_back(embedder.frames(decoded[i]));
    st.push_back(embedder.frames(truth[i]));
    fd.push_back(mean_frame(sd.back()));
    ft.push_back(mean_frame(st.back()));
  }
  MetricSummary m;
  m.pairs = n;
  m.fad_global = fad(gt, gd, config.ridge);
  m.fad_frame = fad(ft, fd, config.ridge);
  for (std::size_t i = 0; i < n; ++i) {
    m.per_pair.clap.push_back(clap_score(gd[i], gt[i]));
    m.per_pair.pearson_frame.push_back(pearson_frames(sd[i], st[i]));
    m.per_pair.mse_frame.push_back(mse_frames(sd[i], st[i]));
  }
  const auto mean = [n](const std::vector<double>& v) {
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(n);
  };
  m.clap = mean(m.per_pair.clap);
  m.pearson_frame = mean(m.per_pair.pearson_frame);
  m.mse_frame = mean(m.per_pair.mse_frame);
  m.clap_sig = bootstrap_p([&](std::size_t d, std::size_t g) { return clap_score(gd[d], gt[g]); },
                           n, config.resamples, config.seed, Direction::kHigherBetter);
  m.pearson_sig = bootstrap_p(
      [&](std::size_t d, std::size_t g) { return pearson_frames(sd[d], st[g]); }, n,
      config.resamples, config.seed + 1, Direction::kHigherBetter);
  m.mse_sig = bootstrap_p([&](std::size_t d, std::size_t g) { return mse_frames(sd[d], st[g]); },
                          n, config.resamples, config.seed + 2, Direction::kLowerBetter);
  return m;
}

void write_matrix_csv(const Tensor<double>& matrix, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  out << "decoded\\truth";
  for (std::size_t j = 0; j < cols; ++j) out << ",track" << j;
  out << "\n";
  char buf[32];
  for (std::size_t i = 0; i < rows; ++i) {
    out << "track" << i;
    for (std::size_t j = 0; j < cols; ++j) {
      std::snprintf(buf, sizeof buf, "%.6f", matrix[i * cols + j]);
      out << ',' << buf;
    }
    out << "\n";
  }
}

void write_matrix_pgm(const Tensor<double>& matrix, const std::filesystem::path& path,
                      std::size_t cell) {
  const std::size_t rows = matrix.dim(0), cols = matrix.dim(1);
  const auto [lo, hi] = std::minmax_element(matrix.storage().begin(), matrix.storage().end());
  const double span = *hi - *lo;
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "P5\n" << cols * cell << ' ' << rows * cell << "\n255\n";
  for (std::size_t y = 0; y < rows * cell; ++y) {
    for (std::size_t x = 0; x < cols * cell; ++x) {
      const double v = matrix[(y / cell) * cols + x / cell];
      const double u = span > 0 ? (v - *lo) / span : 0.5;
      out.put(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * u))));
    }
  }
}

namespace {

std::string fmt(double v, int prec = 3) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.*f", prec, v);
  return buf;
}

std::string fmt_p(double p) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.4f", p);
  return buf;
}

}  // namespace

std::string format_table(const std::vector<TableRow>& rows) {
  std::ostringstream out;
  const char* head[] = {"FAD-g", "FAD-f", "CLAP", "p", "r-frame", "p", "MSE-frame", "p"};
  std::size_t width = 5;
  for (const auto& r : rows) width = std::max(width, r.model.size());
  const auto pad = [](const std::string& s, std::size_t w) {
    return s + std::string(w > s.size() ? w - s.size() : 0, ' ');
  };
  out << pad("model", width) << " | " << pad("test", 8 * 10 - 1) << " | ood\n";
  out << pad("", width);
  for (int g = 0; g < 2; ++g) {
    out << " |";
    for (const char* h : head) out << ' ' << pad(h, 9);
  }
  out << "\n";
  for (const auto& r : rows) {
    out << pad(r.model, width);
    for (const MetricSummary* m : {&r.test, &r.ood}) {
      out << " |";
      for (const std::string& v :
           {fmt(m->fad_global), fmt(m->fad_frame), fmt(m->clap), fmt_p(m->clap_sig.p_value),
            fmt(m->pearson_frame), fmt_p(m->pearson_sig.p_value), fmt(m->mse_frame),
            fmt_p(m->mse_sig.p_value)}) {
        out << ' ' << pad(v, 9);
      }
    }
    out << "\n";
  }
  return out.str();
}

void write_table_csv(const std::vector<TableRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << "model";
  for (const char* split : {"test", "ood"}) {
    for (const char* col : {"fad_global", "fad_frame", "clap", "clap_p", "pearson_frame",
                            "pearson_frame_p", "mse_frame", "mse_frame_p"}) {
      out << ',' << split << '_' << col;
    }
  }
  out << "\n";
  for (const auto& r : rows) {
    out << r.model;
    for (const MetricSummary* m : {&r.test, &r.ood}) {
      out << ',' << fmt(m->fad_global, 6) << ',' << fmt(m->fad_frame, 6) << ','
          << fmt(m->clap, 6) << ',' << fmt(m->clap_sig.p_value, 6) << ','
          << fmt(m->pearson_frame, 6) << ',' << fmt(m->pearson_sig.p_value, 6) << ','
          << fmt(m->mse_frame, 6) << ',' << fmt(m->mse_sig.p_value, 6);
    }
    out << "\n";
  }
}

}  // namespace eegldm::evalkit
