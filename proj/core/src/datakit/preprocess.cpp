#include <algorithm>
#include <cmath>
#include <set>

#include "eegldm/datakit/datakit.hpp"

namespace eegldm::datakit {

void to_json(nlohmann::json& j, const PreprocessConfig& c) {
  j = {{"excluded_channels", c.excluded_channels},
       {"baseline_steps", c.baseline_steps},
       {"clamp_std", c.clamp_std},
       {"quantiles", {c.quantile_low, c.quantile_high}}};
}

void from_json(const nlohmann::json& j, PreprocessConfig& c) {
  j.at("excluded_channels").get_to(c.excluded_channels);
  j.at("baseline_steps").get_to(c.baseline_steps);
  j.at("clamp_std").get_to(c.clamp_std);
  const auto q = j.at("quantiles").get<std::vector<double>>();
  if (q.size() != 2) throw DataError("preprocess: quantiles must be a pair");
  c.quantile_low = q[0];
  c.quantile_high = q[1];
}

namespace {

void require_matrix(const Tensor<float>& data, const char* what) {
  if (data.rank() != 2 || data.dim(0) == 0 || data.dim(1) == 0) {
    throw DataError(std::string(what) + ": expected a non-empty [channels, steps] matrix, got " +
                    nd::shape_to_string(data.shape()));
  }
}

}  // namespace

double quantile(std::vector<double> values, double q) {
  if (values.empty()) throw DataError("quantile of an empty sequence");
  if (!(q >= 0.0 && q <= 1.0)) throw DataError("quantile outside [0, 1]");
  std::sort(values.begin(), values.end());
  const double pos = q * static_cast<double>(values.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const std::size_t hi = std::min(lo + 1, values.size() - 1);
  return values[lo] + (pos - static_cast<double>(lo)) * (values[hi] - values[lo]);
}

Tensor<float> exclude_channels(const Tensor<float>& data,
                               const std::vector<std::size_t>& excluded) {
  require_matrix(data, "exclude_channels");
  const std::size_t channels = data.dim(0), steps = data.dim(1);
  const std::set<std::size_t> drop(excluded.begin(), excluded.end());
  for (auto c : drop) {
    if (c >= channels) {
      throw DataError("exclude_channels: channel " + std::to_string(c) + " out of range (" +
                      std::to_string(channels) + " channels)");
    }
  }
  if (drop.size() == channels) throw DataError("exclude_channels: every channel excluded");
  Tensor<float> out(Shape{channels - drop.size(), steps});
  std::size_t row = 0;
  for (std::size_t c = 0; c < channels; ++c) {
    if (drop.count(c)) continue;
    std::copy_n(data.data() + c * steps, steps, out.data() + row * steps);
    ++row;
  }
  return out;
}

Tensor<float> center_on_baseline(const Tensor<float>& data, std::size_t baseline_steps) {
  require_matrix(data, "center_on_baseline");
  const std::size_t channels = data.dim(0), steps = data.dim(1);
  if (baseline_steps == 0) throw DataError("center_on_baseline: empty baseline window");
  if (baseline_steps >= steps) {
    throw DataError("recording too short: " + std::to_string(steps) +
                    " steps, baseline window is " + std::to_string(baseline_steps));
  }
  Tensor<float> out = data;
  for (std::size_t c = 0; c < channels; ++c) {
    float* row = out.data() + c * steps;
    double sum = 0;
    for (std::size_t i = 0; i < baseline_steps; ++i) sum += row[i];
    const double mean = sum / static_cast<double>(baseline_steps);
    for (std::size_t i = 0; i < steps; ++i) row[i] = static_cast<float>(row[i] - mean);
  }
  return out;
}

Tensor<float> robust_scale(const Tensor<float>& data, double q_low, double q_high) {
  require_matrix(data, "robust_scale");
  if (!(q_low < q_high)) throw DataError("robust_scale: quantile pair must be increasing");
  const std::size_t channels = data.dim(0), steps = data.dim(1);
  Tensor<float> out(data.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    const float* in = data.data() + c * steps;
    std::vector<double> v(in, in + steps);
    const double median = quantile(v, 0.5);
    double spread = quantile(v, q_high) - quantile(v, q_low);
    if (spread == 0.0) spread = 1.0;
    for (std::size_t i = 0; i < steps; ++i) {
      out.data()[c * steps + i] = static_cast<float>((in[i] - median) / spread);
    }
  }
  return out;
}

std::vector<double> clamp_bounds(const Tensor<float>& data, double k) {
  require_matrix(data, "clamp_bounds");
  if (!(k > 0)) throw DataError("clamp multiple must be positive");
  const std::size_t channels = data.dim(0), steps = data.dim(1);
  std::vector<double> bounds(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    const float* row = data.data() + c * steps;
    double mean = 0;
    for (std::size_t i = 0; i < steps; ++i) mean += row[i];
    mean /= static_cast<double>(steps);
    double var = 0;
    for (std::size_t i = 0; i < steps; ++i) var += (row[i] - mean) * (row[i] - mean);
    bounds[c] = k * std::sqrt(var / static_cast<double>(steps));
  }
  return bounds;
}

Tensor<float> clamp_to(const Tensor<float>& data, const std::vector<double>& bounds) {
  require_matrix(data, "clamp_to");
  const std::size_t channels = data.dim(0), steps = data.dim(1);
  if (bounds.size() != channels) throw DataError("clamp_to: one bound per channel required");
  Tensor<float> out = data;
  for (std::size_t c = 0; c < channels; ++c) {
    const auto b = static_cast<float>(bounds[c]);
    float* row = out.data() + c * steps;
    for (std::size_t i = 0; i < steps; ++i) row[i] = std::clamp(row[i], -b, b);
  }
  return out;
}

Tensor<float> clamp_std(const Tensor<float>& data, double k) {
  return clamp_to(data, clamp_bounds(data, k));
}

Tensor<float> prepare_recording(const RawRecording& rec, const PreprocessConfig& cfg) {
  if (!(rec.rate > 0)) throw DataError("recording rate must be positive");
  return center_on_baseline(exclude_channels(rec.data, cfg.excluded_channels), cfg.baseline_steps);
}

Tensor<float> scale_and_clamp(const Tensor<float>& chunk, const PreprocessConfig& cfg) {
  return clamp_std(robust_scale(chunk, cfg.quantile_low, cfg.quantile_high), cfg.clamp_std);
}

Tensor<float> preprocess(const RawRecording& rec, const PreprocessConfig& cfg) {
  return scale_and_clamp(prepare_recording(rec, cfg), cfg);
}

}  // namespace eegldm::datakit
