#ifndef DAOVFL_STREAMS_HPP_
#define DAOVFL_STREAMS_HPP_

// Vertically partitioned synthetic data stream.
//
// A latent z ~ N(0, I_8) is drawn per sample. Sensor k observes
// x_k = tanh(A_k z) + eps with a fixed random A_k; the label is
// argmax(W z) (classification) or w . z (regression). Every sensor
// therefore sees a different noisy view of the same sample.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <deque>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/rng.hpp"

namespace daovfl {

enum class Regime { kSliding, kIncremental };

inline std::string_view to_string(Regime r) {
  return r == Regime::kSliding ? "sliding" : "incremental";
}

inline Regime regime_from_string(std::string_view s) {
  if (s == "sliding") return Regime::kSliding;
  if (s == "incremental") return Regime::kIncremental;
  throw ConfigError("unknown regime '" + std::string(s) + "'");
}

struct StreamConfig {
  std::vector<std::size_t> feature_widths{8, 8, 8, 8};  // P_k per sensor
  int num_classes = 4;                                  // 0 selects regression
  std::size_t initial_samples = 256;                    // N0
  std::size_t new_samples = 32;                         // N_new per round
  Regime regime = Regime::kSliding;
  double noise_std = 0.3;
  std::uint64_t seed = 1;
  std::size_t latent_dim = 8;
  std::size_t test_samples = 1000;

  std::size_t num_sensors() const { return feature_widths.size(); }
  std::size_t total_width() const {
    return std::accumulate(feature_widths.begin(), feature_widths.end(), std::size_t{0});
  }
  bool regression() const { return num_classes == 0; }

  void validate() const {
    if (feature_widths.empty()) throw ConfigError("stream: need at least one sensor");
    for (auto w : feature_widths) {
      if (w == 0) throw ConfigError("stream: feature width must be >= 1");
    }
    if (num_classes < 0 || num_classes == 1) {
      throw ConfigError("stream: num_classes must be 0 (regression) or >= 2");
    }
    if (new_samples < 1) throw ConfigError("stream: new_samples must be >= 1");
    if (initial_samples < new_samples) {
      throw ConfigError("stream: initial_samples must be >= new_samples");
    }
    if (latent_dim == 0) throw ConfigError("stream: latent_dim must be >= 1");
    if (!(noise_std >= 0.0) || !std::isfinite(noise_std)) {
      throw ConfigError("stream: noise_std must be finite and >= 0");
    }
    if (test_samples == 0) throw ConfigError("stream: test_samples must be >= 1");
  }
};

struct RoundBatch {
  std::size_t round = 0;
  std::vector<Mat> blocks;            // x_k, N x P_k, row-aligned
  std::vector<double> labels;         // class index or regression target
  std::vector<std::uint64_t> ids;     // sample ids, oldest first
  Mat latents;                        // hidden z per row; never fed to models

  std::size_t size() const { return labels.size(); }
  std::size_t window_size() const { return labels.size(); }

  std::vector<int> class_labels() const {
    std::vector<int> out(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) out[i] = static_cast<int>(labels[i]);
    return out;
  }
};

class Stream {
 public:
  explicit Stream(StreamConfig cfg) : cfg_(std::move(cfg)), rng_(0) {
    cfg_.validate();
    rng_ = Rng::derive(cfg_.seed, 0x5a3e);
    Rng map_rng = Rng::derive(cfg_.seed, 0x3a9);
    const double scale = 1.0 / std::sqrt(static_cast<double>(cfg_.latent_dim));
    for (auto width : cfg_.feature_widths) {
      Mat a(width, cfg_.latent_dim);
      for (auto& v : a.data()) v = map_rng.normal() * scale;
      sensor_maps_.push_back(std::move(a));
    }
    const std::size_t outputs = cfg_.regression() ? 1 : static_cast<std::size_t>(cfg_.num_classes);
    label_map_ = Mat(outputs, cfg_.latent_dim);
    for (auto& v : label_map_.data()) v = map_rng.normal();
    orthonormalize_rows(label_map_);
    for (std::size_t i = 0; i < cfg_.initial_samples; ++i) window_.push_back(draw_sample(rng_));
  }

  const StreamConfig& config() const { return cfg_; }
  std::size_t num_sensors() const { return cfg_.num_sensors(); }
  std::size_t rounds_advanced() const { return round_; }

  // Adds N_new samples (evicting the same number of the oldest under the
  // sliding regime) and returns the resulting window.
  RoundBatch next_round() {
    for (std::size_t i = 0; i < cfg_.new_samples; ++i) window_.push_back(draw_sample(rng_));
    if (cfg_.regime == Regime::kSliding) {
      for (std::size_t i = 0; i < cfg_.new_samples; ++i) window_.pop_front();
    }
    ++round_;
    return current();
  }

  // The window as it stands, without advancing.
  RoundBatch current() const {
    RoundBatch b = materialize(window_);
    b.round = round_;
    return b;
  }

  // Held-out batch from the same latent map, deterministic in (seed, round).
  RoundBatch test_batch(std::size_t round) const {
    Rng rng = Rng::derive(cfg_.seed, 0x7e57'0000ULL + round);
    std::vector<Sample> samples;
    samples.reserve(cfg_.test_samples);
    std::uint64_t next = std::uint64_t{1} << 63;  // disjoint from training ids
    for (std::size_t i = 0; i < cfg_.test_samples; ++i) {
      samples.push_back(draw_sample(rng, next));
    }
    RoundBatch b = materialize(samples);
    b.round = round;
    return b;
  }

  // Label assigned by the hidden latent map.
  double label_for(std::span<const double> z) const {
    if (z.size() != cfg_.latent_dim) throw DimensionError("label_for: latent width");
    if (cfg_.regression()) {
      double s = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) s += label_map_(0, j) * z[j];
      return s;
    }
    std::size_t best = 0;
    double best_v = -INFINITY;
    for (std::size_t c = 0; c < label_map_.rows(); ++c) {
      double s = 0.0;
      for (std::size_t j = 0; j < z.size(); ++j) s += label_map_(c, j) * z[j];
      if (s > best_v) {
        best_v = s;
        best = c;
      }
    }
    return static_cast<double>(best);
  }

  // Noise-free view of sensor k for latent z.
  std::vector<double> clean_features(std::size_t k, std::span<const double> z) const {
    const Mat& a = sensor_maps_.at(k);
    std::vector<double> x(a.rows());
    for (std::size_t i = 0; i < a.rows(); ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < a.cols(); ++j) s += a(i, j) * z[j];
      x[i] = std::tanh(s);
    }
    return x;
  }

 private:
  struct Sample {
    std::uint64_t id;
    std::vector<double> z;
    std::vector<double> x;  // all sensors, concatenated
    double label;
  };

  Sample draw_sample(Rng& rng) { return draw_sample(rng, next_id_); }

  Sample draw_sample(Rng& rng, std::uint64_t& id_counter) const {
    Sample s;
    s.id = id_counter++;
    s.z.resize(cfg_.latent_dim);
    for (auto& v : s.z) v = rng.normal();
    s.x.reserve(cfg_.total_width());
    for (std::size_t k = 0; k < sensor_maps_.size(); ++k) {
      for (double v : clean_features(k, s.z)) {
        s.x.push_back(v + (cfg_.noise_std > 0.0 ? cfg_.noise_std * rng.normal() : 0.0));
      }
    }
    s.label = label_for(s.z);
    return s;
  }

  template <typename Samples>
  RoundBatch materialize(const Samples& samples) const {
    RoundBatch b;
    const std::size_t n = samples.size();
    b.labels.reserve(n);
    b.ids.reserve(n);
    b.latents = Mat(n, cfg_.latent_dim);
    for (auto w : cfg_.feature_widths) b.blocks.emplace_back(n, w);
    for (std::size_t r = 0; r < n; ++r) {
      const Sample& s = samples[r];
      b.ids.push_back(s.id);
      b.labels.push_back(s.label);
      std::copy(s.z.begin(), s.z.end(), b.latents.row(r).begin());
      std::size_t off = 0;
      for (std::size_t k = 0; k < b.blocks.size(); ++k) {
        auto dst = b.blocks[k].row(r);
        std::copy_n(s.x.begin() + static_cast<std::ptrdiff_t>(off), dst.size(), dst.begin());
        off += dst.size();
      }
    }
    return b;
  }

  // Gram-Schmidt on rows; equal-norm orthogonal class directions make the
  // argmax classes equiprobable under an isotropic latent.
  static void orthonormalize_rows(Mat& m) {
    for (std::size_t i = 0; i < m.rows(); ++i) {
      auto ri = m.row(i);
      if (i < m.cols()) {
        for (std::size_t j = 0; j < i; ++j) {
          auto rj = m.row(j);
          double dot = 0.0;
          for (std::size_t c = 0; c < ri.size(); ++c) dot += ri[c] * rj[c];
          for (std::size_t c = 0; c < ri.size(); ++c) ri[c] -= dot * rj[c];
        }
      }
      double norm = 0.0;
      for (double v : ri) norm += v * v;
      norm = std::sqrt(norm);
      for (auto& v : ri) v /= norm;
    }
  }

  StreamConfig cfg_;
  Rng rng_;
  std::vector<Mat> sensor_maps_;
  Mat label_map_;
  std::deque<Sample> window_;
  std::uint64_t next_id_ = 0;
  std::size_t round_ = 0;
};

inline Stream make_stream(const StreamConfig& cfg) { return Stream(cfg); }

inline RoundBatch next_round(Stream& stream) { return stream.next_round(); }

// Debug export: id, features by sensor, label.
inline void write_batch_csv(const std::filesystem::path& path, const RoundBatch& batch) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  os << "id";
  for (std::size_t k = 0; k < batch.blocks.size(); ++k) {
    for (std::size_t j = 0; j < batch.blocks[k].cols(); ++j) {
      os << ",s" << (k + 1) << "_f" << (j + 1);
    }
  }
  os << ",label\n";
  char buf[32];
  for (std::size_t r = 0; r < batch.size(); ++r) {
    os << batch.ids[r];
    for (const auto& block : batch.blocks) {
      for (double v : block.row(r)) {
        std::snprintf(buf, sizeof buf, "%.9g", v);
        os << ',' << buf;
      }
    }
    std::snprintf(buf, sizeof buf, "%.9g", batch.labels[r]);
    os << ',' << buf << '\n';
  }
  if (!os) throw IoError("write failed: " + path.string());
}

}  // namespace daovfl

#endif  // DAOVFL_STREAMS_HPP_
