#ifndef DAOVFL_CHANNEL_HPP_
#define DAOVFL_CHANNEL_HPP_

// Sensor-to-server uplink. The quantizer clips each entry to [-a, a] and
// snaps it to the nearest of L evenly spaced levels that include both
// endpoints; ties go toward +inf.

#include <algorithm>
#include <cmath>
#include <string>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"

namespace daovfl {

enum class ChannelKind { kIdentity, kQuantizer };

struct ChannelSpec {
  ChannelKind kind = ChannelKind::kIdentity;
  int levels = 8;
  double clip = 1.0;

  static ChannelSpec identity() { return {ChannelKind::kIdentity, 2, 1.0}; }
  static ChannelSpec quantizer(int levels, double clip) {
    return {ChannelKind::kQuantizer, levels, clip};
  }

  double step() const { return 2.0 * clip / static_cast<double>(levels - 1); }

  void validate() const {
    if (kind != ChannelKind::kQuantizer) return;
    if (levels < 2) throw ConfigError("quantizer: levels must be >= 2, got " + std::to_string(levels));
    if (!(clip > 0.0) || !std::isfinite(clip)) throw ConfigError("quantizer: clip must be > 0");
  }
};

inline double quantize(double x, double clip, int levels) {
  const double step = 2.0 * clip / static_cast<double>(levels - 1);
  const double c = std::clamp(x, -clip, clip);
  double idx = std::floor((c + clip) / step + 0.5);
  idx = std::clamp(idx, 0.0, static_cast<double>(levels - 1));
  return -clip + idx * step;
}

inline Mat transmit(const ChannelSpec& spec, const Mat& embedding) {
  spec.validate();
  if (!all_finite(embedding)) throw NumericError("transmit: non-finite embedding");
  if (spec.kind == ChannelKind::kIdentity) return embedding;
  Mat out = embedding;
  for (auto& v : out.data()) v = quantize(v, spec.clip, spec.levels);
  return out;
}

// Clip range as the given quantile of |x| over all supplied embeddings.
inline double calibrate_clip(const std::vector<Mat>& embeddings, double quantile = 0.999) {
  std::vector<double> mags;
  for (const auto& m : embeddings) {
    for (double v : m.data()) mags.push_back(std::fabs(v));
  }
  if (mags.empty()) throw ConfigError("calibrate_clip: no samples");
  const auto pos = static_cast<std::size_t>(std::ceil(quantile * static_cast<double>(mags.size())));
  const std::size_t idx = std::min(mags.size() - 1, pos == 0 ? 0 : pos - 1);
  std::nth_element(mags.begin(), mags.begin() + static_cast<std::ptrdiff_t>(idx), mags.end());
  const double a = mags[idx];
  return a > 0.0 ? a : 1.0;
}

}  // namespace daovfl

#endif  // DAOVFL_CHANNEL_HPP_
