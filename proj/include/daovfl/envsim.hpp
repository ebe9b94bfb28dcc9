#ifndef DAOVFL_ENVSIM_HPP_
#define DAOVFL_ENVSIM_HPP_

// Assembly-line timing model: per-sensor collection, uplink and local
// computation latency, the round's total latency, iteration disparity and
// the per-round scheduling reward.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/rng.hpp"

namespace daovfl {

struct EnvConfig {
  double mu_min = 2.0;  // collection slope drawn once per run from [mu_min, mu_max]
  double mu_max = 4.0;
  double mu0 = 2.0;
  double bandwidth = 1e7;    // Hz, shared equally
  double power = 1.0;        // W
  double noise_power = 5e-2; // W
  double gain_min = 1e-5;
  double gain_max = 1e-4;
  double payload = 1e5;          // W_fe
  double cycles_per_weight = 1000.0;
  double local_weights = 5e5;    // W_lc
  double high_freq_min = 2e7;
  double high_freq_max = 4e7;
  double low_freq_min = 1e7;
  double low_freq_max = 3e7;

  void validate() const {
    auto positive = [](double v, const char* name) {
      if (!(v > 0.0) || !std::isfinite(v)) throw ConfigError(std::string("env: ") + name + " must be > 0");
    };
    positive(mu0, "mu0");
    positive(bandwidth, "bandwidth");
    positive(power, "power");
    positive(noise_power, "noise_power");
    positive(gain_min, "gain_min");
    positive(payload, "payload");
    positive(cycles_per_weight, "cycles_per_weight");
    positive(local_weights, "local_weights");
    positive(high_freq_min, "high_freq_min");
    positive(low_freq_min, "low_freq_min");
    if (!(mu_min >= 0.0) || mu_max < mu_min) throw ConfigError("env: bad mu range");
    if (gain_max < gain_min) throw ConfigError("env: bad gain range");
    if (high_freq_max < high_freq_min || low_freq_max < low_freq_min) {
      throw ConfigError("env: bad frequency range");
    }
  }
};

struct RewardWeights {
  double accuracy = 1.0;   // alpha1
  double latency = 0.01;   // alpha2
  double disparity = 0.05; // alpha3

  void validate() const {
    if (accuracy < 0 || latency < 0 || disparity < 0) throw ConfigError("reward weights must be >= 0");
    if (accuracy == 0 && latency == 0 && disparity == 0) throw ConfigError("reward weights all zero");
  }
};

// Sensor indices are 1-based, matching the assembly-line order.
inline double collection_latency(std::size_t k, double mu, double mu0) {
  if (k < 1) throw ContractError("collection_latency: sensor index must be >= 1");
  return mu * static_cast<double>(k) + mu0;
}

inline double transmission_rate(double bandwidth, std::size_t num_sensors, double gain,
                                double power, double noise_power) {
  if (num_sensors == 0) throw ContractError("transmission_rate: K must be >= 1");
  if (gain < 0.0) throw ContractError("transmission_rate: gain must be >= 0");
  return bandwidth / static_cast<double>(num_sensors) * std::log2(1.0 + gain * power / noise_power);
}

inline double comm_latency(double payload, double rate) {
  if (!(rate > 0.0)) throw UnreachableSensorError("comm_latency: transmission rate is zero");
  return payload / rate;
}

inline double comp_latency(int iterations, double cycles_per_weight, double local_weights,
                           double cpu_freq) {
  if (!(cpu_freq > 0.0)) throw ConfigError("comp_latency: CPU frequency must be > 0");
  if (iterations < 1) throw ContractError("comp_latency: iterations must be >= 1");
  return static_cast<double>(iterations) * cycles_per_weight * local_weights / cpu_freq;
}

struct LatencyTriple {
  double collection = 0.0;
  double communication = 0.0;
  double computation = 0.0;

  double sum() const { return collection + communication + computation; }
};

inline double total_latency(std::span<const LatencyTriple> sensors) {
  if (sensors.empty()) throw ContractError("total_latency: need at least one sensor");
  double worst = sensors.front().sum();
  for (const auto& s : sensors) worst = std::max(worst, s.sum());
  return worst;
}

inline double disparity(std::span<const int> iterations) {
  if (iterations.empty()) throw ContractError("disparity: need at least one sensor");
  const double mean = std::accumulate(iterations.begin(), iterations.end(), 0.0) /
                      static_cast<double>(iterations.size());
  double h = 0.0;
  for (int e : iterations) h += std::fabs(static_cast<double>(e) - mean);
  return h;
}

inline double reward(const RewardWeights& w, double accuracy, double latency, double disparity_value) {
  return w.accuracy * accuracy - w.latency * latency - w.disparity * disparity_value;
}

// Conditions observed by the sensors at the start of a round, before the
// iteration decision is made.
struct RoundConditions {
  std::vector<double> collection;  // seconds
  std::vector<double> gain;
  std::vector<double> rate;        // bits/s
  std::vector<double> communication;
  std::vector<double> cpu_freq;    // cycles/s

  std::size_t num_sensors() const { return collection.size(); }
};

// Per-run environment: mu is fixed for the run, gains and CPU frequencies
// are redrawn every round. Odd sensors (1, 3, ...) are high-performance.
class Environment {
 public:
  Environment(EnvConfig cfg, std::size_t num_sensors, Rng rng)
      : cfg_(cfg), num_sensors_(num_sensors), rng_(std::move(rng)) {
    cfg_.validate();
    if (num_sensors_ == 0) throw ConfigError("env: need at least one sensor");
    mu_ = rng_.uniform(cfg_.mu_min, cfg_.mu_max);
  }

  const EnvConfig& config() const { return cfg_; }
  double mu() const { return mu_; }
  std::size_t num_sensors() const { return num_sensors_; }

  static bool high_performance(std::size_t k) { return k % 2 == 1; }

  RoundConditions draw_round() {
    RoundConditions c;
    for (std::size_t k = 1; k <= num_sensors_; ++k) {
      const double g = rng_.uniform(cfg_.gain_min, cfg_.gain_max);
      const double f = high_performance(k) ? rng_.uniform(cfg_.high_freq_min, cfg_.high_freq_max)
                                           : rng_.uniform(cfg_.low_freq_min, cfg_.low_freq_max);
      const double r = transmission_rate(cfg_.bandwidth, num_sensors_, g, cfg_.power, cfg_.noise_power);
      c.collection.push_back(collection_latency(k, mu_, cfg_.mu0));
      c.gain.push_back(g);
      c.rate.push_back(r);
      c.communication.push_back(comm_latency(cfg_.payload, r));
      c.cpu_freq.push_back(f);
    }
    return c;
  }

  std::vector<LatencyTriple> latencies(const RoundConditions& c, std::span<const int> iterations) const {
    if (iterations.size() != c.num_sensors()) {
      throw DimensionError("env: " + std::to_string(iterations.size()) + " iteration counts for " +
                           std::to_string(c.num_sensors()) + " sensors");
    }
    std::vector<LatencyTriple> out;
    for (std::size_t i = 0; i < iterations.size(); ++i) {
      out.push_back({c.collection[i], c.communication[i],
                     comp_latency(iterations[i], cfg_.cycles_per_weight, cfg_.local_weights,
                                  c.cpu_freq[i])});
    }
    return out;
  }

  double round_latency(const RoundConditions& c, std::span<const int> iterations) const {
    const auto l = latencies(c, iterations);
    return total_latency(l);
  }

  // Upper bounds used to scale scheduler observations into [0, 1].
  double max_collection() const {
    return collection_latency(num_sensors_, cfg_.mu_max, cfg_.mu0);
  }
  double max_communication() const {
    return comm_latency(cfg_.payload, transmission_rate(cfg_.bandwidth, num_sensors_, cfg_.gain_min,
                                                        cfg_.power, cfg_.noise_power));
  }
  double max_cpu_freq() const { return std::max(cfg_.high_freq_max, cfg_.low_freq_max); }

 private:
  EnvConfig cfg_;
  std::size_t num_sensors_;
  Rng rng_;
  double mu_ = 0.0;
};

}  // namespace daovfl

#endif  // DAOVFL_ENVSIM_HPP_
