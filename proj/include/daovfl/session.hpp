#ifndef DAOVFL_SESSION_HPP_
#define DAOVFL_SESSION_HPP_

// One simulated run: the data stream, the assembly-line environment and
// the training engine advanced together, round by round.

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <vector>

#include "daovfl/envsim.hpp"
#include "daovfl/errors.hpp"
#include "daovfl/hindsight.hpp"
#include "daovfl/rng.hpp"
#include "daovfl/scheduler.hpp"
#include "daovfl/streams.hpp"
#include "daovfl/vflcore.hpp"

namespace daovfl {

// Scheduler observation: latencies and CPU frequencies scaled by the
// environment's configured maxima, plus t / horizon.
inline StateVec normalize_state(const Environment& env, const RoundConditions& c, std::size_t round,
                                std::size_t horizon) {
  StateVec s;
  s.reserve(3 * c.num_sensors() + 1);
  auto scaled = [](double v, double max) { return std::clamp(v / max, 0.0, 1.0); };
  for (double v : c.collection) s.push_back(scaled(v, env.max_collection()));
  for (double v : c.communication) s.push_back(scaled(v, env.max_communication()));
  for (double v : c.cpu_freq) s.push_back(scaled(v, env.max_cpu_freq()));
  s.push_back(horizon ? std::min(1.0, static_cast<double>(round) / static_cast<double>(horizon)) : 0.0);
  return s;
}

struct SessionConfig {
  StreamConfig stream;
  EngineConfig engine;
  EnvConfig env;
  std::size_t horizon = 150;
  bool record_history = false;
};

// Seeds: the stream, model initialization and environment draw from
// independent streams keyed on the session seed, so arms that differ only
// in noise handling or schedule see identical data and conditions.
class Session {
 public:
  Session(SessionConfig cfg, std::uint64_t seed)
      : cfg_(seeded(std::move(cfg), seed)),
        stream_(cfg_.stream),
        engine_(cfg_.stream, cfg_.engine, seed),
        env_(cfg_.env, cfg_.stream.num_sensors(), Rng::derive(seed, 0xe4f1)),
        test_(stream_.test_batch(0)),
        batch_(stream_.current()),
        conditions_(env_.draw_round()) {}

  const SessionConfig& config() const { return cfg_; }
  std::size_t num_sensors() const { return cfg_.stream.num_sensors(); }
  std::size_t round() const { return engine_.rounds_run(); }
  std::size_t horizon() const { return cfg_.horizon; }
  const VflEngine& engine() const { return engine_; }
  VflEngine& mutable_engine() { return engine_; }
  const Environment& environment() const { return env_; }
  const RoundConditions& conditions() const { return conditions_; }
  const RoundBatch& batch() const { return batch_; }
  const RoundBatch& test_set() const { return test_; }
  const StreamHistory& history() const { return history_; }

  StateVec observe() const { return normalize_state(env_, conditions_, round(), cfg_.horizon); }

  // Runs the round on the current window and conditions, then moves the
  // stream and the environment forward.
  RoundMetrics advance(std::span<const int> iterations) {
    if (cfg_.record_history) history_.record(batch_);
    RoundMetrics m = engine_.run_global_round(batch_, test_, iterations, env_, conditions_);
    batch_ = stream_.next_round();
    conditions_ = env_.draw_round();
    return m;
  }

  double step(const ActionVec& action) { return advance(action).reward; }

 private:
  static SessionConfig seeded(SessionConfig cfg, std::uint64_t seed) {
    cfg.stream.seed = Rng::derive(seed, 0x57e4).next_u64();
    return cfg;
  }

  SessionConfig cfg_;
  Stream stream_;
  VflEngine engine_;
  Environment env_;
  RoundBatch test_;
  RoundBatch batch_;
  RoundConditions conditions_;
  StreamHistory history_;
};

static_assert(SchedulingEnvironment<Session>);

}  // namespace daovfl

#endif  // DAOVFL_SESSION_HPP_
