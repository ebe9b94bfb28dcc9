#ifndef DAOVFL_SCHEDULER_HPP_
#define DAOVFL_SCHEDULER_HPP_

// Local-iteration scheduling: fixed baselines and an actor-critic agent
// trained with the clipped-ratio policy update.
//
// The actor emits K independent categorical heads over {1..E_max}; the
// critic maps a state to a scalar value. Advantages are one-step TD
// errors R + gamma V(S') - V(S).

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstddef>
#include <deque>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/rng.hpp"
#include "daovfl/serialize.hpp"

namespace daovfl {

using StateVec = std::vector<double>;
using ActionVec = std::vector<int>;  // E_{t,k}, each in [1, E_max]

struct Transition {
  StateVec state;
  ActionVec action;
  double reward = 0.0;
  StateVec next_state;
  double log_prob = 0.0;  // under the behavior policy

  friend bool operator==(const Transition&, const Transition&) = default;
};

class ReplayBuffer {
 public:
  explicit ReplayBuffer(std::size_t capacity) : capacity_(capacity) {
    if (capacity_ == 0) throw ConfigError("replay buffer capacity must be >= 1");
  }

  void push(Transition t) {
    if (items_.size() == capacity_) items_.pop_front();
    items_.push_back(std::move(t));
  }

  std::size_t size() const { return items_.size(); }
  std::size_t capacity() const { return capacity_; }
  bool empty() const { return items_.empty(); }
  const Transition& operator[](std::size_t i) const { return items_[i]; }
  const Transition& front() const { return items_.front(); }
  const Transition& back() const { return items_.back(); }

  std::vector<Transition> snapshot() const { return {items_.begin(), items_.end()}; }

 private:
  std::size_t capacity_;
  std::deque<Transition> items_;
};

inline ReplayBuffer& store_transition(ReplayBuffer& buffer, Transition t) {
  buffer.push(std::move(t));
  return buffer;
}

enum class BaselineKind { kHO, kHE };

// HO: every sensor runs E_max. HE: sensor 1 runs E_max, the rest run 1.
inline ActionVec baseline_policy(BaselineKind kind, std::size_t num_sensors, int max_iterations) {
  if (num_sensors == 0) throw ContractError("baseline_policy: K must be >= 1");
  if (max_iterations < 1) throw ContractError("baseline_policy: E_max must be >= 1");
  if (kind == BaselineKind::kHO) return ActionVec(num_sensors, max_iterations);
  ActionVec a(num_sensors, 1);
  a[0] = max_iterations;
  return a;
}

struct AgentConfig {
  std::vector<std::size_t> hidden{64, 64};
  double gamma = 0.99;
  double clip = 0.2;
  int update_epochs = 4;  // M
  std::size_t buffer_capacity = 256;
  double actor_lr = 1e-4;
  double critic_lr = 1e-3;
  int max_iterations = 4;  // E_max

  void validate() const {
    if (!(gamma >= 0.0 && gamma < 1.0)) throw ConfigError("agent: gamma must be in [0, 1)");
    if (!(clip > 0.0)) throw ConfigError("agent: clip must be > 0");
    if (update_epochs < 1) throw ConfigError("agent: update_epochs must be >= 1");
    if (buffer_capacity == 0) throw ConfigError("agent: buffer_capacity must be >= 1");
    if (!(actor_lr > 0.0) || !(critic_lr > 0.0)) throw ConfigError("agent: learning rates must be > 0");
    if (max_iterations < 1) throw ConfigError("agent: max_iterations must be >= 1");
  }
};

enum class ActionMode { kSample, kGreedy };

struct ActionChoice {
  ActionVec action;
  double log_prob = 0.0;
};

struct ActorUpdateStats {
  std::vector<double> ratios;
  std::vector<double> advantages;  // after normalization
  double surrogate = 0.0;          // mean clipped objective before the step
  std::size_t clipped = 0;         // samples whose gradient was cut by the clip
};

// Zero mean, unit (population) standard deviation. Batches of one, or
// with no spread, are returned as-is so a lone sample keeps its sign.
inline std::vector<double> normalize_advantages(std::span<const double> adv) {
  std::vector<double> out(adv.begin(), adv.end());
  if (out.size() < 2) return out;
  double mean = 0.0;
  for (double a : out) mean += a;
  mean /= static_cast<double>(out.size());
  double var = 0.0;
  for (double a : out) var += (a - mean) * (a - mean);
  const double sd = std::sqrt(var / static_cast<double>(out.size()));
  if (sd < 1e-12) return out;
  for (auto& a : out) a = (a - mean) / sd;
  return out;
}

class Agent {
 public:
  Agent(std::size_t num_sensors, AgentConfig cfg, Rng& rng) : cfg_(std::move(cfg)), num_sensors_(num_sensors) {
    cfg_.validate();
    if (num_sensors_ == 0) throw ConfigError("agent: K must be >= 1");
    std::vector<std::size_t> widths{state_width()};
    widths.insert(widths.end(), cfg_.hidden.begin(), cfg_.hidden.end());
    widths.push_back(num_sensors_ * static_cast<std::size_t>(cfg_.max_iterations));
    actor_ = make_mlp(widths, Activation::kTanh, Activation::kLinear, rng);
    widths.back() = 1;
    critic_ = make_mlp(widths, Activation::kTanh, Activation::kLinear, rng);
  }

  Agent(DenseNet actor, DenseNet critic, std::size_t num_sensors, AgentConfig cfg)
      : cfg_(std::move(cfg)), num_sensors_(num_sensors), actor_(std::move(actor)), critic_(std::move(critic)) {
    cfg_.validate();
    actor_.check();
    critic_.check();
    if (actor_.input_width() != state_width() || critic_.input_width() != state_width()) {
      throw DimensionError("agent: network input width does not match 3K+1");
    }
    if (actor_.output_width() != num_sensors_ * static_cast<std::size_t>(cfg_.max_iterations)) {
      throw DimensionError("agent: actor output width does not match K * E_max");
    }
    if (critic_.output_width() != 1) throw DimensionError("agent: critic must output one value");
  }

  const AgentConfig& config() const { return cfg_; }
  std::size_t num_sensors() const { return num_sensors_; }
  std::size_t state_width() const { return 3 * num_sensors_ + 1; }
  const DenseNet& actor() const { return actor_; }
  const DenseNet& critic() const { return critic_; }
  DenseNet& mutable_actor() { return actor_; }
  DenseNet& mutable_critic() { return critic_; }

  // K x E_max matrix of per-sensor action probabilities.
  Mat probabilities(const StateVec& state) const {
    check_state(state);
    return head_softmax(predict(actor_, state_row(state)).row(0));
  }

  ActionChoice select_action(const StateVec& state, ActionMode mode, Rng& rng) const {
    const Mat p = probabilities(state);
    ActionChoice choice;
    for (std::size_t k = 0; k < num_sensors_; ++k) {
      auto row = p.row(k);
      std::size_t pick = 0;
      if (mode == ActionMode::kGreedy) {
        pick = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      } else {
        const double u = rng.uniform();
        double acc = 0.0;
        pick = row.size() - 1;
        for (std::size_t c = 0; c < row.size(); ++c) {
          acc += row[c];
          if (u < acc) {
            pick = c;
            break;
          }
        }
      }
      choice.action.push_back(static_cast<int>(pick) + 1);
      choice.log_prob += std::log(row[pick]);
    }
    return choice;
  }

  double log_prob(const StateVec& state, const ActionVec& action) const {
    check_action(action);
    const Mat p = probabilities(state);
    double lp = 0.0;
    for (std::size_t k = 0; k < num_sensors_; ++k) lp += std::log(p(k, static_cast<std::size_t>(action[k] - 1)));
    return lp;
  }

  double value(const StateVec& state) const {
    check_state(state);
    return predict(critic_, state_row(state))(0, 0);
  }

  std::vector<double> td_errors(std::span<const Transition> batch) const {
    std::vector<double> out;
    out.reserve(batch.size());
    const Mat v = predict(critic_, states_of(batch, false));
    const Mat v_next = predict(critic_, states_of(batch, true));
    for (std::size_t i = 0; i < batch.size(); ++i) out.push_back(batch[i].reward + cfg_.gamma * v_next(i, 0) - v(i, 0));
    return out;
  }

  // One Adam step on the mean squared TD error with targets held fixed.
  // Returns the pre-step mean squared TD error.
  double critic_update(std::span<const Transition> batch) {
    if (batch.empty()) throw ContractError("critic_update: empty batch");
    const Mat targets_next = predict(critic_, states_of(batch, true));
    ForwardTrace trace = mlp_forward(critic_, states_of(batch, false));
    Mat targets(batch.size(), 1);
    for (std::size_t i = 0; i < batch.size(); ++i) targets(i, 0) = batch[i].reward + cfg_.gamma * targets_next(i, 0);
    if (!all_finite(targets) || !all_finite(trace.output())) throw NumericError("critic_update: non-finite values");
    LossResult loss = mse_loss(trace.output(), targets);
    BackwardResult back = mlp_backward(critic_, trace, loss.grad);
    adam_step(critic_, back.grads, critic_opt_, cfg_.critic_lr);
    return loss.loss;
  }

  // Advantages from the current critic, normalized per batch, then one
  // clipped-surrogate step.
  ActorUpdateStats actor_update(std::span<const Transition> batch) {
    if (batch.empty()) throw ContractError("ppo_actor_update: empty batch");
    return actor_update_with(batch, normalize_advantages(td_errors(batch)));
  }

  ActorUpdateStats actor_update_with(std::span<const Transition> batch, std::span<const double> advantages) {
    ActorUpdateStats stats;
    GradBundle g = surrogate_gradient(batch, advantages, &stats);
    adam_step(actor_, g, actor_opt_, cfg_.actor_lr);
    return stats;
  }

  // Gradient of the negated mean clipped surrogate with respect to the
  // actor parameters.
  GradBundle surrogate_gradient(std::span<const Transition> batch, std::span<const double> advantages,
                                ActorUpdateStats* stats = nullptr) const {
    if (advantages.size() != batch.size()) throw DimensionError("surrogate_gradient: advantages length");
    for (const auto& t : batch) check_action(t.action);
    ForwardTrace trace = mlp_forward(actor_, states_of(batch, false));
    const Mat& logits = trace.output();
    Mat upstream(logits.rows(), logits.cols());
    const double inv_n = 1.0 / static_cast<double>(batch.size());
    const auto e_max = static_cast<std::size_t>(cfg_.max_iterations);
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const Mat p = head_softmax(logits.row(i));
      double lp = 0.0;
      for (std::size_t k = 0; k < num_sensors_; ++k) {
        lp += std::log(p(k, static_cast<std::size_t>(batch[i].action[k] - 1)));
      }
      const double ratio = std::exp(lp - batch[i].log_prob);
      const double adv = advantages[i];
      const double unclipped = ratio * adv;
      const double clipped = std::clamp(ratio, 1.0 - cfg_.clip, 1.0 + cfg_.clip) * adv;
      const bool active = unclipped <= clipped;
      if (!std::isfinite(ratio)) throw NumericError("ppo_actor_update: non-finite probability ratio");
      if (stats) {
        stats->ratios.push_back(ratio);
        stats->advantages.push_back(adv);
        stats->surrogate += std::min(unclipped, clipped) * inv_n;
        if (!active) ++stats->clipped;
      }
      if (!active) continue;
      // d(-ratio * adv)/d logit_{k,c} = -adv * ratio * (1[c = a_k] - p_{k,c})
      for (std::size_t k = 0; k < num_sensors_; ++k) {
        const auto a = static_cast<std::size_t>(batch[i].action[k] - 1);
        for (std::size_t c = 0; c < e_max; ++c) {
          const double ind = c == a ? 1.0 : 0.0;
          upstream(i, k * e_max + c) = -adv * ratio * (ind - p(k, c)) * inv_n;
        }
      }
    }
    return mlp_backward(actor_, trace, upstream).grads;
  }

  void save(const std::filesystem::path& path) const { save_nets(path, {&actor_, &critic_}); }

  static Agent load(const std::filesystem::path& path, std::size_t num_sensors, AgentConfig cfg) {
    auto nets = load_nets(path);
    if (nets.size() != 2) throw IoError(path.string() + ": expected actor and critic networks");
    return Agent(std::move(nets[0]), std::move(nets[1]), num_sensors, std::move(cfg));
  }

 private:
  void check_state(const StateVec& s) const {
    if (s.size() != state_width()) {
      throw ContractError("agent: state has " + std::to_string(s.size()) + " entries, expected " +
                          std::to_string(state_width()));
    }
    for (double v : s) {
      if (!(v >= 0.0 && v <= 1.0)) throw ContractError("agent: state is not normalized to [0, 1]");
    }
  }

  void check_action(const ActionVec& a) const {
    if (a.size() != num_sensors_) throw DimensionError("agent: action length");
    for (int e : a) {
      if (e < 1 || e > cfg_.max_iterations) throw ContractError("agent: action outside [1, E_max]");
    }
  }

  Mat state_row(const StateVec& s) const { return Mat(1, s.size(), s); }

  Mat states_of(std::span<const Transition> batch, bool next) const {
    Mat m(batch.size(), state_width());
    for (std::size_t i = 0; i < batch.size(); ++i) {
      const StateVec& s = next ? batch[i].next_state : batch[i].state;
      if (s.size() != state_width()) throw DimensionError("agent: transition state width");
      std::copy(s.begin(), s.end(), m.row(i).begin());
    }
    return m;
  }

  Mat head_softmax(std::span<const double> logits) const {
    const auto e_max = static_cast<std::size_t>(cfg_.max_iterations);
    Mat p(num_sensors_, e_max);
    for (std::size_t k = 0; k < num_sensors_; ++k) {
      auto z = logits.subspan(k * e_max, e_max);
      const double zmax = *std::max_element(z.begin(), z.end());
      double denom = 0.0;
      for (std::size_t c = 0; c < e_max; ++c) {
        p(k, c) = std::exp(z[c] - zmax);
        denom += p(k, c);
      }
      for (std::size_t c = 0; c < e_max; ++c) p(k, c) /= denom;
    }
    return p;
  }

  AgentConfig cfg_;
  std::size_t num_sensors_;
  DenseNet actor_;
  DenseNet critic_;
  AdamState actor_opt_;
  AdamState critic_opt_;
};

inline ActionChoice select_action(const Agent& agent, const StateVec& state, ActionMode mode, Rng& rng) {
  return agent.select_action(state, mode, rng);
}

inline double critic_update(Agent& agent, std::span<const Transition> batch) { return agent.critic_update(batch); }

inline ActorUpdateStats ppo_actor_update(Agent& agent, std::span<const Transition> batch) {
  return agent.actor_update(batch);
}

// observe() returns the current normalized state without side effects;
// step() applies an action, returns its reward and moves to the next state.
template <typename Env>
concept SchedulingEnvironment = requires(Env& env, const ActionVec& a) {
  { env.observe() } -> std::convertible_to<StateVec>;
  { env.step(a) } -> std::convertible_to<double>;
};

struct TrainingTrace {
  std::vector<double> rewards;
  std::vector<ActionVec> actions;
};

// Collect one transition per round, then M update epochs over the buffer
// (actor first, then critic).
template <SchedulingEnvironment Env>
TrainingTrace train_agent(Env& env, Agent& agent, ReplayBuffer& buffer, std::size_t rounds, Rng& rng) {
  TrainingTrace trace;
  for (std::size_t t = 0; t < rounds; ++t) {
    StateVec state = env.observe();
    ActionChoice choice = agent.select_action(state, ActionMode::kSample, rng);
    const double r = env.step(choice.action);
    StateVec next = env.observe();
    trace.rewards.push_back(r);
    trace.actions.push_back(choice.action);
    buffer.push({std::move(state), std::move(choice.action), r, std::move(next), choice.log_prob});
    const std::vector<Transition> batch = buffer.snapshot();
    for (int m = 0; m < agent.config().update_epochs; ++m) {
      agent.actor_update(batch);
      agent.critic_update(batch);
    }
  }
  return trace;
}

}  // namespace daovfl

#endif  // DAOVFL_SCHEDULER_HPP_
