#ifndef DAOVFL_EXPERIMENT_HPP_
#define DAOVFL_EXPERIMENT_HPP_

// Experiment orchestration: JSON configuration, single runs with optional
// agent training, metrics CSV I/O, multi-run comparison and checkpoints.

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "daovfl/denoiser.hpp"
#include "daovfl/envsim.hpp"
#include "daovfl/errors.hpp"
#include "daovfl/hindsight.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/scheduler.hpp"
#include "daovfl/serialize.hpp"
#include "daovfl/session.hpp"
#include "daovfl/streams.hpp"
#include "daovfl/vflcore.hpp"

namespace daovfl {

using Json = nlohmann::ordered_json;

enum class ScheduleMode { kHO, kHE, kDaoPpo };

inline std::string_view to_string(ScheduleMode m) {
  switch (m) {
    case ScheduleMode::kHO: return "HO";
    case ScheduleMode::kHE: return "HE";
    case ScheduleMode::kDaoPpo: return "DAO-PPO";
  }
  return "?";
}

inline ScheduleMode schedule_mode_from_string(std::string_view s) {
  if (s == "HO") return ScheduleMode::kHO;
  if (s == "HE") return ScheduleMode::kHE;
  if (s == "DAO-PPO") return ScheduleMode::kDaoPpo;
  throw ConfigError("unknown schedule mode '" + std::string(s) + "'");
}

struct ExperimentConfig {
  StreamConfig stream;
  ModelConfig model;
  int quantizer_levels = 8;
  double clip = 0.0;  // <= 0: calibrated on the first round
  double clip_quantile = 0.999;
  std::size_t horizon = 150;          // T
  std::size_t denoising_rounds = 40;  // T_dl
  std::size_t agent_rounds = 300;     // T_ag
  int max_iterations = 4;             // E_max
  RewardWeights reward;
  EnvConfig env;
  NoiseMode noise_mode = NoiseMode::kNE;
  ScheduleMode schedule_mode = ScheduleMode::kHO;
  std::vector<std::uint64_t> seeds{1};
  bool probe = false;
  bool compute_regret = true;
  DaeConfig dae;
  AgentConfig agent;
  HindsightConfig hindsight;
  std::string output_dir = "runs";

  void validate() const {
    stream.validate();
    model.validate();
    dae.validate();
    agent.validate();
    env.validate();
    reward.validate();
    if (horizon == 0) throw ConfigError("horizon must be >= 1");
    if (denoising_rounds > horizon) throw ConfigError("denoising_rounds must be <= horizon");
    if (max_iterations < 1) throw ConfigError("max_iterations must be >= 1");
    if (noise_mode != NoiseMode::kNE && quantizer_levels < 2) {
      throw ConfigError("channel.levels must be >= 2");
    }
    if (!(clip_quantile > 0.0 && clip_quantile <= 1.0)) throw ConfigError("channel.clip_quantile must be in (0, 1]");
    if (schedule_mode == ScheduleMode::kDaoPpo && agent_rounds == 0) {
      throw ConfigError("agent_rounds must be >= 1 for DAO-PPO");
    }
    if (seeds.empty()) throw ConfigError("seeds must not be empty");
  }

  AgentConfig resolved_agent() const {
    AgentConfig a = agent;
    a.max_iterations = max_iterations;
    return a;
  }

  SessionConfig session(std::size_t rounds) const {
    SessionConfig s;
    s.stream = stream;
    s.env = env;
    s.horizon = rounds;
    s.engine.model = model;
    s.engine.noise = noise_mode;
    s.engine.quantizer_levels = quantizer_levels;
    s.engine.clip = clip;
    s.engine.clip_quantile = clip_quantile;
    s.engine.dae = dae;
    s.engine.dae.training_rounds = denoising_rounds;
    s.engine.probe = probe;
    s.engine.keep_iterates = compute_regret;
    s.engine.reward = reward;
    s.record_history = compute_regret;
    return s;
  }
};

// ---------------------------------------------------------------------------
// JSON codec. Unknown keys are rejected so typos in sweep files fail fast.

namespace detail {

inline void check_keys(const Json& j, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected a JSON object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool known = false;
    for (auto a : allowed) known = known || it.key() == a;
    if (!known) throw ConfigError("unknown config key '" + (where.empty() ? "" : where + ".") + it.key() + "'");
  }
}

template <typename T>
void read(const Json& j, const char* key, T& out, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) return;
  const std::string path = (where.empty() ? "" : where + ".") + key;
  if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
    if (!it->is_number_unsigned()) throw ConfigError(path + ": expected a non-negative integer");
  }
  try {
    out = it->get<T>();
  } catch (const Json::exception& e) {
    throw ConfigError(path + ": " + e.what());
  }
}

inline void read_activation(const Json& j, const char* key, Activation& out, const std::string& where) {
  std::string s(to_string(out));
  read(j, key, s, where);
  out = activation_from_string(s);
}

}  // namespace detail

inline ExperimentConfig config_from_json(const Json& j) {
  using detail::read;
  ExperimentConfig c;
  detail::check_keys(j,
                     {"stream", "model", "channel", "horizon", "denoising_rounds", "agent_rounds", "max_iterations",
                      "eta", "reward", "env", "noise_mode", "schedule_mode", "seeds", "probe", "compute_regret", "dae",
                      "agent", "hindsight", "output_dir"},
                     "");
  if (auto it = j.find("stream"); it != j.end()) {
    const Json& s = *it;
    detail::check_keys(s, {"feature_widths", "num_classes", "initial_samples", "new_samples", "regime", "noise_std",
                           "latent_dim", "test_samples"},
                       "stream");
    read(s, "feature_widths", c.stream.feature_widths, "stream");
    read(s, "num_classes", c.stream.num_classes, "stream");
    read(s, "initial_samples", c.stream.initial_samples, "stream");
    read(s, "new_samples", c.stream.new_samples, "stream");
    std::string regime(to_string(c.stream.regime));
    read(s, "regime", regime, "stream");
    c.stream.regime = regime_from_string(regime);
    read(s, "noise_std", c.stream.noise_std, "stream");
    read(s, "latent_dim", c.stream.latent_dim, "stream");
    read(s, "test_samples", c.stream.test_samples, "stream");
  }
  if (auto it = j.find("model"); it != j.end()) {
    const Json& m = *it;
    detail::check_keys(m, {"extractor_hidden", "embedding_width", "hidden_activation", "embedding_activation",
                           "head_hidden"},
                       "model");
    read(m, "extractor_hidden", c.model.extractor_hidden, "model");
    read(m, "embedding_width", c.model.embedding_width, "model");
    detail::read_activation(m, "hidden_activation", c.model.hidden_activation, "model");
    detail::read_activation(m, "embedding_activation", c.model.embedding_activation, "model");
    read(m, "head_hidden", c.model.head_hidden, "model");
  }
  if (auto it = j.find("channel"); it != j.end()) {
    detail::check_keys(*it, {"levels", "clip", "clip_quantile"}, "channel");
    read(*it, "levels", c.quantizer_levels, "channel");
    read(*it, "clip", c.clip, "channel");
    read(*it, "clip_quantile", c.clip_quantile, "channel");
  }
  read(j, "horizon", c.horizon, "");
  read(j, "denoising_rounds", c.denoising_rounds, "");
  read(j, "agent_rounds", c.agent_rounds, "");
  read(j, "max_iterations", c.max_iterations, "");
  read(j, "eta", c.model.eta, "");
  if (auto it = j.find("reward"); it != j.end()) {
    detail::check_keys(*it, {"accuracy", "latency", "disparity"}, "reward");
    read(*it, "accuracy", c.reward.accuracy, "reward");
    read(*it, "latency", c.reward.latency, "reward");
    read(*it, "disparity", c.reward.disparity, "reward");
  }
  if (auto it = j.find("env"); it != j.end()) {
    const Json& e = *it;
    detail::check_keys(e, {"mu_min", "mu_max", "mu0", "bandwidth", "power", "noise_power", "gain_min", "gain_max",
                           "payload", "cycles_per_weight", "local_weights", "high_freq_min", "high_freq_max",
                           "low_freq_min", "low_freq_max"},
                       "env");
    read(e, "mu_min", c.env.mu_min, "env");
    read(e, "mu_max", c.env.mu_max, "env");
    read(e, "mu0", c.env.mu0, "env");
    read(e, "bandwidth", c.env.bandwidth, "env");
    read(e, "power", c.env.power, "env");
    read(e, "noise_power", c.env.noise_power, "env");
    read(e, "gain_min", c.env.gain_min, "env");
    read(e, "gain_max", c.env.gain_max, "env");
    read(e, "payload", c.env.payload, "env");
    read(e, "cycles_per_weight", c.env.cycles_per_weight, "env");
    read(e, "local_weights", c.env.local_weights, "env");
    read(e, "high_freq_min", c.env.high_freq_min, "env");
    read(e, "high_freq_max", c.env.high_freq_max, "env");
    read(e, "low_freq_min", c.env.low_freq_min, "env");
    read(e, "low_freq_max", c.env.low_freq_max, "env");
  }
  std::string noise(to_string(c.noise_mode));
  read(j, "noise_mode", noise, "");
  c.noise_mode = noise_mode_from_string(noise);
  std::string schedule(to_string(c.schedule_mode));
  read(j, "schedule_mode", schedule, "");
  c.schedule_mode = schedule_mode_from_string(schedule);
  read(j, "seeds", c.seeds, "");
  read(j, "probe", c.probe, "");
  read(j, "compute_regret", c.compute_regret, "");
  if (auto it = j.find("dae"); it != j.end()) {
    detail::check_keys(*it, {"hidden", "latent", "lr", "batch_size"}, "dae");
    read(*it, "hidden", c.dae.hidden, "dae");
    read(*it, "latent", c.dae.latent, "dae");
    read(*it, "lr", c.dae.lr, "dae");
    read(*it, "batch_size", c.dae.batch_size, "dae");
  }
  if (auto it = j.find("agent"); it != j.end()) {
    detail::check_keys(*it, {"hidden", "gamma", "clip", "update_epochs", "buffer_capacity", "actor_lr", "critic_lr"},
                       "agent");
    read(*it, "hidden", c.agent.hidden, "agent");
    read(*it, "gamma", c.agent.gamma, "agent");
    read(*it, "clip", c.agent.clip, "agent");
    read(*it, "update_epochs", c.agent.update_epochs, "agent");
    read(*it, "buffer_capacity", c.agent.buffer_capacity, "agent");
    read(*it, "actor_lr", c.agent.actor_lr, "agent");
    read(*it, "critic_lr", c.agent.critic_lr, "agent");
  }
  if (auto it = j.find("hindsight"); it != j.end()) {
    detail::check_keys(*it, {"epochs", "lr", "max_candidates"}, "hindsight");
    read(*it, "epochs", c.hindsight.epochs, "hindsight");
    read(*it, "lr", c.hindsight.lr, "hindsight");
    read(*it, "max_candidates", c.hindsight.max_candidates, "hindsight");
  }
  read(j, "output_dir", c.output_dir, "");
  c.validate();
  return c;
}

inline Json config_to_json(const ExperimentConfig& c) {
  Json j;
  j["stream"] = {{"feature_widths", c.stream.feature_widths},
                 {"num_classes", c.stream.num_classes},
                 {"initial_samples", c.stream.initial_samples},
                 {"new_samples", c.stream.new_samples},
                 {"regime", to_string(c.stream.regime)},
                 {"noise_std", c.stream.noise_std},
                 {"latent_dim", c.stream.latent_dim},
                 {"test_samples", c.stream.test_samples}};
  j["model"] = {{"extractor_hidden", c.model.extractor_hidden},
                {"embedding_width", c.model.embedding_width},
                {"hidden_activation", to_string(c.model.hidden_activation)},
                {"embedding_activation", to_string(c.model.embedding_activation)},
                {"head_hidden", c.model.head_hidden}};
  j["channel"] = {{"levels", c.quantizer_levels}, {"clip", c.clip}, {"clip_quantile", c.clip_quantile}};
  j["horizon"] = c.horizon;
  j["denoising_rounds"] = c.denoising_rounds;
  j["agent_rounds"] = c.agent_rounds;
  j["max_iterations"] = c.max_iterations;
  j["eta"] = c.model.eta;
  j["reward"] = {{"accuracy", c.reward.accuracy}, {"latency", c.reward.latency}, {"disparity", c.reward.disparity}};
  j["env"] = {{"mu_min", c.env.mu_min},
              {"mu_max", c.env.mu_max},
              {"mu0", c.env.mu0},
              {"bandwidth", c.env.bandwidth},
              {"power", c.env.power},
              {"noise_power", c.env.noise_power},
              {"gain_min", c.env.gain_min},
              {"gain_max", c.env.gain_max},
              {"payload", c.env.payload},
              {"cycles_per_weight", c.env.cycles_per_weight},
              {"local_weights", c.env.local_weights},
              {"high_freq_min", c.env.high_freq_min},
              {"high_freq_max", c.env.high_freq_max},
              {"low_freq_min", c.env.low_freq_min},
              {"low_freq_max", c.env.low_freq_max}};
  j["noise_mode"] = to_string(c.noise_mode);
  j["schedule_mode"] = to_string(c.schedule_mode);
  j["seeds"] = c.seeds;
  j["probe"] = c.probe;
  j["compute_regret"] = c.compute_regret;
  j["dae"] = {{"hidden", c.dae.hidden}, {"latent", c.dae.latent}, {"lr", c.dae.lr}, {"batch_size", c.dae.batch_size}};
  j["agent"] = {{"hidden", c.agent.hidden},
                {"gamma", c.agent.gamma},
                {"clip", c.agent.clip},
                {"update_epochs", c.agent.update_epochs},
                {"buffer_capacity", c.agent.buffer_capacity},
                {"actor_lr", c.agent.actor_lr},
                {"critic_lr", c.agent.critic_lr}};
  j["hindsight"] = {{"epochs", c.hindsight.epochs},
                    {"lr", c.hindsight.lr},
                    {"max_candidates", c.hindsight.max_candidates}};
  j["output_dir"] = c.output_dir;
  return j;
}

inline Json read_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  try {
    return Json::parse(in);
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  return config_from_json(read_json_file(path));
}

// ---------------------------------------------------------------------------
// Metrics CSV

struct MetricsRow {
  std::size_t round = 0;  // 1-based
  double train_loss = 0.0;
  double test_loss = 0.0;
  double test_acc = 0.0;
  double latency = 0.0;
  double disparity = 0.0;
  double reward = 0.0;
  double cum_regret = 0.0;
  std::vector<int> iterations;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

inline std::string metrics_header(std::size_t num_sensors) {
  std::string h = "round,train_loss,test_loss,test_acc,latency,disparity,reward,cum_regret";
  for (std::size_t k = 1; k <= num_sensors; ++k) h += ",E_" + std::to_string(k);
  return h;
}

namespace detail {

inline std::string fmt9(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

}  // namespace detail

inline std::string format_metrics_row(const MetricsRow& r) {
  std::string line = std::to_string(r.round);
  for (double v : {r.train_loss, r.test_loss, r.test_acc, r.latency, r.disparity, r.reward, r.cum_regret}) {
    line += ',';
    line += detail::fmt9(v);
  }
  for (int e : r.iterations) line += "," + std::to_string(e);
  return line;
}

class MetricsWriter {
 public:
  MetricsWriter(const std::filesystem::path& path, std::size_t num_sensors) : path_(path), out_(path) {
    if (!out_) throw IoError(path.string() + ": cannot open for writing");
    out_ << metrics_header(num_sensors) << '\n';
    flush();
  }

  void append(const MetricsRow& r) {
    out_ << format_metrics_row(r) << '\n';
    flush();
  }

 private:
  void flush() {
    out_.flush();
    if (!out_) throw IoError(path_.string() + ": write failed");
  }

  std::filesystem::path path_;
  std::ofstream out_;
};

inline void write_metrics(const std::filesystem::path& path, std::span<const MetricsRow> rows,
                          std::size_t num_sensors) {
  MetricsWriter w(path, num_sensors);
  for (const auto& r : rows) w.append(r);
}

struct MetricsTable {
  std::size_t num_sensors = 0;
  std::vector<MetricsRow> rows;
};

inline MetricsTable read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(path.string() + ": cannot open");
  std::string line;
  if (!std::getline(in, line)) throw IoError(path.string() + ": missing header");
  MetricsTable t;
  std::size_t columns = 1;
  for (char c : line) columns += c == ',';
  if (columns < 8 || line.rfind(metrics_header(0), 0) != 0) throw IoError(path.string() + ": unexpected header");
  t.num_sensors = columns - 8;
  if (line != metrics_header(t.num_sensors)) throw IoError(path.string() + ": unexpected header");
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    for (std::string cell; std::getline(ss, cell, ',');) cells.push_back(cell);
    if (cells.size() != columns) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": expected " + std::to_string(columns) +
                    " fields");
    }
    MetricsRow r;
    try {
      r.round = std::stoul(cells[0]);
      double* fields[] = {&r.train_loss, &r.test_loss, &r.test_acc, &r.latency,
                          &r.disparity, &r.reward,    &r.cum_regret};
      for (std::size_t i = 0; i < 7; ++i) *fields[i] = std::stod(cells[i + 1]);
      for (std::size_t k = 0; k < t.num_sensors; ++k) r.iterations.push_back(std::stoi(cells[8 + k]));
    } catch (const std::exception&) {
      throw IoError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
    t.rows.push_back(std::move(r));
  }
  return t;
}

// ---------------------------------------------------------------------------
// Checkpoints: model weights (head first, then extractors) and optional
// DAE weights as binary bundles, plus a JSON manifest with the ledger.

inline void save_checkpoint(const std::filesystem::path& dir, const VflEngine& engine,
                            const std::vector<double>& cumulative_regret) {
  std::filesystem::create_directories(dir);
  std::vector<const DenseNet*> nets{&engine.model().head};
  for (const auto& f : engine.model().features) nets.push_back(&f);
  save_nets(dir / "model.bin", nets);
  for (std::size_t k = 0; k < engine.daes().size(); ++k) {
    engine.daes()[k].save(dir / ("dae_" + std::to_string(k + 1) + ".bin"));
  }
  Json j;
  j["rounds"] = engine.rounds_run();
  j["eta"] = engine.model().eta;
  j["clip"] = engine.clip();
  j["num_sensors"] = engine.model().num_sensors();
  j["daes"] = engine.daes().size();
  j["online_losses"] = engine.online_losses();
  j["cumulative_regret"] = cumulative_regret;
  std::ofstream out(dir / "checkpoint.json");
  out << j.dump(2) << '\n';
  if (!out) throw IoError((dir / "checkpoint.json").string() + ": write failed");
}

inline GlobalModel load_checkpoint_model(const std::filesystem::path& dir) {
  const Json j = read_json_file(dir / "checkpoint.json");
  auto nets = load_nets(dir / "model.bin");
  if (nets.size() != j.at("num_sensors").get<std::size_t>() + 1) {
    throw IoError((dir / "model.bin").string() + ": network count does not match manifest");
  }
  GlobalModel m;
  m.eta = j.at("eta").get<double>();
  m.head = std::move(nets.front());
  for (std::size_t i = 1; i < nets.size(); ++i) m.features.push_back(std::move(nets[i]));
  m.check();
  return m;
}

// ---------------------------------------------------------------------------
// Runs

struct RunOutcome {
  std::filesystem::path metrics_path;
  std::filesystem::path manifest_path;
  std::vector<MetricsRow> rows;
  TheoryProbe probe;
  bool failed = false;
  std::string failure;
  std::string agent_source;  // "trained", a file path, or empty
};

// Trains a scheduling agent on its own session (stream, environment and
// model initialization derived from the run seed but disjoint from the
// measured run's draws).
inline Agent train_scheduling_agent(const ExperimentConfig& cfg, std::uint64_t seed, TrainingTrace* trace = nullptr) {
  SessionConfig scfg = cfg.session(cfg.agent_rounds);
  scfg.engine.keep_iterates = false;
  scfg.engine.probe = false;
  scfg.record_history = false;
  Session session(scfg, Rng::derive(seed, 0xa9e7).next_u64());
  Rng init = Rng::derive(seed, 0xac70);
  Agent agent(cfg.stream.num_sensors(), cfg.resolved_agent(), init);
  ReplayBuffer buffer(agent.config().buffer_capacity);
  Rng explore = Rng::derive(seed, 0x5a3b);
  TrainingTrace t = train_agent(session, agent, buffer, cfg.agent_rounds, explore);
  if (trace) *trace = std::move(t);
  return agent;
}

namespace detail {

inline void write_manifest(const std::filesystem::path& path, const ExperimentConfig& cfg, std::uint64_t seed,
                           const RunOutcome& out, const VflEngine& engine) {
  Json j;
  j["config"] = config_to_json(cfg);
  j["seed"] = seed;
  j["noise_mode"] = to_string(cfg.noise_mode);
  j["schedule_mode"] = to_string(cfg.schedule_mode);
  j["status"] = out.failed ? "failed" : "ok";
  if (out.failed) j["failure"] = out.failure;
  j["rows"] = out.rows.size();
  j["agent"] = out.agent_source;
  j["clip"] = engine.clip();
  j["metrics"] = out.metrics_path.filename().string();
  if (cfg.probe) {
    j["probe"] = {{"beta_noisy", out.probe.beta_noisy},
                  {"beta_denoised", out.probe.has_denoised ? Json(out.probe.beta_denoised) : Json(nullptr)},
                  {"probed_rounds", out.probe.probed_rounds},
                  {"e_max", out.probe.e_max},
                  {"e_min", out.probe.e_min}};
  }
  std::ofstream f(path);
  f << j.dump(2) << '\n';
  if (!f) throw IoError(path.string() + ": write failed");
}

}  // namespace detail

// Executes one (config, seed) run into out_dir: metrics.csv, manifest.json,
// a checkpoint, and the agent weights when one is trained. A numeric
// divergence leaves the rows written so far plus a FAILED marker and is
// reported through RunOutcome::failed.
inline RunOutcome run_experiment(const ExperimentConfig& cfg, std::uint64_t seed, const std::filesystem::path& out_dir,
                                 const std::optional<std::filesystem::path>& agent_path = std::nullopt) {
  cfg.validate();
  std::filesystem::create_directories(out_dir);
  std::filesystem::remove(out_dir / "FAILED");
  RunOutcome out;
  out.metrics_path = out_dir / "metrics.csv";
  out.manifest_path = out_dir / "manifest.json";
  const std::size_t k = cfg.stream.num_sensors();

  std::optional<Agent> agent;
  if (cfg.schedule_mode == ScheduleMode::kDaoPpo) {
    if (agent_path) {
      agent = Agent::load(*agent_path, k, cfg.resolved_agent());
      out.agent_source = agent_path->string();
    } else {
      agent = train_scheduling_agent(cfg, seed);
      agent->save(out_dir / "agent.bin");
      out.agent_source = "trained";
    }
  }

  Session session(cfg.session(cfg.horizon), seed);
  MetricsWriter writer(out.metrics_path, k);
  std::vector<RoundMetrics> rounds;
  Rng unused(0);
  try {
    for (std::size_t t = 0; t < cfg.horizon; ++t) {
      ActionVec action;
      switch (cfg.schedule_mode) {
        case ScheduleMode::kHO: action = baseline_policy(BaselineKind::kHO, k, cfg.max_iterations); break;
        case ScheduleMode::kHE: action = baseline_policy(BaselineKind::kHE, k, cfg.max_iterations); break;
        case ScheduleMode::kDaoPpo: action = agent->select_action(session.observe(), ActionMode::kGreedy, unused).action; break;
      }
      rounds.push_back(session.advance(action));
      // Regret needs the whole stream; until then rows carry the online
      // loss only and are flushed with cum_regret filled in at the end.
      if (!cfg.compute_regret) {
        const RoundMetrics& m = rounds.back();
        MetricsRow r{t + 1, m.train_loss, m.test_loss, m.test_acc, m.latency, m.disparity, m.reward, 0.0,
                     m.iterations};
        writer.append(r);
        out.rows.push_back(std::move(r));
      }
    }
  } catch (const NumericError& e) {
    out.failed = true;
    out.failure = e.what();
  }

  if (cfg.compute_regret) {
    std::vector<double> cumulative(rounds.size(), 0.0);
    if (!out.failed && !rounds.empty()) {
      const VflEngine& engine = session.engine();
      HindsightResult h = hindsight_loss(session.history(), engine.task(), engine.iterates(), cfg.hindsight);
      RegretLedger ledger;
      for (std::size_t t = 0; t < rounds.size(); ++t) ledger.add(rounds[t].train_loss, h.comparator_losses[t]);
      cumulative = ledger.cumulative();
    }
    for (std::size_t t = 0; t < rounds.size(); ++t) {
      const RoundMetrics& m = rounds[t];
      MetricsRow r{t + 1, m.train_loss, m.test_loss, m.test_acc, m.latency, m.disparity, m.reward, cumulative[t],
                   m.iterations};
      writer.append(r);
      out.rows.push_back(std::move(r));
    }
  }

  out.probe = session.engine().probe();
  if (out.failed) {
    std::ofstream marker(out_dir / "FAILED");
    marker << out.failure << '\n';
  } else {
    std::vector<double> cumulative;
    for (const auto& r : out.rows) cumulative.push_back(r.cum_regret);
    save_checkpoint(out_dir / "checkpoint", session.engine(), cumulative);
  }
  detail::write_manifest(out.manifest_path, cfg, seed, out, session.engine());
  return out;
}

// ---------------------------------------------------------------------------
// Comparison across runs

struct MetricStats {
  std::vector<double> mean;
  std::vector<double> std;  // population formula
};

struct GroupSummary {
  std::string label;
  std::size_t runs = 0;
  std::map<std::string, MetricStats> per_round;  // keyed by CSV column name
  double final_acc = 0.0;    // mean over runs of the last round's test_acc
  double avg_latency = 0.0;  // mean over runs of the per-run mean latency
  double avg_reward = 0.0;
  double final_acc_std = 0.0;
  double avg_latency_std = 0.0;
  double avg_reward_std = 0.0;
};

inline const std::vector<std::string>& compared_metrics() {
  static const std::vector<std::string> names{"train_loss", "test_loss", "test_acc",  "latency",
                                              "disparity",  "reward",    "cum_regret"};
  return names;
}

namespace detail {

inline double metric_of(const MetricsRow& r, const std::string& name) {
  if (name == "train_loss") return r.train_loss;
  if (name == "test_loss") return r.test_loss;
  if (name == "test_acc") return r.test_acc;
  if (name == "latency") return r.latency;
  if (name == "disparity") return r.disparity;
  if (name == "reward") return r.reward;
  if (name == "cum_regret") return r.cum_regret;
  throw ContractError("unknown metric '" + name + "'");
}

inline std::pair<double, double> mean_std(std::span<const double> v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / static_cast<double>(v.size()))};
}

}  // namespace detail

inline GroupSummary summarize_group(const std::string& label, std::span<const MetricsTable> runs) {
  if (runs.empty()) throw ContractError("compare_runs: group '" + label + "' has no runs");
  const std::size_t horizon = runs.front().rows.size();
  for (const auto& r : runs) {
    if (r.rows.size() != horizon) {
      throw ContractError("compare_runs: group '" + label + "' mixes horizons " + std::to_string(horizon) + " and " +
                          std::to_string(r.rows.size()));
    }
  }
  if (horizon == 0) throw ContractError("compare_runs: group '" + label + "' has empty runs");
  GroupSummary g;
  g.label = label;
  g.runs = runs.size();
  std::vector<double> column(runs.size());
  for (const auto& name : compared_metrics()) {
    MetricStats& s = g.per_round[name];
    for (std::size_t t = 0; t < horizon; ++t) {
      for (std::size_t i = 0; i < runs.size(); ++i) column[i] = detail::metric_of(runs[i].rows[t], name);
      auto [m, sd] = detail::mean_std(column);
      s.mean.push_back(m);
      s.std.push_back(sd);
    }
  }
  std::vector<double> final_acc, avg_latency, avg_reward;
  for (const auto& r : runs) {
    final_acc.push_back(r.rows.back().test_acc);
    double lat = 0.0, rew = 0.0;
    for (const auto& row : r.rows) {
      lat += row.latency;
      rew += row.reward;
    }
    avg_latency.push_back(lat / static_cast<double>(horizon));
    avg_reward.push_back(rew / static_cast<double>(horizon));
  }
  std::tie(g.final_acc, g.final_acc_std) = detail::mean_std(final_acc);
  std::tie(g.avg_latency, g.avg_latency_std) = detail::mean_std(avg_latency);
  std::tie(g.avg_reward, g.avg_reward_std) = detail::mean_std(avg_reward);
  return g;
}

// Groups must share one horizon so per-round tables line up.
inline std::vector<GroupSummary> compare_runs(const std::map<std::string, std::vector<MetricsTable>>& groups) {
  std::vector<GroupSummary> out;
  for (const auto& [label, runs] : groups) out.push_back(summarize_group(label, runs));
  for (const auto& g : out) {
    if (g.per_round.at("reward").mean.size() != out.front().per_round.at("reward").mean.size()) {
      throw ContractError("compare_runs: groups '" + out.front().label + "' and '" + g.label +
                          "' have different horizons");
    }
  }
  return out;
}

// Per-round table: group,round,<metric>_mean,<metric>_std,...
inline void write_comparison(const std::filesystem::path& path, std::span<const GroupSummary> groups) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << "group,round";
  for (const auto& name : compared_metrics()) out << ',' << name << "_mean," << name << "_std";
  out << '\n';
  for (const auto& g : groups) {
    const std::size_t horizon = g.per_round.at("reward").mean.size();
    for (std::size_t t = 0; t < horizon; ++t) {
      out << g.label << ',' << t + 1;
      for (const auto& name : compared_metrics()) {
        const auto& s = g.per_round.at(name);
        out << ',' << detail::fmt9(s.mean[t]) << ',' << detail::fmt9(s.std[t]);
      }
      out << '\n';
    }
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

inline void write_summary(const std::filesystem::path& path, std::span<const GroupSummary> groups) {
  std::ofstream out(path);
  if (!out) throw IoError(path.string() + ": cannot open for writing");
  out << "group,runs,final_acc_mean,final_acc_std,avg_latency_mean,avg_latency_std,avg_reward_mean,avg_reward_std\n";
  for (const auto& g : groups) {
    out << g.label << ',' << g.runs << ',' << detail::fmt9(g.final_acc) << ',' << detail::fmt9(g.final_acc_std) << ','
        << detail::fmt9(g.avg_latency) << ',' << detail::fmt9(g.avg_latency_std) << ',' << detail::fmt9(g.avg_reward)
        << ',' << detail::fmt9(g.avg_reward_std) << '\n';
  }
  if (!out) throw IoError(path.string() + ": write failed");
}

// Looks up a dotted key ("noise_mode", "config.channel.levels") in a run
// manifest; plain keys fall back to the embedded config.
inline std::string manifest_group_key(const Json& manifest, const std::string& key) {
  auto lookup = [&](const Json& root) -> const Json* {
    const Json* node = &root;
    std::stringstream ss(key);
    for (std::string part; std::getline(ss, part, '.');) {
      if (!node->is_object() || !node->contains(part)) return nullptr;
      node = &(*node)[part];
    }
    return node;
  };
  const Json* v = lookup(manifest);
  if (!v && manifest.contains("config")) v = lookup(manifest["config"]);
  if (!v) throw ConfigError("group key '" + key + "' not found in manifest");
  return v->is_string() ? v->get<std::string>() : v->dump();
}

}  // namespace daovfl

#endif  // DAOVFL_EXPERIMENT_HPP_
