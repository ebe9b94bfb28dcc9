// Command-line front end: run, sweep and compare experiments.
//
// Exit codes: 0 success, 2 configuration error, 3 numeric divergence,
// 1 anything else (I/O, malformed inputs).

#include <glob.h>

#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "daovfl/experiment.hpp"

namespace fs = std::filesystem;

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitDiverged = 3;

std::pair<std::uint64_t, std::uint64_t> parse_seed_range(const std::string& text) {
  const auto dots = text.find("..");
  try {
    if (dots == std::string::npos) {
      const auto s = std::stoull(text);
      return {s, s};
    }
    const auto a = std::stoull(text.substr(0, dots));
    const auto b = std::stoull(text.substr(dots + 2));
    if (b < a) throw daovfl::ConfigError("seed range '" + text + "' is empty");
    return {a, b};
  } catch (const std::logic_error& e) {
    if (dynamic_cast<const daovfl::ConfigError*>(&e)) throw;
    throw daovfl::ConfigError("bad seed range '" + text + "' (expected a..b)");
  }
}

void report(const daovfl::RunOutcome& out, std::uint64_t seed) {
  if (out.failed) {
    std::fprintf(stderr, "seed %llu: diverged after %zu rounds: %s\n", static_cast<unsigned long long>(seed),
                 out.rows.size(), out.failure.c_str());
    return;
  }
  const auto& last = out.rows.back();
  std::printf("seed %llu: %zu rounds, final test_acc %.4f, cum_regret %.4f -> %s\n",
              static_cast<unsigned long long>(seed), out.rows.size(), last.test_acc, last.cum_regret,
              out.metrics_path.string().c_str());
}

int cmd_run(const std::string& config, std::uint64_t seed, const std::string& out_dir,
            const std::optional<std::string>& agent) {
  const auto cfg = daovfl::load_config(config);
  std::optional<fs::path> agent_path;
  if (agent) agent_path = fs::path(*agent);
  const auto out = daovfl::run_experiment(cfg, seed, out_dir, agent_path);
  report(out, seed);
  return out.failed ? kExitDiverged : 0;
}

int cmd_sweep(const std::string& config, const std::string& seeds, const std::string& out_dir,
              const std::optional<std::string>& agent) {
  const auto cfg = daovfl::load_config(config);
  const auto [first, last] = parse_seed_range(seeds);
  std::optional<fs::path> agent_path;
  if (agent) agent_path = fs::path(*agent);
  int status = 0;
  for (std::uint64_t s = first; s <= last; ++s) {
    const auto out = daovfl::run_experiment(cfg, s, fs::path(out_dir) / ("seed_" + std::to_string(s)), agent_path);
    report(out, s);
    if (out.failed) status = kExitDiverged;
  }
  return status;
}

int cmd_compare(const std::string& pattern, const std::string& group_by, const std::string& out_file) {
  glob_t g{};
  const int rc = ::glob(pattern.c_str(), 0, nullptr, &g);
  std::vector<fs::path> files;
  if (rc == 0) {
    for (std::size_t i = 0; i < g.gl_pathc; ++i) files.emplace_back(g.gl_pathv[i]);
  }
  globfree(&g);
  if (files.empty()) throw daovfl::IoError("no metrics files match '" + pattern + "'");

  std::map<std::string, std::vector<daovfl::MetricsTable>> groups;
  for (const auto& f : files) {
    const fs::path manifest = f.parent_path() / "manifest.json";
    const auto j = daovfl::read_json_file(manifest);
    groups[daovfl::manifest_group_key(j, group_by)].push_back(daovfl::read_metrics(f));
  }
  const auto summary = daovfl::compare_runs(groups);
  const fs::path out(out_file);
  if (out.has_parent_path()) fs::create_directories(out.parent_path());
  daovfl::write_comparison(out, summary);
  fs::path summary_path = out;
  summary_path.replace_filename(out.stem().string() + "_summary.csv");
  daovfl::write_summary(summary_path, summary);
  for (const auto& s : summary) {
    std::printf("%-12s runs=%zu final_acc=%.4f avg_latency=%.3f avg_reward=%.4f\n", s.label.c_str(), s.runs,
                s.final_acc, s.avg_latency, s.avg_reward);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Online vertical federated learning simulator"};
  app.require_subcommand(1);

  std::string config, out, seeds, pattern, group_by;
  std::uint64_t seed = 1;
  std::optional<std::string> agent;

  auto* run = app.add_subcommand("run", "Run one (config, seed) experiment");
  run->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  run->add_option("--seed", seed, "Run seed")->required();
  run->add_option("--out", out, "Output directory")->required();
  run->add_option("--agent", agent, "Pre-trained agent weights for DAO-PPO")->check(CLI::ExistingFile);

  auto* sweep = app.add_subcommand("sweep", "Run one experiment per seed in a range");
  sweep->add_option("--config", config, "Experiment JSON")->required()->check(CLI::ExistingFile);
  sweep->add_option("--seeds", seeds, "Seed range a..b")->required();
  sweep->add_option("--out", out, "Output directory (one seed_<n> subdirectory per seed)")->required();
  sweep->add_option("--agent", agent, "Pre-trained agent weights for DAO-PPO")->check(CLI::ExistingFile);

  auto* compare = app.add_subcommand("compare", "Aggregate metrics files by a manifest key");
  compare->add_option("--glob", pattern, "Pattern matching metrics.csv files")->required();
  compare->add_option("--group-by", group_by, "Manifest key, e.g. noise_mode or config.channel.levels")->required();
  compare->add_option("--out", out, "Per-round comparison CSV (a _summary.csv is written alongside)")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitConfig;
  }

  try {
    if (*run) return cmd_run(config, seed, out, agent);
    if (*sweep) return cmd_sweep(config, seeds, out, agent);
    return cmd_compare(pattern, group_by, out);
  } catch (const daovfl::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const daovfl::NumericError& e) {
    std::cerr << "numeric divergence: " << e.what() << '\n';
    return kExitDiverged;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
}
