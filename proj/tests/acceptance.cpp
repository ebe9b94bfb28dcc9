// Acceptance suite: one PASS/FAIL line per criterion. Pass criterion
// numbers as arguments to run a subset. Exit status is non-zero when any
// selected criterion fails.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "daovfl/daovfl.hpp"

namespace fs = std::filesystem;
using namespace daovfl;

namespace {

constexpr int kSeeds = 10;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// ||a - b|| / max(||a||, ||b||), with a floor for all-zero gradients.
double rel_norm_err(const std::vector<double>& a, const std::vector<double>& b) {
  double d = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    d += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  return std::sqrt(d) / std::max({std::sqrt(na), std::sqrt(nb), 1e-8});
}

template <typename F>
std::vector<double> fd_params(DenseNet net, F&& f, double h = 1e-5) {
  std::vector<double> out;
  for (auto& l : net.layers) {
    auto probe = [&](double& p) {
      const double saved = p;
      p = saved + h;
      const double up = f(net);
      p = saved - h;
      const double down = f(net);
      p = saved;
      out.push_back((up - down) / (2.0 * h));
    };
    for (auto& w : l.weight.data()) probe(w);
    for (auto& b : l.bias) probe(b);
  }
  return out;
}

template <typename F>
std::vector<double> fd_mat(Mat x, F&& f, double h = 1e-5) {
  std::vector<double> out;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.data()[i];
    x.data()[i] = saved + h;
    const double up = f(x);
    x.data()[i] = saved - h;
    const double down = f(x);
    x.data()[i] = saved;
    out.push_back((up - down) / (2.0 * h));
  }
  return out;
}

Mat random_mat(std::size_t r, std::size_t c, Rng& rng) {
  Mat m(r, c);
  for (auto& v : m.data()) v = rng.normal(0.0, 1.0);
  return m;
}

bool near_kink(const DenseNet& net, const Mat& x, double margin) {
  Mat h = x;
  for (const auto& l : net.layers) {
    Mat z = matmul(h, l.weight);
    for (std::size_t r = 0; r < z.rows(); ++r) {
      for (std::size_t c = 0; c < z.cols(); ++c) {
        if (l.activation == Activation::kRelu && std::fabs(z(r, c) + l.bias[c]) < margin) return true;
      }
    }
    h = layer_forward(l, h);
  }
  return false;
}

// ---------------------------------------------------------------------------

Verdict numerics() {
  double worst_net = 0.0, worst_xent = 0.0, worst_mse = 0.0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(seed);
    DenseNet net;
    Mat x, up;
    do {
      const std::size_t layers = 1 + rng.below(3);
      std::vector<std::size_t> widths;
      for (std::size_t i = 0; i <= layers; ++i) widths.push_back(1 + rng.below(12));
      std::vector<Activation> acts;
      for (std::size_t i = 0; i < layers; ++i) acts.push_back(static_cast<Activation>(rng.below(4)));
      net = make_dense_net(widths, acts, rng);
      x = random_mat(1 + rng.below(6), widths.front(), rng);
      up = random_mat(x.rows(), widths.back(), rng);
    } while (near_kink(net, x, 1e-3));
    auto objective = [&](const DenseNet& n) {
      const Mat y = predict(n, x);
      double s = 0.0;
      for (std::size_t i = 0; i < y.size(); ++i) s += y.data()[i] * up.data()[i];
      return s;
    };
    const ForwardTrace tr = mlp_forward(net, x);
    worst_net = std::max(worst_net, rel_norm_err(mlp_backward(net, tr, up).grads.flatten(), fd_params(net, objective)));

    const std::size_t classes = 2 + rng.below(6);
    const Mat logits = random_mat(1 + rng.below(8), classes, rng);
    std::vector<int> labels;
    for (std::size_t i = 0; i < logits.rows(); ++i) labels.push_back(static_cast<int>(rng.below(classes)));
    const LossResult xe = softmax_xent(logits, labels);
    worst_xent = std::max(worst_xent, rel_norm_err(xe.grad.data(), fd_mat(logits, [&](const Mat& z) {
                                                     return softmax_xent(z, labels).loss;
                                                   })));

    const Mat pred = random_mat(1 + rng.below(8), 1 + rng.below(4), rng);
    const Mat target = random_mat(pred.rows(), pred.cols(), rng);
    const LossResult ms = mse_loss(pred, target);
    worst_mse = std::max(worst_mse, rel_norm_err(ms.grad.data(), fd_mat(pred, [&](const Mat& p) {
                                                   return mse_loss(p, target).loss;
                                                 })));
  }
  const double worst = std::max({worst_net, worst_xent, worst_mse});
  return {worst <= 1e-4, fmt("max rel err: mlp %.2e, xent %.2e, mse %.2e (100 seeds)", worst_net, worst_xent, worst_mse)};
}

Verdict formulas() {
  std::vector<std::string> bad;
  auto check = [&](bool ok, const std::string& what) {
    if (!ok) bad.push_back(what);
  };
  const double r = transmission_rate(1e7, 4, 1e-4, 1.0, 5e-2);
  check(std::fabs(r - 7.205e3) / 7.205e3 <= 1e-3, fmt("rate %.3f", r));
  check(std::fabs(comp_latency(2, 1e3, 5e5, 2.5e7) - 40.0) < 1e-12, "computation latency");
  check(disparity(std::vector<int>{1, 3}) == 2.0, "disparity");
  check(collection_latency(3, 2.5, 2.0) == 9.5, "collection latency");
  check(std::fabs(comm_latency(1e5, r) - 1e5 / r) < 1e-12, "communication latency");
  const std::vector<LatencyTriple> lat{{5, 14, 40}, {8, 20, 20}, {11, 10, 12.5}};
  check(total_latency(lat) == 59.0, "total latency");
  check(std::fabs(reward(RewardWeights{}, 0.8, 59.0, 2.0) - (0.8 - 0.59 - 0.1)) < 1e-12, "reward");
  std::string detail = fmt("rate=%.2f comm=%.3f s comp=40 s H=2", r, comm_latency(1e5, r));
  for (const auto& b : bad) detail += "; mismatch: " + b;
  return {bad.empty(), detail};
}

// Least-squares slope of log y against log x.
double loglog_slope(const std::vector<double>& x, const std::vector<double>& y) {
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += std::log(x[i]);
    my += std::log(y[i]);
  }
  mx /= static_cast<double>(x.size());
  my /= static_cast<double>(x.size());
  double sxy = 0, sxx = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (std::log(x[i]) - mx) * (std::log(y[i]) - my);
    sxx += (std::log(x[i]) - mx) * (std::log(x[i]) - mx);
  }
  return sxy / sxx;
}

Verdict regret() {
  const std::size_t horizon = 2000;
  ExperimentConfig c;
  c.stream.num_classes = 0;
  c.stream.initial_samples = 32;
  c.stream.new_samples = 32;
  c.model.extractor_hidden = {};
  c.model.embedding_width = 2;
  c.model.embedding_activation = Activation::kLinear;
  c.model.eta = 1.0 / std::sqrt(static_cast<double>(horizon));
  c.horizon = horizon;
  c.denoising_rounds = 0;
  c.max_iterations = 1;
  c.hindsight.epochs = 500;
  c.hindsight.lr = 0.05;
  Session s(c.session(horizon), 1);
  const std::vector<int> e(c.stream.num_sensors(), 1);
  for (std::size_t t = 0; t < horizon; ++t) s.advance(e);
  const HindsightResult h = hindsight_loss(s.history(), Task::kRegression, s.engine().iterates(), c.hindsight);
  RegretLedger ledger;
  for (std::size_t t = 0; t < horizon; ++t) ledger.add(s.engine().online_losses()[t], h.comparator_losses[t]);
  std::vector<double> ts, rs;
  for (double t = 100; t <= 2000.5; t *= std::pow(20.0, 1.0 / 24.0)) {
    const auto i = static_cast<std::size_t>(std::lround(t)) - 1;
    ts.push_back(static_cast<double>(i + 1));
    rs.push_back(ledger.cumulative()[i]);
  }
  for (double r : rs) {
    if (!(r > 0.0)) return {false, fmt("cumulative regret not positive (%.4g); slope undefined", r)};
  }
  const double slope = loglog_slope(ts, rs);
  return {slope < 1.0, fmt("log-log slope %.3f over t in [100, 2000]; Reg_100=%.3f Reg_2000=%.3f (comparator: %s)", slope,
                           rs.front(), rs.back(), h.source.c_str())};
}

ExperimentConfig base_config() {
  ExperimentConfig c;
  c.compute_regret = false;
  return c;
}

// Runs one session with a fixed schedule row; returns the last round.
RoundMetrics run_fixed(const ExperimentConfig& c, std::uint64_t seed, const std::vector<int>& row) {
  Session s(c.session(c.horizon), seed);
  RoundMetrics last;
  for (std::size_t t = 0; t < c.horizon; ++t) last = s.advance(row);
  return last;
}

Verdict homogeneous() {
  ExperimentConfig c = base_config();
  const std::size_t k = c.stream.num_sensors();
  const int e = 2;
  const std::vector<int> ho(k, e);
  std::vector<int> he(k, 1);
  he[0] = static_cast<int>(k) * e - static_cast<int>(k - 1);
  int wins = 0;
  std::vector<double> lo, le;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const double a = run_fixed(c, seed, ho).test_loss;
    const double b = run_fixed(c, seed, he).test_loss;
    lo.push_back(a);
    le.push_back(b);
    if (a <= b) ++wins;
  }
  return {wins >= 8, fmt("HO%s <= HE%s final test loss in %d/10 seeds (mean %.4f vs %.4f)", "[2,2,2,2]", "[5,1,1,1]", wins,
                         mean_of(lo), mean_of(le))};
}

Verdict noise_reduction() {
  ExperimentConfig c = base_config();
  c.quantizer_levels = 8;
  c.denoising_rounds = 40;
  const std::vector<int> row(c.stream.num_sensors(), 2);
  int ordered = 0;
  std::vector<double> ne, ni, dao;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    c.noise_mode = NoiseMode::kNE;
    ne.push_back(run_fixed(c, seed, row).test_acc);
    c.noise_mode = NoiseMode::kNI;
    ni.push_back(run_fixed(c, seed, row).test_acc);
    c.noise_mode = NoiseMode::kDaoNr;
    dao.push_back(run_fixed(c, seed, row).test_acc);
    if (ne.back() >= dao.back() && dao.back() > ni.back()) ++ordered;
  }
  const double gap = mean_of(ne) - mean_of(dao);
  return {ordered >= 8 && gap <= 0.05,
          fmt("NE >= DAO-NR > NI in %d/10 seeds; mean acc NE %.4f DAO-NR %.4f NI %.4f (NE - DAO-NR = %.2f pp)", ordered,
              mean_of(ne), mean_of(dao), mean_of(ni), 100.0 * gap)};
}

Verdict denoising_period() {
  ExperimentConfig c = base_config();
  c.noise_mode = NoiseMode::kDaoNr;
  const std::vector<int> row(c.stream.num_sensors(), 2);
  std::vector<double> a20, a40;
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    c.denoising_rounds = 20;
    a20.push_back(run_fixed(c, seed, row).test_acc);
    c.denoising_rounds = 40;
    a40.push_back(run_fixed(c, seed, row).test_acc);
  }
  return {mean_of(a40) >= mean_of(a20), fmt("mean final acc T_dl=40 %.4f vs T_dl=20 %.4f", mean_of(a40), mean_of(a20))};
}

Verdict theory_probe() {
  ExperimentConfig c = base_config();
  c.probe = true;
  c.horizon = 80;
  c.denoising_rounds = 40;
  const std::vector<int> row(c.stream.num_sensors(), 2);
  const std::uint64_t seeds = 5;
  std::vector<double> bn8, bd8;
  for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
    c.noise_mode = NoiseMode::kDaoNr;
    c.quantizer_levels = 8;
    Session s(c.session(c.horizon), seed);
    for (std::size_t t = 0; t < c.horizon; ++t) s.advance(row);
    bn8.push_back(s.engine().probe().beta_noisy);
    bd8.push_back(s.engine().probe().beta_denoised);
  }
  std::vector<double> bn_by_l;
  c.noise_mode = NoiseMode::kNI;
  for (int levels : {4, 16, 64}) {
    c.quantizer_levels = levels;
    std::vector<double> b;
    for (std::uint64_t seed = 1; seed <= seeds; ++seed) {
      Session s(c.session(c.horizon), seed);
      for (std::size_t t = 0; t < c.horizon; ++t) s.advance(row);
      b.push_back(s.engine().probe().beta_noisy);
    }
    bn_by_l.push_back(mean_of(b));
  }
  const bool denoised_ok = mean_of(bd8) <= mean_of(bn8);
  const bool monotone = bn_by_l[1] <= bn_by_l[0] && bn_by_l[2] <= bn_by_l[1];
  return {denoised_ok && monotone,
          fmt("L=8: beta_d %.4g vs beta_n %.4g; beta_n at L=4/16/64: %.4g / %.4g / %.4g", mean_of(bd8), mean_of(bn8),
              bn_by_l[0], bn_by_l[1], bn_by_l[2])};
}

Verdict scheduling() {
  ExperimentConfig c = base_config();
  c.agent_rounds = 300;
  const fs::path root = fs::temp_directory_path() / "daovfl_acceptance_sched";
  fs::remove_all(root);
  int wins = 0;
  std::vector<double> lat_ppo, lat_ho, rew_ppo, rew_ho, rew_he;
  auto averages = [](const RunOutcome& o) {
    double lat = 0, rew = 0;
    for (const auto& r : o.rows) {
      lat += r.latency;
      rew += r.reward;
    }
    const double n = static_cast<double>(o.rows.size());
    return std::pair{lat / n, rew / n};
  };
  for (std::uint64_t seed = 1; seed <= kSeeds; ++seed) {
    const fs::path dir = root / std::to_string(seed);
    c.schedule_mode = ScheduleMode::kDaoPpo;
    const auto [lp, rp] = averages(run_experiment(c, seed, dir / "ppo"));
    c.schedule_mode = ScheduleMode::kHO;
    const auto [lo, ro] = averages(run_experiment(c, seed, dir / "ho"));
    c.schedule_mode = ScheduleMode::kHE;
    const auto [le, re] = averages(run_experiment(c, seed, dir / "he"));
    lat_ppo.push_back(lp);
    lat_ho.push_back(lo);
    rew_ppo.push_back(rp);
    rew_ho.push_back(ro);
    rew_he.push_back(re);
    if (rp >= std::max(ro, re)) ++wins;
  }
  fs::remove_all(root);
  const bool lat_ok = mean_of(lat_ppo) <= mean_of(lat_ho);
  return {lat_ok && wins >= 7,
          fmt("mean latency DAO-PPO %.2f vs HO %.2f; reward >= max(HO, HE) in %d/10 seeds (mean %.4f / %.4f / %.4f)",
              mean_of(lat_ppo), mean_of(lat_ho), wins, mean_of(rew_ppo), mean_of(rew_ho), mean_of(rew_he))};
}

Verdict ppo_properties() {
  std::vector<std::string> bad;
  // Ratio on the first epoch over a freshly collected batch.
  Rng rng(1);
  Agent agent(4, AgentConfig{}, rng);
  std::vector<Transition> batch;
  long legal = 0, total = 0;
  for (int i = 0; i < 256; ++i) {
    StateVec s(agent.state_width());
    for (auto& v : s) v = rng.uniform();
    StateVec next(agent.state_width());
    for (auto& v : next) v = rng.uniform();
    const ActionChoice a = agent.select_action(s, ActionMode::kSample, rng);
    batch.push_back({s, a.action, rng.normal(0.0, 1.0), next, a.log_prob});
  }
  const ActorUpdateStats stats = ppo_actor_update(agent, batch);
  double worst_ratio = 0.0;
  for (double r : stats.ratios) worst_ratio = std::max(worst_ratio, std::fabs(r - 1.0));
  if (worst_ratio > 1e-12) bad.push_back(fmt("ratio off by %.2e", worst_ratio));

  // Critic fixed point on one transition (R = 1, gamma = 0.9).
  AgentConfig critic_cfg;
  critic_cfg.gamma = 0.9;
  Agent critic_agent(4, critic_cfg, rng);
  std::vector<Transition> one{batch.front()};
  one[0].reward = 1.0;
  for (int i = 0; i < 500; ++i) critic_update(critic_agent, one);
  const double gap = std::fabs(critic_agent.value(one[0].state) -
                               (one[0].reward + critic_agent.config().gamma * critic_agent.value(one[0].next_state)));
  if (gap > 0.01) bad.push_back(fmt("critic gap %.4f", gap));

  // Legality across random agents, states and both action modes.
  for (int trial = 0; trial < 50; ++trial) {
    AgentConfig cfg;
    cfg.hidden = {16};
    cfg.max_iterations = 1 + static_cast<int>(rng.below(6));
    Agent a(1 + rng.below(6), cfg, rng);
    for (int i = 0; i < 200; ++i) {
      StateVec s(a.state_width());
      for (auto& v : s) v = rng.uniform();
      const auto mode = i % 2 ? ActionMode::kGreedy : ActionMode::kSample;
      const ActionChoice c = a.select_action(s, mode, rng);
      ++total;
      bool ok = c.action.size() == a.num_sensors();
      for (int e : c.action) ok = ok && e >= 1 && e <= cfg.max_iterations;
      if (ok) ++legal;
    }
  }
  if (legal != total) bad.push_back(fmt("illegal actions %ld/%ld", total - legal, total));
  std::string detail = fmt("max |ratio-1| %.1e; critic gap %.2e after 500 updates; legal actions %ld/%ld", worst_ratio,
                           gap, legal, total);
  for (const auto& b : bad) detail += "; " + b;
  return {bad.empty(), detail};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

Verdict determinism() {
  const fs::path root = fs::temp_directory_path() / "daovfl_acceptance_det";
  fs::remove_all(root);
  ExperimentConfig c;
  c.horizon = 60;
  c.denoising_rounds = 20;
  c.agent_rounds = 40;
  c.noise_mode = NoiseMode::kDaoNr;
  c.schedule_mode = ScheduleMode::kDaoPpo;
  const RunOutcome a = run_experiment(c, 11, root / "a");
  const RunOutcome b = run_experiment(c, 11, root / "b");
  const std::string ma = slurp(a.metrics_path), mb = slurp(b.metrics_path);
  fs::remove_all(root);
  return {!ma.empty() && ma == mb, fmt("DAO-NR + DAO-PPO, 60 rounds: metrics %zu bytes, %s", ma.size(),
                                       ma == mb ? "byte-identical" : "differ")};
}

}  // namespace

int main(int argc, char** argv) {
  struct Criterion {
    int id;
    const char* name;
    std::function<Verdict()> run;
  };
  const std::vector<Criterion> all{
      {1, "gradient checks", numerics},
      {2, "latency and reward formulas", formulas},
      {3, "regret sublinearity", regret},
      {4, "homogeneous vs heterogeneous iterations", homogeneous},
      {5, "noise reduction ordering", noise_reduction},
      {6, "denoising period length", denoising_period},
      {7, "gradient-gap probe", theory_probe},
      {8, "learned scheduling", scheduling},
      {9, "PPO and critic properties", ppo_properties},
      {10, "determinism", determinism},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));
  int failures = 0;
  for (const auto& c : all) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto start = std::chrono::steady_clock::now();
    Verdict v;
    try {
      v = c.run();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    std::printf("%s %2d %s: %s [%.1f s]\n", v.pass ? "PASS" : "FAIL", c.id, c.name, v.detail.c_str(), secs);
    std::fflush(stdout);
    if (!v.pass) ++failures;
  }
  return failures == 0 ? 0 : 1;
}
