#ifndef DAOVFL_VFLCORE_HPP_
#define DAOVFL_VFLCORE_HPP_

// Online vertical split training with a noisy uplink.
//
// Each round: sensors extract embeddings from their current window, the
// uplink perturbs them, the server (optionally) denoises them and
// broadcasts the model representation {head, embeddings}. Every party then
// runs its own number of local gradient steps against that fixed snapshot,
// refreshing only its own block, and carries the result into the next
// round.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "daovfl/channel.hpp"
#include "daovfl/denoiser.hpp"
#include "daovfl/envsim.hpp"
#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/rng.hpp"
#include "daovfl/streams.hpp"

namespace daovfl {

enum class Task { kClassification, kRegression };

enum class NoiseMode { kNE, kNI, kDaoNr };

inline std::string_view to_string(NoiseMode m) {
  switch (m) {
    case NoiseMode::kNE: return "NE";
    case NoiseMode::kNI: return "NI";
    case NoiseMode::kDaoNr: return "DAO-NR";
  }
  return "?";
}

inline NoiseMode noise_mode_from_string(std::string_view s) {
  if (s == "NE") return NoiseMode::kNE;
  if (s == "NI") return NoiseMode::kNI;
  if (s == "DAO-NR") return NoiseMode::kDaoNr;
  throw ConfigError("unknown noise mode '" + std::string(s) + "' (expected NE, NI or DAO-NR)");
}

// ---------------------------------------------------------------------------
// Task losses

inline Mat labels_as_column(std::span<const double> labels) {
  return Mat(labels.size(), 1, std::vector<double>(labels.begin(), labels.end()));
}

inline std::vector<int> labels_as_classes(std::span<const double> labels) {
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i) out[i] = static_cast<int>(labels[i]);
  return out;
}

inline LossResult task_loss(Task task, const Mat& out, std::span<const double> labels) {
  if (task == Task::kClassification) return softmax_xent(out, labels_as_classes(labels));
  return mse_loss(out, labels_as_column(labels));
}

inline LossResult weighted_task_loss(Task task, const Mat& out, std::span<const double> labels,
                                     std::span<const double> weights) {
  if (task == Task::kClassification) {
    return weighted_softmax_xent(out, labels_as_classes(labels), weights);
  }
  return weighted_mse_loss(out, labels_as_column(labels), weights);
}

// Classification: fraction correct. Regression: 1 - RMSE / std(y), in [0, 1].
inline double task_accuracy(Task task, const Mat& out, std::span<const double> labels) {
  if (labels.empty()) return 0.0;
  const double n = static_cast<double>(labels.size());
  if (task == Task::kClassification) {
    std::size_t correct = 0;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      auto row = out.row(r);
      const auto best = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      if (best == static_cast<std::size_t>(labels[r])) ++correct;
    }
    return static_cast<double>(correct) / n;
  }
  double mean = 0.0;
  for (double y : labels) mean += y;
  mean /= n;
  double var = 0.0, sse = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    var += (labels[r] - mean) * (labels[r] - mean);
    sse += (out(r, 0) - labels[r]) * (out(r, 0) - labels[r]);
  }
  if (var <= 0.0) return sse == 0.0 ? 1.0 : 0.0;
  return std::clamp(1.0 - std::sqrt(sse / var), 0.0, 1.0);
}

// ---------------------------------------------------------------------------
// Models

struct ModelConfig {
  std::vector<std::size_t> extractor_hidden{16, 4};
  std::size_t embedding_width = 16;
  Activation hidden_activation = Activation::kTanh;
  Activation embedding_activation = Activation::kTanh;
  std::vector<std::size_t> head_hidden;  // empty: one linear layer
  double eta = 0.01;

  void validate() const {
    if (embedding_width == 0) throw ConfigError("model: embedding_width must be >= 1");
    if (!(eta >= 0.0) || !std::isfinite(eta)) throw ConfigError("model: eta must be >= 0");
    for (auto h : extractor_hidden) {
      if (h == 0) throw ConfigError("model: zero hidden width");
    }
    for (auto h : head_hidden) {
      if (h == 0) throw ConfigError("model: zero hidden width");
    }
  }
};

struct GlobalModel {
  DenseNet head;                  // theta_0
  std::vector<DenseNet> features; // theta_1 .. theta_K
  double eta = 0.01;

  std::size_t num_sensors() const { return features.size(); }

  std::size_t param_count() const {
    std::size_t d = head.param_count();
    for (const auto& f : features) d += f.param_count();
    return d;
  }

  std::vector<std::size_t> embedding_widths() const {
    std::vector<std::size_t> w;
    for (const auto& f : features) w.push_back(f.output_width());
    return w;
  }

  void check() const {
    head.check();
    std::size_t total = 0;
    for (const auto& f : features) {
      f.check();
      total += f.output_width();
    }
    if (head.input_width() != total) {
      throw DimensionError("model: head input width " + std::to_string(head.input_width()) +
                           " != sum of embedding widths " + std::to_string(total));
    }
  }

  bool finite() const {
    if (!head.finite()) return false;
    return std::all_of(features.begin(), features.end(), [](const DenseNet& f) { return f.finite(); });
  }

  // Same shapes, every parameter zero.
  GlobalModel zeroed() const {
    GlobalModel z = *this;
    auto clear = [](DenseNet& n) {
      for (auto& l : n.layers) {
        std::fill(l.weight.data().begin(), l.weight.data().end(), 0.0);
        std::fill(l.bias.begin(), l.bias.end(), 0.0);
      }
    };
    clear(z.head);
    for (auto& f : z.features) clear(f);
    return z;
  }

  friend bool operator==(const GlobalModel&, const GlobalModel&) = default;
};

inline GlobalModel make_global_model(std::span<const std::size_t> feature_widths, std::size_t outputs,
                                     const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  GlobalModel m;
  m.eta = cfg.eta;
  for (auto p : feature_widths) {
    std::vector<std::size_t> widths{p};
    widths.insert(widths.end(), cfg.extractor_hidden.begin(), cfg.extractor_hidden.end());
    widths.push_back(cfg.embedding_width);
    m.features.push_back(make_mlp(widths, cfg.hidden_activation, cfg.embedding_activation, rng));
  }
  std::vector<std::size_t> head_widths{cfg.embedding_width * feature_widths.size()};
  head_widths.insert(head_widths.end(), cfg.head_hidden.begin(), cfg.head_hidden.end());
  head_widths.push_back(outputs);
  m.head = make_mlp(head_widths, cfg.hidden_activation, Activation::kLinear, rng);
  m.check();
  return m;
}

inline Mat extract_embedding(const DenseNet& extractor, const Mat& block) {
  if (block.cols() != extractor.input_width()) {
    throw DimensionError("extract_embedding: block " + shape_str(block) + " vs extractor input width " +
                         std::to_string(extractor.input_width()));
  }
  return mlp_forward(extractor, block).output();
}

inline std::vector<Mat> extract_all(const GlobalModel& model, const std::vector<Mat>& blocks) {
  if (blocks.size() != model.num_sensors()) {
    throw ProtocolError("extract_all: " + std::to_string(blocks.size()) + " blocks for " +
                        std::to_string(model.num_sensors()) + " sensors");
  }
  std::vector<Mat> out;
  out.reserve(blocks.size());
  for (std::size_t k = 0; k < blocks.size(); ++k) out.push_back(extract_embedding(model.features[k], blocks[k]));
  return out;
}

// Full-model output on clean embeddings.
inline Mat model_output(const GlobalModel& model, const std::vector<Mat>& blocks) {
  return predict(model.head, hconcat(extract_all(model, blocks)));
}

inline double model_loss(const GlobalModel& model, const std::vector<Mat>& blocks,
                         std::span<const double> labels, Task task) {
  return task_loss(task, model_output(model, blocks), labels).loss;
}

// ---------------------------------------------------------------------------
// Model representation

// Representation with one entry removed. Entry ids: 0 is the head,
// k = 1..K are sensor embeddings.
struct ReducedView {
  std::size_t excluded = 0;
  const DenseNet* head = nullptr;
  std::vector<std::size_t> block_ids;
  std::vector<const Mat*> blocks;

  bool contains(std::size_t id) const {
    if (id == 0) return head != nullptr;
    return std::find(block_ids.begin(), block_ids.end(), id) != block_ids.end();
  }

  const Mat& block(std::size_t id) const {
    for (std::size_t i = 0; i < block_ids.size(); ++i) {
      if (block_ids[i] == id) return *blocks[i];
    }
    throw ProtocolError("reduced view has no block " + std::to_string(id));
  }
};

class ModelRepresentation {
 public:
  ModelRepresentation(DenseNet head, std::vector<Mat> embeddings)
      : head_(std::move(head)), embeddings_(std::move(embeddings)) {}

  std::size_t num_sensors() const { return embeddings_.size(); }
  const DenseNet& head() const { return head_; }
  const std::vector<Mat>& embeddings() const { return embeddings_; }
  const Mat& embedding(std::size_t k) const { return embeddings_.at(k - 1); }

  Mat head_input() const { return hconcat(embeddings_); }

  ReducedView without(std::size_t id) const {
    if (id > embeddings_.size()) throw ProtocolError("representation has no entry " + std::to_string(id));
    ReducedView v;
    v.excluded = id;
    v.head = id == 0 ? nullptr : &head_;
    for (std::size_t k = 1; k <= embeddings_.size(); ++k) {
      if (k == id) continue;
      v.block_ids.push_back(k);
      v.blocks.push_back(&embeddings_[k - 1]);
    }
    return v;
  }

  // FNV-1a over head parameters and embeddings.
  std::uint64_t checksum() const {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    auto mix = [&h](std::span<const double> values) {
      for (double v : values) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        for (int i = 0; i < 8; ++i) {
          h ^= (bits >> (8 * i)) & 0xff;
          h *= 0x100000001b3ULL;
        }
      }
    };
    for (const auto& l : head_.layers) {
      mix(l.weight.data());
      mix(l.bias);
    }
    for (const auto& e : embeddings_) mix(e.data());
    return h;
  }

 private:
  DenseNet head_;
  std::vector<Mat> embeddings_;
};

inline ModelRepresentation assemble_representation(const DenseNet& head, std::vector<Mat> embeddings,
                                                   std::size_t expected_sensors) {
  if (embeddings.size() != expected_sensors) {
    throw ProtocolError("assemble_representation: " + std::to_string(embeddings.size()) +
                        " embedding blocks, expected " + std::to_string(expected_sensors));
  }
  std::size_t width = 0;
  for (const auto& e : embeddings) {
    if (e.empty()) throw ProtocolError("assemble_representation: empty embedding block");
    if (e.rows() != embeddings.front().rows()) {
      throw ProtocolError("assemble_representation: embedding blocks are not row-aligned");
    }
    width += e.cols();
  }
  if (width != head.input_width()) {
    throw DimensionError("assemble_representation: embeddings total width " + std::to_string(width) +
                         " vs head input width " + std::to_string(head.input_width()));
  }
  return ModelRepresentation(head, std::move(embeddings));
}

// ---------------------------------------------------------------------------
// Local updates

namespace detail {

inline void check_iterations(int iterations, const char* who) {
  if (iterations < 1) {
    throw ContractError(std::string(who) + ": local iteration count must be >= 1, got " +
                        std::to_string(iterations));
  }
}

}  // namespace detail

// E steps on sensor k's extractor. Other embeddings and the head stay at
// their snapshot values; the sensor's own embedding is recomputed from the
// current extractor at every step. Returns the loss seen at each step.
inline std::vector<double> sensor_local_update(DenseNet& extractor, std::size_t sensor,
                                               const ReducedView& view, const Mat& block,
                                               std::span<const double> labels, Task task,
                                               int iterations, double eta,
                                               GradBundle* grad_sum = nullptr) {
  detail::check_iterations(iterations, "sensor_local_update");
  if (view.excluded != sensor || view.head == nullptr) {
    throw ProtocolError("sensor_local_update: view must exclude exactly sensor " + std::to_string(sensor));
  }
  const std::size_t num_sensors = view.block_ids.size() + 1;
  std::vector<const Mat*> parts(num_sensors, nullptr);
  std::size_t offset = 0;
  for (std::size_t k = 1; k <= num_sensors; ++k) {
    if (k == sensor) break;
    offset += view.block(k).cols();
  }
  for (std::size_t i = 0; i < view.block_ids.size(); ++i) parts[view.block_ids[i] - 1] = view.blocks[i];
  if (grad_sum) *grad_sum = GradBundle::zeros_like(extractor);

  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(iterations));
  for (int tau = 0; tau < iterations; ++tau) {
    ForwardTrace own = mlp_forward(extractor, block);
    parts[sensor - 1] = &own.output();
    ForwardTrace head = mlp_forward(*view.head, hconcat(std::span<const Mat* const>(parts)));
    LossResult loss = task_loss(task, head.output(), labels);
    losses.push_back(loss.loss);
    BackwardResult through_head = mlp_backward(*view.head, head, loss.grad);
    Mat upstream = column_block(through_head.input_grad, offset, own.output().cols());
    BackwardResult back = mlp_backward(extractor, own, upstream);
    if (grad_sum) *grad_sum += back.grads;
    ogd_step(extractor, back.grads, eta);
  }
  return losses;
}

// E steps on the head with every embedding block frozen.
inline std::vector<double> head_local_update(DenseNet& head, const std::vector<Mat>& embeddings,
                                             std::span<const double> labels, Task task, int iterations,
                                             double eta, GradBundle* grad_sum = nullptr) {
  detail::check_iterations(iterations, "head_local_update");
  const Mat input = hconcat(embeddings);
  if (grad_sum) *grad_sum = GradBundle::zeros_like(head);
  std::vector<double> losses;
  losses.reserve(static_cast<std::size_t>(iterations));
  for (int tau = 0; tau < iterations; ++tau) {
    ForwardTrace trace = mlp_forward(head, input);
    LossResult loss = task_loss(task, trace.output(), labels);
    losses.push_back(loss.loss);
    BackwardResult back = mlp_backward(head, trace, loss.grad);
    if (grad_sum) *grad_sum += back.grads;
    ogd_step(head, back.grads, eta);
  }
  return losses;
}

// ---------------------------------------------------------------------------
// Regret bookkeeping and theory probes

class RegretLedger {
 public:
  void add(double online, double comparator) {
    if (!std::isfinite(online) || !std::isfinite(comparator)) {
      throw NumericError("regret_update: non-finite loss");
    }
    online_.push_back(online);
    comparator_.push_back(comparator);
    regret_ += online - comparator;
    cumulative_.push_back(regret_);
  }

  std::size_t rounds() const { return online_.size(); }
  double regret() const { return regret_; }
  const std::vector<double>& online() const { return online_; }
  const std::vector<double>& comparator() const { return comparator_; }
  // Reg_t for t = 1..T.
  const std::vector<double>& cumulative() const { return cumulative_; }

 private:
  std::vector<double> online_;
  std::vector<double> comparator_;
  std::vector<double> cumulative_;
  double regret_ = 0.0;
};

inline RegretLedger& regret_update(RegretLedger& ledger, double online, double comparator) {
  ledger.add(online, comparator);
  return ledger;
}

// Empirical stand-ins for the regret-bound quantities. beta_* is the
// running max over probed rounds of the largest per-coordinate gap between
// the stacked local gradients computed from perturbed and clean
// representations.
struct TheoryProbe {
  double beta_noisy = 0.0;
  double beta_denoised = 0.0;
  bool has_denoised = false;
  std::size_t probed_rounds = 0;
  int e_max = 0;
  int e_min = 0;
  // Constants that appear only in the bound; not estimated.
  double lipschitz = NAN;
  double smoothness = NAN;
  double param_bound = NAN;

  void observe_schedule(std::span<const int> row) {
    for (int e : row) {
      if (e_max == 0) {
        e_max = e_min = e;
      } else {
        e_max = std::max(e_max, e);
        e_min = std::min(e_min, e);
      }
    }
  }
};

inline double max_abs_gap(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw DimensionError("max_abs_gap: length mismatch");
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

// ---------------------------------------------------------------------------
// Round engine

struct EngineConfig {
  ModelConfig model;
  NoiseMode noise = NoiseMode::kNE;
  int quantizer_levels = 8;
  double clip = 0.0;  // <= 0: calibrated from the first round's clean embeddings
  double clip_quantile = 0.999;
  DaeConfig dae;      // dae.training_rounds is the denoising learning period
  bool probe = false;
  bool keep_iterates = true;
  RewardWeights reward;

  void validate() const {
    model.validate();
    dae.validate();
    reward.validate();
    if (noise != NoiseMode::kNE && quantizer_levels < 2) {
      throw ConfigError("engine: quantizer levels must be >= 2");
    }
  }
};

struct RoundMetrics {
  std::size_t round = 0;
  double train_loss = 0.0;  // F_t at the round-start model; the online loss
  double test_loss = 0.0;
  double test_acc = 0.0;
  double latency = 0.0;
  double disparity = 0.0;
  double reward = 0.0;
  std::vector<int> iterations;
  int head_iterations = 0;
  std::uint64_t representation_checksum = 0;

  bool finite() const {
    return std::isfinite(train_loss) && std::isfinite(test_loss) && std::isfinite(test_acc) &&
           std::isfinite(latency) && std::isfinite(disparity) && std::isfinite(reward);
  }
};

struct Evaluation {
  double loss = 0.0;
  double accuracy = 0.0;
};

class VflEngine {
 public:
  VflEngine(const StreamConfig& stream, EngineConfig cfg, std::uint64_t seed)
      : cfg_(std::move(cfg)),
        task_(stream.regression() ? Task::kRegression : Task::kClassification),
        clip_(cfg_.clip) {
    cfg_.validate();
    Rng init = Rng::derive(seed, 0x1417);
    const std::size_t outputs = stream.regression() ? 1 : static_cast<std::size_t>(stream.num_classes);
    model_ = make_global_model(stream.feature_widths, outputs, cfg_.model, init);
    if (cfg_.noise == NoiseMode::kDaoNr) {
      Rng dae_rng = Rng::derive(seed, 0xdae);
      for (std::size_t k = 0; k < model_.num_sensors(); ++k) {
        daes_.emplace_back(cfg_.model.embedding_width, cfg_.dae, dae_rng);
      }
    }
  }

  const EngineConfig& config() const { return cfg_; }
  Task task() const { return task_; }
  std::size_t rounds_run() const { return round_; }
  const GlobalModel& model() const { return model_; }
  GlobalModel& mutable_model() { return model_; }
  const std::vector<DaeModel>& daes() const { return daes_; }
  std::vector<DaeModel>& mutable_daes() { return daes_; }
  const TheoryProbe& probe() const { return probe_; }
  const std::vector<double>& online_losses() const { return online_losses_; }
  const std::vector<GlobalModel>& iterates() const { return iterates_; }
  double clip() const { return clip_; }
  void set_clip(double clip) { clip_ = clip; }

  ChannelSpec channel() const {
    if (cfg_.noise == NoiseMode::kNE) return ChannelSpec::identity();
    return ChannelSpec::quantizer(cfg_.quantizer_levels, clip_ > 0.0 ? clip_ : 1.0);
  }

  bool in_denoising_period() const {
    return cfg_.noise == NoiseMode::kDaoNr && round_ < cfg_.dae.training_rounds;
  }

  // Server-side view of the sensors' embeddings after the uplink, in the
  // form the current round uses them.
  std::vector<Mat> received_embeddings(const std::vector<Mat>& clean) const {
    if (cfg_.noise == NoiseMode::kNE) return clean;
    const ChannelSpec spec = channel();
    std::vector<Mat> out;
    for (std::size_t k = 0; k < clean.size(); ++k) {
      if (in_denoising_period()) {
        out.push_back(clean[k]);
      } else {
        Mat noisy = transmit(spec, clean[k]);
        out.push_back(cfg_.noise == NoiseMode::kDaoNr ? daes_[k].denoise(noisy) : std::move(noisy));
      }
    }
    return out;
  }

  Evaluation evaluate(const RoundBatch& test) const {
    auto received = received_embeddings(extract_all(model_, test.blocks));
    Mat out = predict(model_.head, hconcat(received));
    return {task_loss(task_, out, test.labels).loss, task_accuracy(task_, out, test.labels)};
  }

  RoundMetrics run_global_round(const RoundBatch& batch, const RoundBatch& test, std::span<const int> iterations,
                                const Environment& env, const RoundConditions& conditions) {
    if (iterations.size() != model_.num_sensors()) {
      throw ContractError("run_global_round: schedule row has " + std::to_string(iterations.size()) +
                          " entries for " + std::to_string(model_.num_sensors()) + " sensors");
    }
    for (int e : iterations) detail::check_iterations(e, "run_global_round");

    RoundMetrics m;
    m.round = round_;
    m.iterations.assign(iterations.begin(), iterations.end());
    m.head_iterations = *std::max_element(iterations.begin(), iterations.end());

    const std::vector<Mat> clean = extract_all(model_, batch.blocks);
    m.train_loss = task_loss(task_, predict(model_.head, hconcat(clean)), batch.labels).loss;
    online_losses_.push_back(m.train_loss);
    if (cfg_.keep_iterates) iterates_.push_back(model_);

    if (cfg_.noise != NoiseMode::kNE && clip_ <= 0.0) clip_ = calibrate_clip(clean, cfg_.clip_quantile);

    std::vector<Mat> noisy;
    if (cfg_.noise != NoiseMode::kNE || cfg_.probe) {
      const ChannelSpec spec = channel();
      for (const auto& h : clean) noisy.push_back(transmit(spec, h));
    }

    std::vector<Mat> used;
    if (cfg_.noise == NoiseMode::kNE) {
      used = clean;
    } else if (cfg_.noise == NoiseMode::kNI) {
      used = noisy;
    } else if (in_denoising_period()) {
      for (std::size_t k = 0; k < clean.size(); ++k) daes_[k].train_round({noisy[k], clean[k]});
      used = clean;
    } else {
      for (std::size_t k = 0; k < clean.size(); ++k) used.push_back(daes_[k].denoise(noisy[k]));
    }

    if (cfg_.probe && !in_denoising_period()) {
      probe_round(batch, clean, noisy, m.iterations, m.head_iterations);
    }
    probe_.observe_schedule(iterations);

    const ModelRepresentation rep = assemble_representation(model_.head, std::move(used), model_.num_sensors());
    m.representation_checksum = rep.checksum();

    // Local updates are independent given the snapshot; merged in index order.
    std::vector<DenseNet> updated = model_.features;
    for (std::size_t k = 1; k <= model_.num_sensors(); ++k) {
      sensor_local_update(updated[k - 1], k, rep.without(k), batch.blocks[k - 1], batch.labels, task_,
                          iterations[k - 1], model_.eta);
    }
    DenseNet head = model_.head;
    head_local_update(head, rep.embeddings(), batch.labels, task_, m.head_iterations, model_.eta);

    model_.features = std::move(updated);
    model_.head = std::move(head);
    if (!model_.finite()) {
      throw NumericError("run_global_round: model diverged (non-finite parameters) at round " +
                         std::to_string(round_));
    }

    ++round_;
    const Evaluation eval = evaluate(test);
    m.test_loss = eval.loss;
    m.test_acc = eval.accuracy;
    m.latency = env.round_latency(conditions, iterations);
    m.disparity = disparity(iterations);
    m.reward = reward(cfg_.reward, m.test_acc, m.latency, m.disparity);
    if (!m.finite()) throw NumericError("run_global_round: non-finite metrics at round " + std::to_string(m.round));
    return m;
  }

  // Stacked local-gradient gaps for the given clean/noisy embeddings under
  // the current model; updates the running beta estimates.
  void gradient_gap_probe(const RoundBatch& batch, const std::vector<Mat>& clean, const std::vector<Mat>& noisy,
                          std::span<const int> iterations) {
    if (!cfg_.probe) throw StateError("gradient_gap_probe: probe mode is disabled");
    probe_round(batch, clean, noisy, std::vector<int>(iterations.begin(), iterations.end()),
                *std::max_element(iterations.begin(), iterations.end()));
  }

 private:
  std::vector<double> stacked_gradient(const RoundBatch& batch, const std::vector<Mat>& embeddings,
                                       const std::vector<int>& iterations, int head_iterations) const {
    const ModelRepresentation rep(model_.head, embeddings);
    std::vector<double> stacked;
    GradBundle g;
    DenseNet head = model_.head;
    head_local_update(head, rep.embeddings(), batch.labels, task_, head_iterations, model_.eta, &g);
    auto flat = g.flatten();
    stacked.insert(stacked.end(), flat.begin(), flat.end());
    for (std::size_t k = 1; k <= model_.num_sensors(); ++k) {
      DenseNet f = model_.features[k - 1];
      sensor_local_update(f, k, rep.without(k), batch.blocks[k - 1], batch.labels, task_, iterations[k - 1],
                          model_.eta, &g);
      flat = g.flatten();
      stacked.insert(stacked.end(), flat.begin(), flat.end());
    }
    return stacked;
  }

  void probe_round(const RoundBatch& batch, const std::vector<Mat>& clean, const std::vector<Mat>& noisy,
                   const std::vector<int>& iterations, int head_iterations) {
    const auto g_clean = stacked_gradient(batch, clean, iterations, head_iterations);
    const auto g_noisy = stacked_gradient(batch, noisy, iterations, head_iterations);
    probe_.beta_noisy = std::max(probe_.beta_noisy, max_abs_gap(g_noisy, g_clean));
    if (!daes_.empty() && std::all_of(daes_.begin(), daes_.end(), [](const DaeModel& d) { return d.frozen(); })) {
      std::vector<Mat> denoised;
      for (std::size_t k = 0; k < noisy.size(); ++k) denoised.push_back(daes_[k].denoise(noisy[k]));
      const auto g_denoised = stacked_gradient(batch, denoised, iterations, head_iterations);
      probe_.beta_denoised = std::max(probe_.beta_denoised, max_abs_gap(g_denoised, g_clean));
      probe_.has_denoised = true;
    }
    ++probe_.probed_rounds;
  }

  EngineConfig cfg_;
  Task task_;
  GlobalModel model_;
  std::vector<DaeModel> daes_;
  double clip_ = 0.0;
  std::size_t round_ = 0;
  TheoryProbe probe_;
  std::vector<double> online_losses_;
  std::vector<GlobalModel> iterates_;
};

}  // namespace daovfl

#endif  // DAOVFL_VFLCORE_HPP_
