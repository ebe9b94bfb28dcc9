#ifndef DAOVFL_HINDSIGHT_HPP_
#define DAOVFL_HINDSIGHT_HPP_

// Fixed comparator chosen in hindsight for regret measurement.
//
// sum_t F_t(Theta) over overlapping windows equals a weighted loss over
// the distinct samples, with w_n = sum_{t : n in window t} 1 / N_t. The
// comparator minimizes that objective with full-gradient descent, then
// the best model among it and a probe set is returned.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/streams.hpp"
#include "daovfl/vflcore.hpp"

namespace daovfl {

struct WeightedDataset {
  std::vector<Mat> blocks;
  std::vector<double> labels;
  std::vector<double> weights;

  std::size_t size() const { return labels.size(); }
};

// Distinct samples seen by the stream plus each round's window membership.
class StreamHistory {
 public:
  void record(const RoundBatch& batch) {
    if (widths_.empty()) {
      for (const auto& b : batch.blocks) widths_.push_back(b.cols());
    } else if (batch.blocks.size() != widths_.size()) {
      throw DimensionError("StreamHistory: sensor count changed");
    }
    std::vector<std::size_t> rows;
    rows.reserve(batch.size());
    for (std::size_t r = 0; r < batch.size(); ++r) {
      auto [it, inserted] = index_.try_emplace(batch.ids[r], labels_.size());
      if (inserted) {
        std::vector<double> x;
        for (const auto& b : batch.blocks) x.insert(x.end(), b.row(r).begin(), b.row(r).end());
        features_.push_back(std::move(x));
        labels_.push_back(batch.labels[r]);
      }
      rows.push_back(it->second);
    }
    windows_.push_back(std::move(rows));
  }

  std::size_t rounds() const { return windows_.size(); }
  std::size_t distinct_samples() const { return labels_.size(); }

  // Rows of the given distinct-sample indices as per-sensor blocks.
  WeightedDataset gather(std::span<const std::size_t> rows, std::span<const double> weights) const {
    WeightedDataset d;
    for (auto w : widths_) d.blocks.emplace_back(rows.size(), w);
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const auto& x = features_[rows[i]];
      std::size_t off = 0;
      for (std::size_t k = 0; k < widths_.size(); ++k) {
        auto dst = d.blocks[k].row(i);
        std::copy_n(x.begin() + static_cast<std::ptrdiff_t>(off), widths_[k], dst.begin());
        off += widths_[k];
      }
      d.labels.push_back(labels_[rows[i]]);
    }
    d.weights.assign(weights.begin(), weights.end());
    return d;
  }

  WeightedDataset round(std::size_t t) const {
    const auto& rows = windows_.at(t);
    const double w = 1.0 / static_cast<double>(rows.size());
    return gather(rows, std::vector<double>(rows.size(), w));
  }

  // Weighted union whose weighted loss equals sum_t F_t.
  WeightedDataset union_dataset() const {
    std::vector<double> w(labels_.size(), 0.0);
    for (const auto& rows : windows_) {
      const double inv = 1.0 / static_cast<double>(rows.size());
      for (auto r : rows) w[r] += inv;
    }
    std::vector<std::size_t> all(labels_.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    return gather(all, w);
  }

 private:
  std::vector<std::size_t> widths_;
  std::unordered_map<std::uint64_t, std::size_t> index_;
  std::vector<std::vector<double>> features_;
  std::vector<double> labels_;
  std::vector<std::vector<std::size_t>> windows_;
};

struct JointGradient {
  double loss = 0.0;
  GradBundle head;
  std::vector<GradBundle> features;
};

// Weighted loss and its gradient with respect to every block of Theta.
inline JointGradient joint_gradient(const GlobalModel& model, const WeightedDataset& data, Task task) {
  std::vector<ForwardTrace> traces;
  std::vector<const Mat*> parts;
  traces.reserve(model.num_sensors());
  for (std::size_t k = 0; k < model.num_sensors(); ++k) {
    traces.push_back(mlp_forward(model.features[k], data.blocks[k]));
    parts.push_back(&traces.back().output());
  }
  ForwardTrace head = mlp_forward(model.head, hconcat(std::span<const Mat* const>(parts)));
  LossResult loss = weighted_task_loss(task, head.output(), data.labels, data.weights);
  BackwardResult hb = mlp_backward(model.head, head, loss.grad);
  JointGradient g;
  g.loss = loss.loss;
  g.head = std::move(hb.grads);
  std::size_t offset = 0;
  for (std::size_t k = 0; k < model.num_sensors(); ++k) {
    const std::size_t width = traces[k].output().cols();
    Mat upstream = column_block(hb.input_grad, offset, width);
    g.features.push_back(mlp_backward(model.features[k], traces[k], upstream).grads);
    offset += width;
  }
  return g;
}

inline double weighted_loss(const GlobalModel& model, const WeightedDataset& data, Task task) {
  return weighted_task_loss(task, model_output(model, data.blocks), data.labels, data.weights).loss;
}

// F_t(Theta) for every recorded round.
inline std::vector<double> per_round_losses(const GlobalModel& model, const StreamHistory& history, Task task) {
  std::vector<double> out;
  out.reserve(history.rounds());
  for (std::size_t t = 0; t < history.rounds(); ++t) out.push_back(weighted_loss(model, history.round(t), task));
  return out;
}

struct HindsightConfig {
  std::size_t epochs = 200;
  double lr = 0.01;
  std::size_t max_candidates = 40;  // probe-set members scored (evenly thinned)
};

struct HindsightResult {
  GlobalModel comparator;
  std::vector<double> comparator_losses;  // F_t(Theta*) per round
  double cumulative_loss = 0.0;
  std::string source;  // "fit", "zero" or "probe:<i>"
};

// Full-gradient descent on sum_t F_t starting from the best probe-set
// member; the step is halved and the move rejected whenever the objective
// fails to decrease. The final choice is the argmin over the fitted model,
// the zero model and the (thinned) probe set.
inline HindsightResult hindsight_loss(const StreamHistory& history, Task task,
                                      std::span<const GlobalModel> probe_set, const HindsightConfig& cfg = {}) {
  if (history.rounds() == 0) throw ContractError("hindsight_loss: empty history");
  if (probe_set.empty()) throw ContractError("hindsight_loss: probe set needs at least the final online model");
  const WeightedDataset data = history.union_dataset();

  struct Candidate {
    const GlobalModel* model;
    std::string source;
    double objective;
  };
  std::vector<Candidate> candidates;
  const GlobalModel zero = probe_set.back().zeroed();
  candidates.push_back({&zero, "zero", weighted_loss(zero, data, task)});
  const std::size_t n = probe_set.size();
  const std::size_t stride = cfg.max_candidates && n > cfg.max_candidates ? (n + cfg.max_candidates - 1) / cfg.max_candidates : 1;
  for (std::size_t i = 0; i < n; i += stride) {
    candidates.push_back({&probe_set[i], "probe:" + std::to_string(i), weighted_loss(probe_set[i], data, task)});
  }
  if ((n - 1) % stride != 0) {
    candidates.push_back({&probe_set[n - 1], "probe:" + std::to_string(n - 1),
                          weighted_loss(probe_set[n - 1], data, task)});
  }
  for (const auto& c : candidates) {
    if (!std::isfinite(c.objective)) throw NumericError("hindsight_loss: non-finite candidate loss (" + c.source + ")");
  }
  const auto best = std::min_element(candidates.begin(), candidates.end(),
                                     [](const Candidate& a, const Candidate& b) { return a.objective < b.objective; });

  // The zero model is a saddle of the extractor-head product, so descent
  // starts from the best probe instead.
  const auto start = std::min_element(candidates.begin() + 1, candidates.end(),
                                      [](const Candidate& a, const Candidate& b) { return a.objective < b.objective; });
  GlobalModel fit = *start->model;
  double objective = start->objective;
  double lr = cfg.lr;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    JointGradient g = joint_gradient(fit, data, task);
    GlobalModel trial = fit;
    ogd_step(trial.head, g.head, lr);
    for (std::size_t k = 0; k < trial.num_sensors(); ++k) ogd_step(trial.features[k], g.features[k], lr);
    const double trial_objective = weighted_loss(trial, data, task);
    if (std::isfinite(trial_objective) && trial_objective < objective) {
      fit = std::move(trial);
      objective = trial_objective;
    } else {
      lr *= 0.5;
    }
  }
  if (!fit.finite()) throw NumericError("hindsight_loss: comparator diverged");

  HindsightResult res;
  if (objective <= best->objective) {
    res.comparator = std::move(fit);
    res.source = "fit";
  } else {
    res.comparator = *best->model;
    res.source = best->source;
  }
  res.comparator_losses = per_round_losses(res.comparator, history, task);
  res.cumulative_loss = 0.0;
  for (double l : res.comparator_losses) res.cumulative_loss += l;
  return res;
}

}  // namespace daovfl

#endif  // DAOVFL_HINDSIGHT_HPP_
