#ifndef DAOVFL_NUMKIT_HPP_
#define DAOVFL_NUMKIT_HPP_

// Dense matrices and fully connected networks with hand-written
// backpropagation. Every model in the library (feature extractors, head,
// denoising autoencoders, actor and critic) is a DenseNet.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/rng.hpp"

namespace daovfl {

// Row-major matrix of doubles.
class Mat {
 public:
  Mat() = default;
  Mat(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Mat(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) {
      throw DimensionError("Mat: data length " + std::to_string(data_.size()) +
                           " != " + std::to_string(rows_) + "x" +
                           std::to_string(cols_));
    }
  }

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const {
    return data_[r * cols_ + c];
  }

  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  std::span<const double> row(std::size_t r) const {
    return {data_.data() + r * cols_, cols_};
  }

  std::vector<double>& data() { return data_; }
  const std::vector<double>& data() const { return data_; }

  bool same_shape(const Mat& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  friend bool operator==(const Mat&, const Mat&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

inline std::string shape_str(const Mat& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

inline bool all_finite(std::span<const double> v) {
  return std::all_of(v.begin(), v.end(), [](double x) { return std::isfinite(x); });
}
inline bool all_finite(const Mat& m) { return all_finite(m.data()); }

// a (n x k) * b (k x m)
inline Mat matmul(const Mat& a, const Mat& b) {
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: " + shape_str(a) + " * " + shape_str(b));
  }
  Mat out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto o = out.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double aik = a(i, k);
      if (aik == 0.0) continue;
      auto br = b.row(k);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += aik * br[j];
    }
  }
  return out;
}

// a^T (k x n) * b (n x m) without materializing the transpose.
inline Mat matmul_tn(const Mat& a, const Mat& b) {
  if (a.rows() != b.rows()) {
    throw DimensionError("matmul_tn: " + shape_str(a) + "^T * " + shape_str(b));
  }
  Mat out(a.cols(), b.cols());
  for (std::size_t n = 0; n < a.rows(); ++n) {
    auto ar = a.row(n);
    auto br = b.row(n);
    for (std::size_t i = 0; i < a.cols(); ++i) {
      const double ai = ar[i];
      if (ai == 0.0) continue;
      auto o = out.row(i);
      for (std::size_t j = 0; j < b.cols(); ++j) o[j] += ai * br[j];
    }
  }
  return out;
}

// a (n x m) * b^T (m x k)
inline Mat matmul_nt(const Mat& a, const Mat& b) {
  if (a.cols() != b.cols()) {
    throw DimensionError("matmul_nt: " + shape_str(a) + " * " + shape_str(b) + "^T");
  }
  Mat out(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ar = a.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      auto br = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += ar[k] * br[k];
      out(i, j) = s;
    }
  }
  return out;
}

// Column-wise concatenation; all parts must share the row count.
inline Mat hconcat(std::span<const Mat* const> parts) {
  if (parts.empty()) return {};
  const std::size_t rows = parts.front()->rows();
  std::size_t cols = 0;
  for (const Mat* p : parts) {
    if (p->rows() != rows) {
      throw DimensionError("hconcat: row mismatch " + shape_str(*p));
    }
    cols += p->cols();
  }
  Mat out(rows, cols);
  for (std::size_t r = 0; r < rows; ++r) {
    auto o = out.row(r);
    std::size_t off = 0;
    for (const Mat* p : parts) {
      auto src = p->row(r);
      std::copy(src.begin(), src.end(), o.begin() + static_cast<std::ptrdiff_t>(off));
      off += p->cols();
    }
  }
  return out;
}

inline Mat hconcat(const std::vector<Mat>& parts) {
  std::vector<const Mat*> ptrs;
  ptrs.reserve(parts.size());
  for (const auto& p : parts) ptrs.push_back(&p);
  return hconcat(std::span<const Mat* const>(ptrs));
}

// Columns [begin, begin + count).
inline Mat column_block(const Mat& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.cols()) {
    throw DimensionError("column_block: [" + std::to_string(begin) + ", " +
                         std::to_string(begin + count) + ") of " + shape_str(m));
  }
  Mat out(m.rows(), count);
  for (std::size_t r = 0; r < m.rows(); ++r) {
    auto src = m.row(r);
    std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(begin), count, out.row(r).begin());
  }
  return out;
}

// Rows [begin, begin + count).
inline Mat row_block(const Mat& m, std::size_t begin, std::size_t count) {
  if (begin + count > m.rows()) throw DimensionError("row_block out of range");
  Mat out(count, m.cols());
  std::copy_n(m.data().begin() + static_cast<std::ptrdiff_t>(begin * m.cols()),
              count * m.cols(), out.data().begin());
  return out;
}

inline double mean_squared_difference(const Mat& a, const Mat& b) {
  if (!a.same_shape(b)) {
    throw DimensionError("mean_squared_difference: " + shape_str(a) + " vs " + shape_str(b));
  }
  if (a.empty()) return 0.0;
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a.data()[i] - b.data()[i];
    s += d * d;
  }
  return s / static_cast<double>(a.size());
}

// ---------------------------------------------------------------------------
// Networks

enum class Activation { kLinear, kRelu, kTanh, kSigmoid };

inline std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kSigmoid: return "sigmoid";
  }
  return "?";
}

inline Activation activation_from_string(std::string_view s) {
  if (s == "linear") return Activation::kLinear;
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "sigmoid") return Activation::kSigmoid;
  throw ConfigError("unknown activation '" + std::string(s) + "'");
}

// y = act(x * weight + bias); weight is (in x out).
struct Layer {
  Mat weight;
  std::vector<double> bias;
  Activation activation = Activation::kLinear;

  std::size_t in_width() const { return weight.rows(); }
  std::size_t out_width() const { return weight.cols(); }
  friend bool operator==(const Layer&, const Layer&) = default;
};

struct DenseNet {
  std::vector<Layer> layers;

  std::size_t input_width() const { return layers.empty() ? 0 : layers.front().in_width(); }
  std::size_t output_width() const { return layers.empty() ? 0 : layers.back().out_width(); }

  std::size_t param_count() const {
    std::size_t n = 0;
    for (const auto& l : layers) n += l.weight.size() + l.bias.size();
    return n;
  }

  // Throws DimensionError if consecutive layer widths disagree.
  void check() const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& l = layers[i];
      if (l.bias.size() != l.out_width()) {
        throw DimensionError("layer " + std::to_string(i) + ": bias length mismatch");
      }
      if (i + 1 < layers.size() && l.out_width() != layers[i + 1].in_width()) {
        throw DimensionError("layer " + std::to_string(i) + " output width " +
                             std::to_string(l.out_width()) + " != next input width " +
                             std::to_string(layers[i + 1].in_width()));
      }
    }
  }

  bool finite() const {
    for (const auto& l : layers) {
      if (!all_finite(l.weight) || !all_finite(l.bias)) return false;
    }
    return true;
  }

  friend bool operator==(const DenseNet&, const DenseNet&) = default;
};

// Glorot-uniform weights, zero biases. `widths` has one more entry than
// `activations`.
inline DenseNet make_dense_net(std::span<const std::size_t> widths,
                               std::span<const Activation> activations, Rng& rng) {
  if (widths.size() < 2 || activations.size() + 1 != widths.size()) {
    throw ConfigError("make_dense_net: need widths.size() == activations.size() + 1 >= 2");
  }
  DenseNet net;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const std::size_t in = widths[i];
    const std::size_t out = widths[i + 1];
    if (in == 0 || out == 0) throw ConfigError("make_dense_net: zero width");
    Layer layer{Mat(in, out), std::vector<double>(out, 0.0), activations[i]};
    const double limit = std::sqrt(6.0 / static_cast<double>(in + out));
    for (auto& w : layer.weight.data()) w = rng.uniform(-limit, limit);
    net.layers.push_back(std::move(layer));
  }
  return net;
}

// Convenience: same activation on hidden layers, `out_act` on the last.
inline DenseNet make_mlp(std::span<const std::size_t> widths, Activation hidden_act,
                         Activation out_act, Rng& rng) {
  std::vector<Activation> acts(widths.size() >= 2 ? widths.size() - 1 : 0, hidden_act);
  if (!acts.empty()) acts.back() = out_act;
  return make_dense_net(widths, acts, rng);
}

struct ForwardTrace {
  Mat input;
  std::vector<Mat> outputs;  // post-activation, one per layer

  const Mat& output() const { return outputs.empty() ? input : outputs.back(); }
};

namespace detail {

inline void apply_activation(Activation act, std::span<double> v) {
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kRelu:
      for (auto& x : v) x = x > 0.0 ? x : 0.0;
      break;
    case Activation::kTanh:
      for (auto& x : v) x = std::tanh(x);
      break;
    case Activation::kSigmoid:
      for (auto& x : v) x = 1.0 / (1.0 + std::exp(-x));
      break;
  }
}

// Multiplies `grad` in place by act'(z), expressed through the output y.
inline void activation_backward(Activation act, std::span<const double> y,
                                std::span<double> grad) {
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kRelu:
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] = y[i] > 0.0 ? grad[i] : 0.0;
      break;
    case Activation::kTanh:
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] *= 1.0 - y[i] * y[i];
      break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < y.size(); ++i) grad[i] *= y[i] * (1.0 - y[i]);
      break;
  }
}

}  // namespace detail

inline Mat layer_forward(const Layer& layer, const Mat& x) {
  if (x.cols() != layer.in_width()) {
    throw DimensionError("layer_forward: input " + shape_str(x) + " vs layer input width " +
                         std::to_string(layer.in_width()));
  }
  Mat z = matmul(x, layer.weight);
  for (std::size_t r = 0; r < z.rows(); ++r) {
    auto zr = z.row(r);
    for (std::size_t c = 0; c < zr.size(); ++c) zr[c] += layer.bias[c];
  }
  detail::apply_activation(layer.activation, z.data());
  return z;
}

inline ForwardTrace mlp_forward(const DenseNet& net, const Mat& x) {
  if (net.layers.empty()) throw DimensionError("mlp_forward: empty network");
  if (x.cols() != net.input_width()) {
    throw DimensionError("mlp_forward: input " + shape_str(x) + " vs network input width " +
                         std::to_string(net.input_width()));
  }
  ForwardTrace trace;
  trace.input = x;
  trace.outputs.reserve(net.layers.size());
  const Mat* cur = &trace.input;
  for (const auto& layer : net.layers) {
    trace.outputs.push_back(layer_forward(layer, *cur));
    cur = &trace.outputs.back();
  }
  return trace;
}

// Output only; skips keeping the intermediate activations around.
inline Mat predict(const DenseNet& net, const Mat& x) {
  if (net.layers.empty()) throw DimensionError("predict: empty network");
  Mat cur = layer_forward(net.layers.front(), x);
  for (std::size_t i = 1; i < net.layers.size(); ++i) cur = layer_forward(net.layers[i], cur);
  return cur;
}

struct GradBundle {
  std::vector<Mat> weight;
  std::vector<std::vector<double>> bias;

  static GradBundle zeros_like(const DenseNet& net) {
    GradBundle g;
    for (const auto& l : net.layers) {
      g.weight.emplace_back(l.weight.rows(), l.weight.cols());
      g.bias.emplace_back(l.bias.size(), 0.0);
    }
    return g;
  }

  bool congruent_with(const DenseNet& net) const {
    if (weight.size() != net.layers.size() || bias.size() != net.layers.size()) return false;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (!weight[i].same_shape(net.layers[i].weight)) return false;
      if (bias[i].size() != net.layers[i].bias.size()) return false;
    }
    return true;
  }

  bool finite() const {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      if (!all_finite(weight[i]) || !all_finite(bias[i])) return false;
    }
    return true;
  }

  GradBundle& operator+=(const GradBundle& o) {
    for (std::size_t i = 0; i < weight.size(); ++i) {
      for (std::size_t j = 0; j < weight[i].size(); ++j) weight[i].data()[j] += o.weight[i].data()[j];
      for (std::size_t j = 0; j < bias[i].size(); ++j) bias[i][j] += o.bias[i][j];
    }
    return *this;
  }

  // Layer-major flattening: weights then bias for each layer.
  std::vector<double> flatten() const {
    std::vector<double> out;
    for (std::size_t i = 0; i < weight.size(); ++i) {
      out.insert(out.end(), weight[i].data().begin(), weight[i].data().end());
      out.insert(out.end(), bias[i].begin(), bias[i].end());
    }
    return out;
  }
};

// Same ordering as GradBundle::flatten.
inline std::vector<double> flatten_params(const DenseNet& net) {
  std::vector<double> out;
  out.reserve(net.param_count());
  for (const auto& l : net.layers) {
    out.insert(out.end(), l.weight.data().begin(), l.weight.data().end());
    out.insert(out.end(), l.bias.begin(), l.bias.end());
  }
  return out;
}

struct BackwardResult {
  GradBundle grads;
  Mat input_grad;
};

inline BackwardResult mlp_backward(const DenseNet& net, const ForwardTrace& trace,
                                   const Mat& upstream_grad) {
  if (trace.outputs.size() != net.layers.size()) {
    throw DimensionError("mlp_backward: trace has " + std::to_string(trace.outputs.size()) +
                         " layers, network has " + std::to_string(net.layers.size()));
  }
  if (!upstream_grad.same_shape(trace.output())) {
    throw DimensionError("mlp_backward: upstream " + shape_str(upstream_grad) +
                         " vs output " + shape_str(trace.output()));
  }
  BackwardResult res;
  res.grads = GradBundle::zeros_like(net);
  Mat delta = upstream_grad;
  for (std::size_t li = net.layers.size(); li-- > 0;) {
    const Layer& layer = net.layers[li];
    const Mat& out = trace.outputs[li];
    const Mat& in = li == 0 ? trace.input : trace.outputs[li - 1];
    detail::activation_backward(layer.activation, out.data(), delta.data());
    res.grads.weight[li] = matmul_tn(in, delta);
    auto& db = res.grads.bias[li];
    for (std::size_t r = 0; r < delta.rows(); ++r) {
      auto dr = delta.row(r);
      for (std::size_t c = 0; c < dr.size(); ++c) db[c] += dr[c];
    }
    delta = matmul_nt(delta, layer.weight);
  }
  res.input_grad = std::move(delta);
  return res;
}

// ---------------------------------------------------------------------------
// Optimizers

inline void check_step_inputs(const DenseNet& net, const GradBundle& grads, double rate,
                              const char* who) {
  if (!(rate >= 0.0) || !std::isfinite(rate)) {
    throw ContractError(std::string(who) + ": learning rate must be finite and >= 0");
  }
  if (!grads.congruent_with(net)) {
    throw DimensionError(std::string(who) + ": gradient shapes do not match network");
  }
  if (!grads.finite()) throw NumericError(std::string(who) + ": non-finite gradient");
}

// p <- p - eta * g
inline void ogd_step(DenseNet& net, const GradBundle& grads, double eta) {
  check_step_inputs(net, grads, eta, "ogd_step");
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& w = net.layers[i].weight.data();
    const auto& gw = grads.weight[i].data();
    for (std::size_t j = 0; j < w.size(); ++j) w[j] -= eta * gw[j];
    auto& b = net.layers[i].bias;
    for (std::size_t j = 0; j < b.size(); ++j) b[j] -= eta * grads.bias[i][j];
  }
}

struct AdamState {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long step = 0;
  GradBundle first;   // m
  GradBundle second;  // v
};

inline void adam_step(DenseNet& net, const GradBundle& grads, AdamState& state, double lr) {
  check_step_inputs(net, grads, lr, "adam_step");
  if (state.step == 0 || !state.first.congruent_with(net)) {
    state.first = GradBundle::zeros_like(net);
    state.second = GradBundle::zeros_like(net);
    state.step = 0;
  }
  ++state.step;
  const double b1 = state.beta1;
  const double b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.step));
  auto update = [&](double& p, double g, double& m, double& v) {
    m = b1 * m + (1.0 - b1) * g;
    v = b2 * v + (1.0 - b2) * g * g;
    const double m_hat = m / c1;
    const double v_hat = v / c2;
    p -= lr * m_hat / (std::sqrt(v_hat) + state.epsilon);
  };
  for (std::size_t i = 0; i < net.layers.size(); ++i) {
    auto& w = net.layers[i].weight.data();
    for (std::size_t j = 0; j < w.size(); ++j) {
      update(w[j], grads.weight[i].data()[j], state.first.weight[i].data()[j],
             state.second.weight[i].data()[j]);
    }
    auto& b = net.layers[i].bias;
    for (std::size_t j = 0; j < b.size(); ++j) {
      update(b[j], grads.bias[i][j], state.first.bias[i][j], state.second.bias[i][j]);
    }
  }
}

// ---------------------------------------------------------------------------
// Losses (mean reduction over the batch unless weights are supplied)

struct LossResult {
  double loss = 0.0;
  Mat grad;
};

namespace detail {

inline void check_labels(const Mat& logits, std::span<const int> labels) {
  if (labels.size() != logits.rows()) {
    throw DimensionError("softmax_xent: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(logits.rows()) + " rows");
  }
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= logits.cols()) {
      throw DomainError("softmax_xent: label " + std::to_string(y) + " outside [0, " +
                        std::to_string(logits.cols()) + ")");
    }
  }
}

// Per-row loss and unscaled gradient (softmax - onehot).
inline double softmax_row(std::span<const double> z, int label, std::span<double> g) {
  const double zmax = *std::max_element(z.begin(), z.end());
  double denom = 0.0;
  for (std::size_t c = 0; c < z.size(); ++c) {
    g[c] = std::exp(z[c] - zmax);
    denom += g[c];
  }
  const double lse = zmax + std::log(denom);
  for (std::size_t c = 0; c < z.size(); ++c) g[c] /= denom;
  g[static_cast<std::size_t>(label)] -= 1.0;
  return lse - z[static_cast<std::size_t>(label)];
}

}  // namespace detail

inline LossResult softmax_xent(const Mat& logits, std::span<const int> labels) {
  detail::check_labels(logits, labels);
  LossResult res{0.0, Mat(logits.rows(), logits.cols())};
  if (logits.rows() == 0) return res;
  const double inv_n = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    res.loss += detail::softmax_row(logits.row(r), labels[r], res.grad.row(r));
    for (auto& g : res.grad.row(r)) g *= inv_n;
  }
  res.loss *= inv_n;
  return res;
}

// sum_n w_n * l_n; used for hindsight objectives over overlapping windows.
inline LossResult weighted_softmax_xent(const Mat& logits, std::span<const int> labels,
                                        std::span<const double> weights) {
  detail::check_labels(logits, labels);
  if (weights.size() != logits.rows()) throw DimensionError("weighted_softmax_xent: weights");
  LossResult res{0.0, Mat(logits.rows(), logits.cols())};
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    res.loss += weights[r] * detail::softmax_row(logits.row(r), labels[r], res.grad.row(r));
    for (auto& g : res.grad.row(r)) g *= weights[r];
  }
  return res;
}

inline LossResult mse_loss(const Mat& pred, const Mat& target) {
  if (!pred.same_shape(target)) {
    throw DimensionError("mse_loss: " + shape_str(pred) + " vs " + shape_str(target));
  }
  LossResult res{0.0, Mat(pred.rows(), pred.cols())};
  if (pred.empty()) return res;
  const double inv = 1.0 / static_cast<double>(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred.data()[i] - target.data()[i];
    res.loss += d * d;
    res.grad.data()[i] = 2.0 * d * inv;
  }
  res.loss *= inv;
  return res;
}

// Row weights w_n: sum_n w_n * mean_c (pred - target)^2.
inline LossResult weighted_mse_loss(const Mat& pred, const Mat& target,
                                    std::span<const double> weights) {
  if (!pred.same_shape(target) || weights.size() != pred.rows()) {
    throw DimensionError("weighted_mse_loss: shape mismatch");
  }
  LossResult res{0.0, Mat(pred.rows(), pred.cols())};
  const double inv_c = pred.cols() ? 1.0 / static_cast<double>(pred.cols()) : 0.0;
  for (std::size_t r = 0; r < pred.rows(); ++r) {
    for (std::size_t c = 0; c < pred.cols(); ++c) {
      const double d = pred(r, c) - target(r, c);
      res.loss += weights[r] * d * d * inv_c;
      res.grad(r, c) = 2.0 * weights[r] * d * inv_c;
    }
  }
  return res;
}

}  // namespace daovfl

#endif  // DAOVFL_NUMKIT_HPP_
