#ifndef DAOVFL_DENOISER_HPP_
#define DAOVFL_DENOISER_HPP_

// Per-sensor denoising autoencoder. Trained on (noisy, clean) embedding
// pairs while clean embeddings are available, then frozen.

#include <algorithm>
#include <filesystem>
#include <string>
#include <vector>

#include "daovfl/errors.hpp"
#include "daovfl/numkit.hpp"
#include "daovfl/rng.hpp"
#include "daovfl/serialize.hpp"

namespace daovfl {

struct DaeConfig {
  std::size_t hidden = 16;
  std::size_t latent = 4;
  double lr = 0.01;
  std::size_t batch_size = 32;     // rows per Adam step within a pass
  std::size_t training_rounds = 40;  // T_dl; frozen afterwards

  void validate() const {
    if (hidden == 0 || latent == 0) throw ConfigError("dae: widths must be >= 1");
    if (!(lr > 0.0)) throw ConfigError("dae: lr must be > 0");
    if (batch_size == 0) throw ConfigError("dae: batch_size must be >= 1");
  }
};

struct DaePair {
  Mat noisy;
  Mat clean;
};

class DaeModel {
 public:
  DaeModel(std::size_t width, DaeConfig cfg, Rng& rng) : cfg_(cfg), width_(width) {
    cfg_.validate();
    if (width == 0) throw ConfigError("dae: embedding width must be >= 1");
    const std::size_t enc[] = {width, cfg_.hidden, cfg_.latent};
    const std::size_t dec[] = {cfg_.latent, cfg_.hidden, width};
    encoder_ = make_mlp(enc, Activation::kTanh, Activation::kTanh, rng);
    decoder_ = make_mlp(dec, Activation::kTanh, Activation::kLinear, rng);
  }

  DaeModel(DenseNet encoder, DenseNet decoder, DaeConfig cfg, std::size_t trained_rounds)
      : cfg_(cfg),
        width_(encoder.input_width()),
        encoder_(std::move(encoder)),
        decoder_(std::move(decoder)),
        trained_rounds_(trained_rounds) {
    encoder_.check();
    decoder_.check();
    if (decoder_.output_width() != width_ || decoder_.input_width() != encoder_.output_width()) {
      throw DimensionError("dae: encoder/decoder widths do not line up");
    }
  }

  std::size_t width() const { return width_; }
  std::size_t trained_rounds() const { return trained_rounds_; }
  bool frozen() const { return trained_rounds_ >= cfg_.training_rounds; }
  const DenseNet& encoder() const { return encoder_; }
  const DenseNet& decoder() const { return decoder_; }
  const DaeConfig& config() const { return cfg_; }

  // One pass over the pair in row minibatches; returns the mean
  // pre-step reconstruction loss over the pass.
  double train_round(const DaePair& pair) {
    if (frozen()) throw StateError("dae_train_round: DAE is frozen");
    if (!pair.noisy.same_shape(pair.clean)) {
      throw DimensionError("dae_train_round: noisy " + shape_str(pair.noisy) + " vs clean " +
                           shape_str(pair.clean));
    }
    check_width(pair.noisy);
    const std::size_t n = pair.noisy.rows();
    double total = 0.0;
    std::size_t steps = 0;
    for (std::size_t begin = 0; begin < n; begin += cfg_.batch_size) {
      const std::size_t count = std::min(cfg_.batch_size, n - begin);
      total += train_step(row_block(pair.noisy, begin, count), row_block(pair.clean, begin, count));
      ++steps;
    }
    ++trained_rounds_;
    return steps ? total / static_cast<double>(steps) : 0.0;
  }

  Mat denoise(const Mat& noisy) const {
    check_width(noisy);
    return predict(decoder_, predict(encoder_, noisy));
  }

  void save(const std::filesystem::path& path) const { save_nets(path, {&encoder_, &decoder_}); }

  static DaeModel load(const std::filesystem::path& path, DaeConfig cfg) {
    auto nets = load_nets(path);
    if (nets.size() != 2) throw IoError(path.string() + ": expected encoder and decoder");
    // A loaded DAE is treated as fully trained.
    return DaeModel(std::move(nets[0]), std::move(nets[1]), cfg, cfg.training_rounds);
  }

 private:
  void check_width(const Mat& m) const {
    if (m.cols() != width_) {
      throw DimensionError("dae: input " + shape_str(m) + " vs embedding width " +
                           std::to_string(width_));
    }
  }

  double train_step(const Mat& noisy, const Mat& clean) {
    ForwardTrace enc = mlp_forward(encoder_, noisy);
    ForwardTrace dec = mlp_forward(decoder_, enc.output());
    LossResult loss = mse_loss(dec.output(), clean);
    BackwardResult dec_back = mlp_backward(decoder_, dec, loss.grad);
    BackwardResult enc_back = mlp_backward(encoder_, enc, dec_back.input_grad);
    adam_step(decoder_, dec_back.grads, decoder_state_, cfg_.lr);
    adam_step(encoder_, enc_back.grads, encoder_state_, cfg_.lr);
    return loss.loss;
  }

  DaeConfig cfg_;
  std::size_t width_ = 0;
  DenseNet encoder_;
  DenseNet decoder_;
  AdamState encoder_state_;
  AdamState decoder_state_;
  std::size_t trained_rounds_ = 0;
};

inline double dae_train_round(DaeModel& dae, const DaePair& pair) { return dae.train_round(pair); }

inline Mat denoise(const DaeModel& dae, const Mat& noisy) { return dae.denoise(noisy); }

}  // namespace daovfl

#endif  // DAOVFL_DENOISER_HPP_
