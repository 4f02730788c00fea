#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "qhconv/dataset.hpp"
#include "qhconv/model.hpp"

namespace qhconv {

struct HyperParams {
  double lr = 5e-2;
  double lr_factor = 0.1;
  std::vector<int> lr_drops;  // 0-based epochs at which lr is multiplied
  double momentum = 0.9;
  double weight_decay = 1e-3;
  double weight_decay_final = 1e-4;
  int decay_start = -1;  // first epoch of the linear decay; -1 = no decay
  int warmup_epochs = 0;  // lr ramps linearly per batch over these epochs
  std::size_t batch_size = 128;
  int epochs = 20;

  /// Full-length schedule (drops at 120/170/220 of 270, decay over the last
  /// third) rescaled to `epochs`, with one warmup epoch.
  static HyperParams scaled(int epochs);

  double lr_at(int epoch) const;
  /// lr_at(epoch), scaled down during warmup.
  double lr_at(int epoch, std::size_t batch, std::size_t batches_per_epoch) const;
  /// Constant until decay_start, then linear down to weight_decay_final at
  /// the last epoch.
  double wd_at(int epoch) const;

  void validate() const;
  std::string to_text() const;
  static HyperParams parse(const std::string& text);
};

/// Momentum buffers, one per parameter tensor.
struct SgdState {
  std::vector<Tensor<float>> velocity;

  static SgdState zeros_like(const Model<float>& model);
};

/// v <- m v - lr (g + wd w); w <- w + v
void sgd_step(std::vector<Tensor<float>*> params, const Gradients<float>& grads,
              SgdState& state, double lr, double wd, double momentum);

struct EpochMetrics {
  int epoch = 0;  // 1-based
  double lr = 0.0;
  double wd = 0.0;
  double train_loss = 0.0;
  double test_error = 0.0;  // NaN when no test split was given
};

std::string metrics_header();
std::string format_metrics(const EpochMetrics& m);

struct TrainSeeds {
  std::uint64_t init = 1;
  std::uint64_t shuffle = 2;
  std::uint64_t dropout = 3;
};

struct TrainState {
  Model<float> model;
  SgdState sgd;
  int epoch = 0;  // completed epochs
  std::vector<EpochMetrics> log;
};

struct TrainOptions {
  int threads = 1;
  int stop_after = -1;  // stop once this many epochs are complete
  std::size_t eval_batch = 500;
  /// Called after every epoch; may write checkpoints.
  std::function<void(const TrainState&)> on_epoch;
};

/// Trains from scratch, or continues `resume` when given. Every random draw
/// is a function of the seeds and the epoch, so a resumed run reproduces an
/// uninterrupted one.
TrainState train(const ModelConfig& config, const Dataset& train_set,
                 const Dataset* test_set, const HyperParams& hyper,
                 const TrainSeeds& seeds, const TrainOptions& opts = {},
                 const TrainState* resume = nullptr);

/// Pre-softmax scores for every image, in eval mode.
Tensor<float> predict_scores(const Model<float>& model, const Tensor<float>& images,
                             std::size_t batch = 500, int threads = 1);
std::vector<int> predict_labels(const Model<float>& model, const Tensor<float>& images,
                                std::size_t batch = 500, int threads = 1);
double error_rate(const Model<float>& model, const Dataset& data,
                  std::size_t batch = 500, int threads = 1);

}  // namespace qhconv
