#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "qhconv/model_config.hpp"
#include "qhconv/tensor.hpp"

namespace qhconv {

enum class Mode { Train, Eval };

/// Per-layer state recorded by a forward pass and consumed by backward.
struct LayerCache {
  std::vector<std::uint32_t> argmax;  // max pool: flat input index per output
  std::vector<std::uint8_t> keep;     // dropout: 1 = kept
};

/// Activations of one forward pass: activations[0] is the input,
/// activations[i + 1] the output of layer i.
template <class Real>
struct Trace {
  std::size_t first_layer = 0;
  std::vector<Tensor<Real>> activations;
  std::vector<LayerCache> caches;

  const Tensor<Real>& output_of(std::size_t layer) const {
    return activations.at(layer + 1 - first_layer);
  }
};

/// Parameter gradients laid out like Model::params().
template <class Real>
using Gradients = std::vector<Tensor<Real>>;

template <class Real>
class Layer {
 public:
  virtual ~Layer() = default;

  virtual Shape output_shape(const Shape& in) const = 0;
  virtual void forward(const Tensor<Real>& in, Tensor<Real>& out,
                       LayerCache& cache, Mode mode,
                       std::uint64_t dropout_seed) const = 0;
  /// Writes the input gradient to grad_in; accumulates into param_grads when
  /// it is non-empty.
  virtual void backward(const Tensor<Real>& in, const Tensor<Real>& out,
                        const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                        const LayerCache& cache,
                        std::span<Tensor<Real>> param_grads) const = 0;

  virtual std::span<Tensor<Real>> params() { return {}; }
  virtual std::span<const Tensor<Real>> params() const { return {}; }

  /// Multiply-accumulates for one item with input shape (1, C, H, W).
  virtual std::uint64_t macs(const Shape& in) const {
    (void)in;
    return 0;
  }
};

template <class Real>
class Model {
 public:
  /// Builds layers with all parameters zero; call init_weights() to draw them.
  explicit Model(ModelConfig config);
  Model(const Model& other);
  Model& operator=(const Model& other);
  Model(Model&&) noexcept = default;
  Model& operator=(Model&&) noexcept = default;
  ~Model();

  const ModelConfig& config() const { return config_; }
  std::size_t num_layers() const { return layers_.size(); }
  const Layer<Real>& layer(std::size_t i) const { return *layers_.at(i); }
  const LayerSpec& spec(std::size_t i) const { return config_.layers.at(i); }

  /// He initialization over the active fan-in; biases zero.
  void init_weights(std::uint64_t seed);

  /// All parameter tensors, in layer order (weight then bias).
  std::vector<Tensor<Real>*> params();
  std::vector<const Tensor<Real>*> params() const;
  std::vector<std::string> param_names() const;
  Gradients<Real> zero_gradients() const;

  /// Input shape (1, C, H, W) from the config.
  Shape input_shape(std::size_t batch = 1) const;
  /// Output shape of layer `i` for a batch of the configured input size.
  Shape output_shape(std::size_t i, std::size_t batch = 1) const;

  /// Pre-softmax scores (N, classes). Throws EngineFault on non-finite values.
  Tensor<Real> forward(const Tensor<Real>& batch, Trace<Real>& trace,
                       Mode mode, std::uint64_t dropout_seed = 0) const;
  Tensor<Real> forward(const Tensor<Real>& batch, Mode mode = Mode::Eval) const;

  /// Runs layers [first, last) on x, which must have the shape of the input
  /// to layer `first`.
  Tensor<Real> forward_range(const Tensor<Real>& x, std::size_t first,
                             std::size_t last, Trace<Real>& trace, Mode mode,
                             std::uint64_t dropout_seed = 0) const;

  /// Back-propagates grad_scores through the whole traced pass; returns the
  /// input gradient and accumulates parameter gradients when grads != null.
  Tensor<Real> backward(const Trace<Real>& trace, const Tensor<Real>& grad_scores,
                        Gradients<Real>* grads) const;

  /// Back-propagates a gradient given at the output of layer last-1 down to
  /// the input of layer `first`, using the gates recorded in `trace`.
  Tensor<Real> backward_range(const Trace<Real>& trace, const Tensor<Real>& grad,
                              std::size_t first, std::size_t last,
                              Gradients<Real>* grads) const;

  std::uint64_t count_params() const;
  std::uint64_t count_macs(const Shape& input_chw) const;

 private:
  std::size_t param_offset(std::size_t layer) const;

  ModelConfig config_;
  std::vector<std::unique_ptr<Layer<Real>>> layers_;
};

/// Softmax cross-entropy averaged over the batch.
template <class Real>
struct LossResult {
  double loss = 0.0;
  Tensor<Real> grad;  // d loss / d scores
};

template <class Real>
LossResult<Real> softmax_cross_entropy(const Tensor<Real>& scores,
                                       std::span<const int> labels);

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& scores);

/// Convenience wrapper mirroring the (model, config) vocabulary.
template <class Real>
Model<Real> build_model(const ModelConfig& config, std::uint64_t init_seed) {
  Model<Real> m(config);
  m.init_weights(init_seed);
  return m;
}

extern template class Model<float>;
extern template class Model<double>;

}  // namespace qhconv
