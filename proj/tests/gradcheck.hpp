#pragma once

// Finite-difference checks of Model<double> layers and whole networks.

#include <random>
#include <string>
#include <vector>

#include "oracles.hpp"
#include "qhconv/model.hpp"

namespace gradcheck {

using namespace qhconv;

// Small configs that contain each layer type in turn, followed by whatever
// is needed to make a valid model.
inline std::vector<std::pair<std::string, ModelConfig>> layer_fixtures() {
  auto cfg = [](std::string name, std::vector<LayerSpec> layers, int c, int h, int w) {
    ModelConfig m;
    m.name = std::move(name);
    m.layers = std::move(layers);
    m.input_channels = c;
    m.input_height = h;
    m.input_width = w;
    m.validate();
    return m;
  };
  const auto qh = make_mask(ShapeKind::QH, Pattern::R, 3);
  const auto sq = make_mask(ShapeKind::Square, std::nullopt, 3);
  return {
      {"masked_conv_qh", cfg("c", {MaskedConvSpec{2, 3, qh}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{3}}, 2, 5, 4)},
      {"masked_conv_square", cfg("c", {MaskedConvSpec{2, 3, sq}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{3}}, 2, 4, 5)},
      {"conv1x1", cfg("c", {Conv1x1Spec{3, 2}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{2}}, 3, 4, 4)},
      {"relu", cfg("c", {ReLUSpec{}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{2}}, 2, 4, 4)},
      {"maxpool", cfg("c", {MaxPoolSpec{3, 2}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{2}}, 2, 7, 6)},
      {"dropout", cfg("c", {DropoutSpec{0.5}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{2}}, 2, 4, 4)},
      {"global_avg_pool", cfg("c", {GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{2}}, 2, 3, 5)},
      {"softmax_classifier", cfg("c", {GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{3}}, 3, 2, 2)},
  };
}

inline ModelConfig three_layer_config() {
  ModelConfig m;
  m.name = "three-layer";
  m.input_channels = 3;
  m.input_height = 6;
  m.input_width = 6;
  m.layers = {DropoutSpec{0.2},
              MaskedConvSpec{3, 4, make_mask(ShapeKind::QH, Pattern::U, 3)},
              ReLUSpec{},
              MaxPoolSpec{3, 2},
              MaskedConvSpec{4, 4, make_mask(ShapeKind::QH, Pattern::L, 3)},
              ReLUSpec{},
              Conv1x1Spec{4, 3},
              GlobalAvgPoolSpec{},
              SoftmaxClassifierSpec{3}};
  m.validate();
  return m;
}

struct Result {
  double input_error = 0.0;
  double param_error = 0.0;
  double worst() const { return std::max(input_error, param_error); }
};

inline void randomize(Model<double>& m, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  for (auto* p : m.params())
    for (auto& v : p->storage()) v = u(rng);
}

// Loss r . layer_i(x) for a random r; compares analytic input and parameter
// gradients of layer i against central differences.
inline Result check_layer(Model<double>& model, std::size_t layer, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  randomize(model, rng);
  Shape in = layer == 0 ? model.input_shape(2) : model.output_shape(layer - 1, 2);
  auto x = oracle::random_tensor(in, rng);
  const auto r = oracle::random_tensor(model.output_shape(layer, 2), rng);
  const std::uint64_t drop = rng();

  auto loss = [&] {
    Trace<double> t;
    const auto y = model.forward_range(x, layer, layer + 1, t, Mode::Train, drop);
    double s = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) s += r[i] * y[i];
    return s;
  };

  Trace<double> t;
  model.forward_range(x, layer, layer + 1, t, Mode::Train, drop);
  auto grads = model.zero_gradients();
  const auto gx = model.backward_range(t, r, layer, layer + 1, &grads);

  Result res;
  res.input_error = oracle::rel_error(gx.storage(), oracle::numeric_grad(x, loss));
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    res.param_error = std::max(
        res.param_error, oracle::rel_error(grads[i].storage(), oracle::numeric_grad(*params[i], loss)));
  return res;
}

// Softmax cross-entropy of the whole network, train mode with fixed dropout.
inline Result check_end_to_end(Model<double>& model, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  randomize(model, rng);
  auto x = oracle::random_tensor(model.input_shape(3), rng);
  const int classes = model.config().num_classes();
  std::vector<int> labels{0, 1 % classes, 2 % classes};
  const std::uint64_t drop = rng();

  auto loss = [&] {
    Trace<double> t;
    return softmax_cross_entropy(model.forward(x, t, Mode::Train, drop), labels).loss;
  };
  Trace<double> t;
  const auto scores = model.forward(x, t, Mode::Train, drop);
  auto grads = model.zero_gradients();
  const auto gx = model.backward(t, softmax_cross_entropy(scores, labels).grad, &grads);

  Result res;
  res.input_error = oracle::rel_error(gx.storage(), oracle::numeric_grad(x, loss));
  auto params = model.params();
  for (std::size_t i = 0; i < params.size(); ++i)
    res.param_error = std::max(
        res.param_error, oracle::rel_error(grads[i].storage(), oracle::numeric_grad(*params[i], loss)));
  return res;
}

}  // namespace gradcheck
