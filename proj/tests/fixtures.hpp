#pragma once

#include <random>

#include "qhconv/dataset.hpp"
#include "qhconv/model_config.hpp"

namespace fixtures {

using namespace qhconv;

// Two-class toy set: class 0 is brighter in the top half, class 1 in the
// bottom half, plus noise.
inline Dataset toy_two_class(std::size_t n, std::uint64_t seed, std::size_t side = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> noise(0.0f, 0.3f);
  Dataset d;
  d.class_count = 2;
  d.split = "toy";
  d.images = Tensor<float>({n, 3, side, side});
  for (std::size_t i = 0; i < n; ++i) {
    const int y = static_cast<int>(i % 2);
    d.labels.push_back(y);
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t r = 0; r < side; ++r)
        for (std::size_t x = 0; x < side; ++x) {
          const bool top = r < side / 2;
          d.images.at(i, c, r, x) = ((top == (y == 0)) ? 1.0f : -1.0f) + noise(rng);
        }
  }
  return d;
}

inline ModelConfig toy_model(int classes = 2, std::size_t side = 8) {
  ModelConfig m;
  m.name = "toy";
  m.input_height = m.input_width = static_cast<int>(side);
  m.layers = {MaskedConvSpec{3, 8, make_mask(ShapeKind::QH, Pattern::U, 3)},
              ReLUSpec{},
              MaxPoolSpec{3, 2},
              DropoutSpec{0.2},
              MaskedConvSpec{8, 8, make_mask(ShapeKind::QH, Pattern::D, 3)},
              ReLUSpec{},
              Conv1x1Spec{8, classes},
              GlobalAvgPoolSpec{},
              SoftmaxClassifierSpec{classes}};
  m.validate();
  return m;
}

}  // namespace fixtures
