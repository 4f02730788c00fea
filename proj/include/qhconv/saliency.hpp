#pragma once

#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qhconv/model.hpp"

namespace qhconv {

/// Unit (channel, row, col) in the output of layer `layer`.
struct UnitRef {
  std::size_t layer = 0;
  std::size_t channel = 0;
  std::size_t row = 0;
  std::size_t col = 0;

  auto operator<=>(const UnitRef&) const = default;
};

/// Class score of every unit of one layer when that unit alone is fed to the
/// rest of the network.
struct ScoreMap {
  std::size_t layer = 0;
  int cls = 0;
  std::size_t channels = 0, height = 0, width = 0;
  std::vector<double> scores;  // (channels, height, width)

  double at(std::size_t c, std::size_t h, std::size_t w) const {
    return scores[(c * height + h) * width + w];
  }
};

/// Per-pixel map over the input plane, row-major.
struct PixelMap {
  std::size_t height = 0, width = 0;
  std::vector<double> values;

  double at(std::size_t y, std::size_t x) const { return values[y * width + x]; }
  double max() const;
};

struct SaliencyMap {
  int cls = 0;
  std::size_t layer = 0;
  PixelMap map;
  std::vector<UnitRef> units;
  std::vector<double> unit_scores;
  std::size_t omega = 0;
};

struct Roi {
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> mask;

  bool contains(std::size_t y, std::size_t x) const { return mask[y * width + x] != 0; }
  std::size_t count() const;
  bool empty() const { return count() == 0; }
};

/// Index of the last max-pool layer. Throws if the model has none.
template <class Real>
std::size_t last_maxpool_layer(const Model<Real>& model);

/// Scores S(u) for every unit of layer `layer` on a single image (1, C, H, W).
/// Each unit is isolated by zeroing all other units of that layer; the tail
/// runs in eval mode and returns pre-softmax scores.
template <class Real>
ScoreMap unit_scores(const Model<Real>& model, const Tensor<Real>& image,
                     std::size_t layer, int cls, int threads = 1);

/// The n highest-scoring units, ties broken by (channel, row, col).
std::vector<UnitRef> select_top_units(const ScoreMap& scores, std::size_t n);

/// d S(u) / d image summed over colour channels. The trace must hold a full
/// eval-mode forward pass of the image; its gates route the gradient through
/// the layers below the unit.
template <class Real>
PixelMap backprop_unit(const Model<Real>& model, const Trace<Real>& trace,
                       const UnitRef& unit, int cls);

/// Sum of |backprop_unit| over the top `omega` units.
template <class Real>
SaliencyMap saliency_map(const Model<Real>& model, const Tensor<Real>& image, int cls,
                         std::size_t layer, std::size_t omega, int threads = 1);

/// Same, reusing scores already computed for this image and class.
template <class Real>
SaliencyMap saliency_map(const Model<Real>& model, const Tensor<Real>& image,
                         const ScoreMap& scores, std::size_t omega);

/// Input pixels that can reach the unit, by structural support propagation.
template <class Real>
Roi unit_footprint(const Model<Real>& model, const UnitRef& unit);

/// Pixels above tau * max, clipped to the union of the units' footprints.
template <class Real>
Roi roi(const Model<Real>& model, const SaliencyMap& map, double tau = 0.0);

/// CIFAR-10 names; out-of-range ids become "class<k>".
std::string class_name(int id, int class_count = 10);

struct RankedClass {
  int id = 0;
  double score = 0.0;
};
std::vector<RankedClass> top_classes(std::span<const float> scores, std::size_t k = 5);

/// Overlays the map in red on an RGB image in [0, 1] (3, H, W), draws the ROI
/// border in yellow and writes a "<stem>.top5.tsv" sidecar next to `path`.
void render(const Tensor<float>& image_chw, const SaliencyMap& map, const Roi& roi,
            const std::vector<RankedClass>& top, const std::filesystem::path& path,
            int class_count = 10);

}  // namespace qhconv
