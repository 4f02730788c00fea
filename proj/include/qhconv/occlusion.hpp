#pragma once

#include <array>
#include <compare>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "qhconv/dataset.hpp"
#include "qhconv/saliency.hpp"

namespace qhconv {

enum class Fill { Black, Motley };

std::string fill_name(Fill f);  // "Bla." / "Mot."
Fill parse_fill(const std::string& s);

struct OcclusionSpec {
  std::string generator = "model";
  int top_k = 5;
  double fraction = 0.05;
  int radius = 5;
  Fill fill = Fill::Black;
  std::uint64_t seed = 1;

  void validate() const;
  /// e.g. "QH-A-mini/Top5/Bla./5%"
  std::string label() const;
  std::uint64_t digest() const;
};

struct Pixel {
  int y = 0;
  int x = 0;
  auto operator<=>(const Pixel&) const = default;
};

struct Occluder {
  Pixel center;
  std::array<std::uint8_t, 3> color{0, 0, 0};
};

struct OccludedImage {
  std::size_t index = 0;  // into the base dataset
  std::vector<Occluder> occluders;
};

/// Occluded copies of a subset of a raw (un-normalized, [0, 1]) dataset.
struct OccludedSet {
  OcclusionSpec spec;
  std::vector<OccludedImage> items;
  Dataset images;  // item i is base image items[i].index with occluders drawn

  std::string manifest() const;
  /// Writes "<stem>.qhc" (dataset container) and "<stem>.manifest.tsv".
  void save(const std::filesystem::path& dir, const std::string& stem) const;
};

/// The top ceil(fraction * |roi|) ROI pixels by saliency (ties in (y, x)
/// order), then greedily thinned so kept centers satisfy dy^2 + dx^2 >= r^2.
std::vector<Pixel> select_occlusion_pixels(const PixelMap& map, const Roi& roi,
                                           double fraction, int radius);

/// Up to `count` centers drawn uniformly from pixels outside the ROI, thinned
/// with the same spacing rule. Falls back to all pixels outside `avoid` discs
/// when the ROI leaves too few candidates.
std::vector<Pixel> random_control_pixels(const Roi& roi, std::size_t count, int radius,
                                         std::uint64_t seed,
                                         const std::vector<Pixel>& avoid = {});

std::vector<Occluder> make_occluders(const std::vector<Pixel>& centers,
                                     const OcclusionSpec& spec, std::size_t image_index);

/// Sets every pixel with dx^2 + dy^2 <= r^2 around each center to the
/// occluder colour. The image is (C, H, W) or (1, C, H, W) in [0, 1].
void apply_occluders(std::span<float> image, std::size_t height, std::size_t width,
                     const std::vector<Occluder>& occluders, int radius);

struct NamedModel {
  std::string name;
  const Model<float>* model = nullptr;
};

struct OcclusionGrid {
  std::vector<int> top_k{1, 5};
  std::vector<Fill> fills{Fill::Black, Fill::Motley};
  std::vector<double> fractions{0.01, 0.05, 0.10};
  int radius = 5;
  std::uint64_t seed = 1;
};

/// Indices of images every model classifies correctly.
std::vector<std::size_t> correctly_classified(const std::vector<NamedModel>& models,
                                              const Dataset& preprocessed, int threads = 1);

/// One OccludedSet per (top_k, fraction, fill) cell. Saliency comes from the
/// generator at its last max-pool layer, for the true class. `raw` holds the
/// unnormalized images; `prep` maps them to model inputs.
std::vector<OccludedSet> generate_occlusion_set(const Dataset& raw,
                                                const Preprocessing& prep,
                                                const NamedModel& generator,
                                                const std::vector<NamedModel>& models,
                                                const OcclusionGrid& grid,
                                                std::size_t max_images = 0,
                                                int threads = 1);

struct RobustnessTable {
  std::vector<std::string> models;
  std::vector<std::string> sets;
  std::vector<std::vector<double>> accuracy;  // [model][set]

  double average(std::size_t model) const;
  std::string to_tsv() const;
};

RobustnessTable evaluate_robustness(const std::vector<NamedModel>& models,
                                    const Preprocessing& prep,
                                    const std::vector<OccludedSet>& sets, int threads = 1);

/// Paired comparison of targeted ROI occlusion against random non-ROI
/// occlusion with the same number of discs.
struct ControlTrial {
  std::size_t index = 0;
  double p_clean = 0.0;
  double p_targeted = 0.0;
  double p_random = 0.0;
  std::size_t discs = 0;
  bool fallback = false;  // control centers were not all outside the ROI
};

struct ControlReport {
  std::vector<ControlTrial> trials;
  double targeted_wins() const;  // fraction with p_targeted < p_random
  std::string to_tsv() const;
};

ControlReport compare_with_random_control(const Model<float>& model,
                                          const Preprocessing& prep, const Dataset& raw,
                                          const OcclusionSpec& spec, std::size_t n_images,
                                          int threads = 1);

}  // namespace qhconv
