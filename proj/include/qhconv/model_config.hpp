#pragma once

#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "qhconv/kernel_shapes.hpp"

namespace qhconv {

/// Stride 1, zero padding of mask.radius() on each side.
struct MaskedConvSpec {
  int in_ch = 0;
  int out_ch = 0;
  KernelMask mask;
};

struct Conv1x1Spec {
  int in_ch = 0;
  int out_ch = 0;
};

struct ReLUSpec {};

/// Windows start every `stride` pixels; the last window is clipped at the
/// border, giving ceil((H - k) / stride) + 1 outputs.
struct MaxPoolSpec {
  int k = 3;
  int stride = 2;
};

/// Inverted dropout: kept units are scaled by 1 / (1 - rate) in training.
struct DropoutSpec {
  double rate = 0.5;
};

struct GlobalAvgPoolSpec {};

/// Parameter-free head: flattens (N, classes, 1, 1) into (N, classes) scores.
struct SoftmaxClassifierSpec {
  int classes = 0;
};

using LayerSpec =
    std::variant<MaskedConvSpec, Conv1x1Spec, ReLUSpec, MaxPoolSpec,
                 DropoutSpec, GlobalAvgPoolSpec, SoftmaxClassifierSpec>;

std::string layer_to_text(const LayerSpec& spec);
LayerSpec parse_layer(const std::string& text);

struct ModelConfig {
  std::string name;
  std::vector<LayerSpec> layers;
  std::uint64_t pattern_seed = 0;
  int input_channels = 3;
  int input_height = 32;
  int input_width = 32;

  /// Canonical line-oriented form; `digest()` hashes exactly this text.
  std::string to_text() const;
  std::uint64_t digest() const;
  static ModelConfig parse(const std::string& text);

  int num_classes() const;
  /// Throws std::invalid_argument when channel counts do not chain.
  void validate() const;
};

/// Presets mirroring the CIFAR configurations: BASE-A, QH-A, QH-B, BASE-REF,
/// QH-EXT, UB-A, DIA-A. A "-mini" suffix selects the desk-scale variant whose
/// widths are divided by `scale` (default 4 when the suffix is present).
struct PresetOptions {
  int classes = 10;
  int scale = 0;  // 0 = 1 for full presets, 4 for "-mini"
  std::uint64_t pattern_seed = 1;
  bool extra_dropout = false;  // dropout before global average pooling
};

ModelConfig make_preset(const std::string& name, const PresetOptions& opts = {});
std::vector<std::string> preset_names();

}  // namespace qhconv
