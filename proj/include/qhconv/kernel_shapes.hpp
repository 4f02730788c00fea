#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace qhconv {

enum class ShapeKind { Square, QH, FK, UB, DIA };

/// Orientation of a quasi-hexagonal (or UB/DIA) kernel.
enum class Pattern { U, R, D, L };

/// Offset of an active cell relative to the kernel center; dy grows downward.
struct Offset {
  int dy = 0;
  int dx = 0;

  friend bool operator==(const Offset&, const Offset&) = default;
  friend auto operator<=>(const Offset&, const Offset&) = default;
};

/// Binary K x K kernel support.
///
/// Cells are kept sorted row-major, so `flat_indices()` is also the order in
/// which a masked convolution packs its weights.
class KernelMask {
 public:
  KernelMask() = default;
  KernelMask(int size, std::vector<Offset> cells, ShapeKind kind,
             std::optional<Pattern> pattern = std::nullopt,
             std::optional<std::uint64_t> seed = std::nullopt);

  int size() const { return size_; }
  int radius() const { return (size_ - 1) / 2; }
  ShapeKind kind() const { return kind_; }
  std::optional<Pattern> pattern() const { return pattern_; }
  std::optional<std::uint64_t> seed() const { return seed_; }
  const std::vector<Offset>& cells() const { return cells_; }
  std::size_t count() const { return cells_.size(); }

  bool contains(Offset o) const;
  /// Row-major indices of the active cells in a size x size weight block.
  std::vector<int> flat_indices() const;

  /// One line per row, '#' active and '.' inactive.
  std::string to_art() const;

  friend bool operator==(const KernelMask& a, const KernelMask& b) {
    return a.size_ == b.size_ && a.cells_ == b.cells_;
  }

 private:
  int size_ = 0;
  std::vector<Offset> cells_;
  ShapeKind kind_ = ShapeKind::Square;
  std::optional<Pattern> pattern_;
  std::optional<std::uint64_t> seed_;
};

KernelMask make_mask(ShapeKind kind, std::optional<Pattern> pattern, int size,
                     std::optional<std::uint64_t> seed = std::nullopt);

/// Rotates a mask by 90 degrees clockwise. Kind and seed are kept; the
/// pattern tag advances U -> R -> D -> L -> U when present.
KernelMask rot90(const KernelMask& mask);

std::size_t mask_weight_count(const KernelMask& mask);

struct PatternSequence {
  std::vector<Pattern> patterns;
  std::uint64_t seed = 0;

  std::size_t depth() const { return patterns.size(); }
};

/// Draws `depth` orientations i.i.d. uniform over {U, R, D, L}.
///
/// Generator: std::mt19937_64 seeded with `seed`; each draw takes the top two
/// bits of one 64-bit output (0 = U, 1 = R, 2 = D, 3 = L).
PatternSequence sample_pattern_sequence(int depth, std::uint64_t seed);

/// Binary rendering of a composed receptive field, centered at the origin.
struct Footprint {
  int extent = 0;
  std::vector<std::uint8_t> covered;  // extent * extent, row-major

  bool at(int row, int col) const { return covered[row * extent + col] != 0; }
  std::size_t count() const;
  std::string to_art() const;

  friend bool operator==(const Footprint&, const Footprint&) = default;
};

/// Minkowski sum of the masks' cell sets rendered on a grid of side
/// depth * (size - 1) + 1 (2 * depth + 1 for 3x3-class masks).
Footprint compose_rf(const std::vector<KernelMask>& masks);

char pattern_char(Pattern p);
Pattern parse_pattern(char c);
std::string shape_kind_name(ShapeKind k);
ShapeKind parse_shape_kind(const std::string& name);

}  // namespace qhconv
