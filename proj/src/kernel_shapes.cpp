#include "qhconv/kernel_shapes.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

namespace qhconv {

namespace {

void check_size(int size) {
  if (size < 3 || size % 2 == 0)
    throw std::invalid_argument("kernel size must be odd and >= 3, got " +
                                std::to_string(size));
}

std::vector<Offset> full_square(int size) {
  const int r = (size - 1) / 2;
  std::vector<Offset> cells;
  for (int dy = -r; dy <= r; ++dy)
    for (int dx = -r; dx <= r; ++dx) cells.push_back({dy, dx});
  return cells;
}

std::vector<Offset> without(std::vector<Offset> cells,
                            std::initializer_list<Offset> removed) {
  std::erase_if(cells, [&](Offset o) {
    return std::find(removed.begin(), removed.end(), o) != removed.end();
  });
  return cells;
}

// (dy, dx) -> (dx, -dy) maps up to right, i.e. clockwise on screen.
Offset rotate_cw(Offset o) { return {o.dx, -o.dy}; }

std::vector<Offset> rotate_times(std::vector<Offset> cells, int times) {
  for (int t = 0; t < times; ++t)
    for (auto& c : cells) c = rotate_cw(c);
  return cells;
}

int pattern_index(Pattern p) { return static_cast<int>(p); }

}  // namespace

KernelMask::KernelMask(int size, std::vector<Offset> cells, ShapeKind kind,
                       std::optional<Pattern> pattern,
                       std::optional<std::uint64_t> seed)
    : size_(size),
      cells_(std::move(cells)),
      kind_(kind),
      pattern_(pattern),
      seed_(seed) {
  if (size_ < 1 || size_ % 2 == 0)
    throw std::invalid_argument("kernel size must be odd");
  std::sort(cells_.begin(), cells_.end());
  cells_.erase(std::unique(cells_.begin(), cells_.end()), cells_.end());
  const int r = radius();
  for (const auto& c : cells_)
    if (c.dy < -r || c.dy > r || c.dx < -r || c.dx > r)
      throw std::invalid_argument("mask cell outside kernel window");
  if (!contains({0, 0}))
    throw std::invalid_argument("mask center must be active");
}

bool KernelMask::contains(Offset o) const {
  return std::binary_search(cells_.begin(), cells_.end(), o);
}

std::vector<int> KernelMask::flat_indices() const {
  std::vector<int> idx;
  idx.reserve(cells_.size());
  const int r = radius();
  for (const auto& c : cells_) idx.push_back((c.dy + r) * size_ + (c.dx + r));
  return idx;
}

std::string KernelMask::to_art() const {
  std::string s;
  const int r = radius();
  for (int dy = -r; dy <= r; ++dy) {
    for (int dx = -r; dx <= r; ++dx) s += contains({dy, dx}) ? '#' : '.';
    s += '\n';
  }
  return s;
}

KernelMask make_mask(ShapeKind kind, std::optional<Pattern> pattern, int size,
                     std::optional<std::uint64_t> seed) {
  check_size(size);
  const bool oriented =
      kind == ShapeKind::QH || kind == ShapeKind::UB || kind == ShapeKind::DIA;
  if (oriented && !pattern)
    throw std::invalid_argument(shape_kind_name(kind) + " mask needs a pattern");
  if (!oriented && pattern)
    throw std::invalid_argument(shape_kind_name(kind) +
                                " mask takes no pattern");
  if (kind == ShapeKind::FK && !seed)
    throw std::invalid_argument("FK mask needs a seed");
  if (kind != ShapeKind::FK && seed)
    throw std::invalid_argument(shape_kind_name(kind) + " mask takes no seed");
  if (oriented && size != 3)
    throw std::invalid_argument(shape_kind_name(kind) +
                                " masks are only defined for size 3");

  switch (kind) {
    case ShapeKind::Square:
      return KernelMask(size, full_square(size), kind);
    case ShapeKind::QH: {
      // U keeps the whole top row and drops the two bottom corners.
      auto u = without(full_square(3), {{1, -1}, {1, 1}});
      return KernelMask(3, rotate_times(u, pattern_index(*pattern)), kind,
                        pattern);
    }
    case ShapeKind::UB: {
      // U drops the bottom-left corner and the bottom edge cell next to it.
      auto u = without(full_square(3), {{1, -1}, {1, 0}});
      return KernelMask(3, rotate_times(u, pattern_index(*pattern)), kind,
                        pattern);
    }
    case ShapeKind::DIA: {
      // U drops the bottom-left and top-right corners; D equals U.
      auto u = without(full_square(3), {{1, -1}, {-1, 1}});
      return KernelMask(3, rotate_times(u, pattern_index(*pattern)), kind,
                        pattern);
    }
    case ShapeKind::FK: {
      auto cells = full_square(size);
      std::vector<Offset> candidates;
      for (const auto& c : cells)
        if (c != Offset{0, 0}) candidates.push_back(c);
      // Partial Fisher-Yates: the first two candidates are removed.
      std::mt19937_64 rng(*seed);
      for (std::size_t i = 0; i < 2; ++i) {
        const std::size_t span = candidates.size() - i;
        const std::size_t j = i + static_cast<std::size_t>(rng() % span);
        std::swap(candidates[i], candidates[j]);
      }
      std::erase_if(cells, [&](Offset o) {
        return o == candidates[0] || o == candidates[1];
      });
      return KernelMask(size, std::move(cells), kind, std::nullopt, seed);
    }
  }
  throw std::invalid_argument("unknown shape kind");
}

KernelMask rot90(const KernelMask& mask) {
  std::optional<Pattern> p = mask.pattern();
  if (p) p = static_cast<Pattern>((pattern_index(*p) + 1) % 4);
  return KernelMask(mask.size(), rotate_times(mask.cells(), 1), mask.kind(), p,
                    mask.seed());
}

std::size_t mask_weight_count(const KernelMask& mask) { return mask.count(); }

PatternSequence sample_pattern_sequence(int depth, std::uint64_t seed) {
  if (depth < 1) throw std::invalid_argument("depth must be >= 1");
  PatternSequence seq;
  seq.seed = seed;
  seq.patterns.reserve(static_cast<std::size_t>(depth));
  std::mt19937_64 rng(seed);
  for (int i = 0; i < depth; ++i)
    seq.patterns.push_back(static_cast<Pattern>(rng() >> 62));
  return seq;
}

std::size_t Footprint::count() const {
  return static_cast<std::size_t>(
      std::count(covered.begin(), covered.end(), std::uint8_t{1}));
}

std::string Footprint::to_art() const {
  std::string s;
  for (int r = 0; r < extent; ++r) {
    for (int c = 0; c < extent; ++c) s += at(r, c) ? '#' : '.';
    s += '\n';
  }
  return s;
}

Footprint compose_rf(const std::vector<KernelMask>& masks) {
  if (masks.empty()) throw std::invalid_argument("compose_rf: no masks");
  const int size = masks.front().size();
  for (const auto& m : masks)
    if (m.size() != size)
      throw std::invalid_argument("compose_rf: masks differ in size");

  const int half = static_cast<int>(masks.size()) * ((size - 1) / 2);
  Footprint fp;
  fp.extent = 2 * half + 1;
  fp.covered.assign(static_cast<std::size_t>(fp.extent) * fp.extent, 0);
  fp.covered[half * fp.extent + half] = 1;

  // Dilate the current set by each mask in turn. The grid is large enough
  // that no intermediate set is clipped.
  std::vector<std::uint8_t> next(fp.covered.size());
  for (const auto& m : masks) {
    std::fill(next.begin(), next.end(), 0);
    for (int r = 0; r < fp.extent; ++r)
      for (int c = 0; c < fp.extent; ++c) {
        if (!fp.covered[r * fp.extent + c]) continue;
        for (const auto& o : m.cells())
          next[(r + o.dy) * fp.extent + (c + o.dx)] = 1;
      }
    fp.covered.swap(next);
  }
  return fp;
}

char pattern_char(Pattern p) { return "URDL"[pattern_index(p)]; }

Pattern parse_pattern(char c) {
  switch (c) {
    case 'U': return Pattern::U;
    case 'R': return Pattern::R;
    case 'D': return Pattern::D;
    case 'L': return Pattern::L;
    default:
      throw std::invalid_argument(std::string("unknown pattern '") + c + "'");
  }
}

std::string shape_kind_name(ShapeKind k) {
  switch (k) {
    case ShapeKind::Square: return "SQUARE";
    case ShapeKind::QH: return "QH";
    case ShapeKind::FK: return "FK";
    case ShapeKind::UB: return "UB";
    case ShapeKind::DIA: return "DIA";
  }
  return "?";
}

ShapeKind parse_shape_kind(const std::string& name) {
  for (auto k : {ShapeKind::Square, ShapeKind::QH, ShapeKind::FK, ShapeKind::UB,
                 ShapeKind::DIA})
    if (shape_kind_name(k) == name) return k;
  throw std::invalid_argument("unknown shape kind '" + name + "'");
}

}  // namespace qhconv
