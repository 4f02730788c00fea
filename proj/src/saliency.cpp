#include "qhconv/saliency.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <variant>

#include "qhconv/errors.hpp"
#include "qhconv/image_io.hpp"
#include "qhconv/numeric.hpp"

namespace qhconv {

namespace {

constexpr std::size_t kUnitBatch = 256;

template <class Real>
void check_layer(const Model<Real>& model, std::size_t layer) {
  if (layer + 1 >= model.num_layers())
    throw std::out_of_range("layer " + std::to_string(layer) +
                            " has no tail to score (model has " +
                            std::to_string(model.num_layers()) + " layers)");
}

template <class Real>
void check_image(const Model<Real>& model, const Tensor<Real>& image) {
  if (image.shape() != model.input_shape(1))
    throw std::invalid_argument("expected a single image of shape " +
                                shape_to_string(model.input_shape(1)) + ", got " +
                                shape_to_string(image.shape()));
}

// Scores of a batch of isolated maps, one unit per item.
template <class Real>
Tensor<Real> tail_scores(const Model<Real>& model, const Tensor<Real>& isolated,
                         std::size_t layer) {
  Trace<Real> tail;
  return model.forward_range(isolated, layer + 1, model.num_layers(), tail, Mode::Eval);
}

}  // namespace

double PixelMap::max() const {
  return values.empty() ? 0.0 : *std::max_element(values.begin(), values.end());
}

std::size_t Roi::count() const {
  return static_cast<std::size_t>(std::count(mask.begin(), mask.end(), std::uint8_t{1}));
}

template <class Real>
std::size_t last_maxpool_layer(const Model<Real>& model) {
  for (std::size_t i = model.num_layers(); i-- > 0;)
    if (std::holds_alternative<MaxPoolSpec>(model.spec(i))) return i;
  throw std::invalid_argument("model " + model.config().name + " has no max-pool layer");
}

template <class Real>
ScoreMap unit_scores(const Model<Real>& model, const Tensor<Real>& image,
                     std::size_t layer, int cls, int threads) {
  check_layer(model, layer);
  check_image(model, image);
  if (cls < 0 || cls >= model.config().num_classes())
    throw std::out_of_range("class " + std::to_string(cls) + " out of range");

  Trace<Real> fore;
  model.forward_range(image, 0, layer + 1, fore, Mode::Eval);
  const Tensor<Real>& M = fore.activations.back();
  const std::size_t units = M.size();
  const std::size_t classes = static_cast<std::size_t>(model.config().num_classes());

  ScoreMap out;
  out.layer = layer;
  out.cls = cls;
  out.channels = M.dim(1);
  out.height = M.dim(2);
  out.width = M.dim(3);
  out.scores.assign(units, 0.0);

  // A zero unit isolates to the all-zero map, so those share one tail pass.
  const double zero_score = tail_scores(model, Tensor<Real>(M.shape()), layer)[cls];
  std::vector<std::size_t> live;
  for (std::size_t u = 0; u < units; ++u) {
    if (M[u] == Real{0})
      out.scores[u] = zero_score;
    else
      live.push_back(u);
  }

  const std::size_t chunks = (live.size() + kUnitBatch - 1) / kUnitBatch;
  parallel_for(chunks, threads, [&](std::size_t c) {
    const std::size_t lo = c * kUnitBatch, hi = std::min(live.size(), lo + kUnitBatch);
    Shape s = M.shape();
    s[0] = hi - lo;
    Tensor<Real> x(s);
    for (std::size_t k = lo; k < hi; ++k) x[(k - lo) * units + live[k]] = M[live[k]];
    const auto scores = tail_scores(model, x, layer);
    for (std::size_t k = lo; k < hi; ++k)
      out.scores[live[k]] = static_cast<double>(scores[(k - lo) * classes + cls]);
  });
  return out;
}

std::vector<UnitRef> select_top_units(const ScoreMap& scores, std::size_t n) {
  const std::size_t units = scores.scores.size();
  if (n < 1 || n > units)
    throw std::invalid_argument("cannot select " + std::to_string(n) + " of " +
                                std::to_string(units) + " units");
  std::vector<std::size_t> order(units);
  std::iota(order.begin(), order.end(), std::size_t{0});
  // Flat index order is (channel, row, col) order, so it doubles as the tie-break.
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n),
                    order.end(), [&](std::size_t a, std::size_t b) {
                      if (scores.scores[a] != scores.scores[b])
                        return scores.scores[a] > scores.scores[b];
                      return a < b;
                    });
  std::vector<UnitRef> top;
  const std::size_t plane = scores.height * scores.width;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t u = order[k];
    top.push_back({scores.layer, u / plane, (u % plane) / scores.width, u % scores.width});
  }
  return top;
}

template <class Real>
PixelMap backprop_unit(const Model<Real>& model, const Trace<Real>& trace,
                       const UnitRef& unit, int cls) {
  check_layer(model, unit.layer);
  if (trace.first_layer != 0 || trace.activations.size() < unit.layer + 2)
    throw std::logic_error("backprop_unit needs a forward trace from the input");
  const Tensor<Real>& M = trace.output_of(unit.layer);
  if (unit.channel >= M.dim(1) || unit.row >= M.dim(2) || unit.col >= M.dim(3))
    throw std::out_of_range("unit outside layer " + std::to_string(unit.layer));
  const std::size_t u = (unit.channel * M.dim(2) + unit.row) * M.dim(3) + unit.col;

  Tensor<Real> isolated(M.shape());
  isolated[u] = M[u];
  Trace<Real> tail;
  const auto scores =
      model.forward_range(isolated, unit.layer + 1, model.num_layers(), tail, Mode::Eval);
  Tensor<Real> seed(scores.shape());
  seed[static_cast<std::size_t>(cls)] = Real{1};
  const auto g_tail = model.backward_range(tail, seed, unit.layer + 1, model.num_layers(),
                                           nullptr);

  Tensor<Real> g_unit(M.shape());
  g_unit[u] = g_tail[u];
  const auto g_in = model.backward_range(trace, g_unit, 0, unit.layer + 1, nullptr);

  PixelMap map;
  map.height = g_in.dim(2);
  map.width = g_in.dim(3);
  map.values.assign(map.height * map.width, 0.0);
  for (std::size_t c = 0; c < g_in.dim(1); ++c)
    for (std::size_t p = 0; p < map.values.size(); ++p)
      map.values[p] += static_cast<double>(g_in[c * map.values.size() + p]);
  return map;
}

template <class Real>
SaliencyMap saliency_map(const Model<Real>& model, const Tensor<Real>& image, int cls,
                         std::size_t layer, std::size_t omega, int threads) {
  return saliency_map(model, image, unit_scores(model, image, layer, cls, threads), omega);
}

template <class Real>
SaliencyMap saliency_map(const Model<Real>& model, const Tensor<Real>& image,
                         const ScoreMap& scores, std::size_t omega) {
  if (omega < 1) throw std::invalid_argument("omega must be >= 1");
  const std::size_t layer = scores.layer;
  SaliencyMap out;
  out.cls = scores.cls;
  out.layer = layer;
  out.omega = omega;
  out.units = select_top_units(scores, omega);

  Trace<Real> trace;
  model.forward_range(image, 0, layer + 1, trace, Mode::Eval);
  out.map.height = image.dim(2);
  out.map.width = image.dim(3);
  out.map.values.assign(out.map.height * out.map.width, 0.0);
  for (const auto& unit : out.units) {
    out.unit_scores.push_back(scores.at(unit.channel, unit.row, unit.col));
    const auto m = backprop_unit(model, trace, unit, scores.cls);
    for (std::size_t p = 0; p < m.values.size(); ++p)
      out.map.values[p] += std::abs(m.values[p]);
  }
  return out;
}

template <class Real>
Roi unit_footprint(const Model<Real>& model, const UnitRef& unit) {
  if (unit.layer >= model.num_layers()) throw std::out_of_range("unit layer out of range");
  auto in_shape = [&](std::size_t i) {
    return i == 0 ? model.input_shape(1) : model.output_shape(i - 1, 1);
  };
  Shape out = model.output_shape(unit.layer, 1);
  if (out.size() != 4 || unit.channel >= out[1] || unit.row >= out[2] || unit.col >= out[3])
    throw std::out_of_range("unit outside layer " + std::to_string(unit.layer));

  std::size_t H = out[2], W = out[3];
  std::vector<std::uint8_t> support(H * W, 0);
  support[unit.row * W + unit.col] = 1;
  for (std::size_t i = unit.layer + 1; i-- > 0;) {
    const Shape in = in_shape(i);
    const std::size_t h = in.size() == 4 ? in[2] : 1, w = in.size() == 4 ? in[3] : 1;
    std::vector<std::uint8_t> below(h * w, 0);
    std::visit(
        [&](const auto& spec) {
          using S = std::decay_t<decltype(spec)>;
          if constexpr (std::is_same_v<S, MaskedConvSpec>) {
            for (std::size_t y = 0; y < H; ++y)
              for (std::size_t x = 0; x < W; ++x) {
                if (!support[y * W + x]) continue;
                for (const auto& o : spec.mask.cells()) {
                  const long yy = static_cast<long>(y) + o.dy,
                             xx = static_cast<long>(x) + o.dx;
                  if (yy >= 0 && xx >= 0 && yy < static_cast<long>(h) &&
                      xx < static_cast<long>(w))
                    below[yy * w + xx] = 1;
                }
              }
          } else if constexpr (std::is_same_v<S, MaxPoolSpec>) {
            for (std::size_t y = 0; y < H; ++y)
              for (std::size_t x = 0; x < W; ++x) {
                if (!support[y * W + x]) continue;
                const std::size_t s = spec.stride, k = spec.k;
                for (std::size_t yy = y * s; yy < std::min(h, y * s + k); ++yy)
                  for (std::size_t xx = x * s; xx < std::min(w, x * s + k); ++xx)
                    below[yy * w + xx] = 1;
              }
          } else if constexpr (std::is_same_v<S, GlobalAvgPoolSpec> ||
                               std::is_same_v<S, SoftmaxClassifierSpec>) {
            if (std::find(support.begin(), support.end(), 1) != support.end())
              std::fill(below.begin(), below.end(), 1);
          } else {
            below = support;  // pointwise in space
          }
        },
        model.spec(i));
    support = std::move(below);
    H = h;
    W = w;
  }
  return Roi{H, W, std::move(support)};
}

template <class Real>
Roi roi(const Model<Real>& model, const SaliencyMap& map, double tau) {
  Roi out{map.map.height, map.map.width,
          std::vector<std::uint8_t>(map.map.values.size(), 0)};
  const double mx = map.map.max();
  if (!(mx > 0.0)) return out;
  std::vector<std::uint8_t> bound(out.mask.size(), 0);
  for (const auto& u : map.units) {
    const auto fp = unit_footprint(model, u);
    for (std::size_t p = 0; p < bound.size(); ++p) bound[p] |= fp.mask[p];
  }
  for (std::size_t p = 0; p < out.mask.size(); ++p)
    out.mask[p] = bound[p] && map.map.values[p] > tau * mx;
  return out;
}

std::string class_name(int id, int class_count) {
  static const char* kCifar10[] = {"airplane", "automobile", "bird",  "cat",  "deer",
                                   "dog",      "frog",       "horse", "ship", "truck"};
  if (class_count == 10 && id >= 0 && id < 10) return kCifar10[id];
  return "class" + std::to_string(id);
}

std::vector<RankedClass> top_classes(std::span<const float> scores, std::size_t k) {
  std::vector<RankedClass> all;
  for (std::size_t i = 0; i < scores.size(); ++i)
    all.push_back({static_cast<int>(i), static_cast<double>(scores[i])});
  std::stable_sort(all.begin(), all.end(),
                   [](const auto& a, const auto& b) { return a.score > b.score; });
  all.resize(std::min(k, all.size()));
  return all;
}

void render(const Tensor<float>& image_chw, const SaliencyMap& map, const Roi& region,
            const std::vector<RankedClass>& top, const std::filesystem::path& path,
            int class_count) {
  if (image_chw.rank() != 3 || image_chw.dim(0) != 3)
    throw std::invalid_argument("render: RGB image (3, H, W) expected");
  const int H = static_cast<int>(image_chw.dim(1)), W = static_cast<int>(image_chw.dim(2));
  if (map.map.height != static_cast<std::size_t>(H) ||
      map.map.width != static_cast<std::size_t>(W) || region.height != map.map.height ||
      region.width != map.map.width)
    throw std::invalid_argument("render: map, ROI and image sizes differ");

  const double mx = map.map.max();
  Image img(W, H, 3);
  auto to_byte = [](double v) {
    return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
  };
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      const double a = mx > 0.0 ? map.map.at(y, x) / mx : 0.0;
      for (int c = 0; c < 3; ++c) {
        const double v = image_chw[(static_cast<std::size_t>(c) * H + y) * W + x];
        img.at(x, y, c) = to_byte((1.0 - a) * v + (c == 0 ? a : 0.0));
      }
    }
  // Border: pixels outside the ROI touching it (8-neighbourhood).
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) {
      if (region.contains(y, x)) continue;
      bool edge = false;
      for (int dy = -1; dy <= 1 && !edge; ++dy)
        for (int dx = -1; dx <= 1 && !edge; ++dx) {
          const int yy = y + dy, xx = x + dx;
          edge = yy >= 0 && xx >= 0 && yy < H && xx < W && region.contains(yy, xx);
        }
      if (edge) {
        img.at(x, y, 0) = 255;
        img.at(x, y, 1) = 255;
        img.at(x, y, 2) = 0;
      }
    }
  write_image(img, path);

  auto sidecar = path;
  sidecar.replace_extension(".top5.tsv");
  std::ofstream out(sidecar);
  if (!out) throw IoError("cannot write " + sidecar.string());
  out << "rank\tclass_id\tclass_name\tscore\n";
  for (std::size_t r = 0; r < top.size(); ++r)
    out << r + 1 << '\t' << top[r].id << '\t' << class_name(top[r].id, class_count) << '\t'
        << top[r].score << '\n';
}

#define QHCONV_INSTANTIATE(Real)                                                        \
  template std::size_t last_maxpool_layer(const Model<Real>&);                          \
  template ScoreMap unit_scores(const Model<Real>&, const Tensor<Real>&, std::size_t,   \
                                int, int);                                              \
  template PixelMap backprop_unit(const Model<Real>&, const Trace<Real>&,               \
                                  const UnitRef&, int);                                 \
  template SaliencyMap saliency_map(const Model<Real>&, const Tensor<Real>&, int,       \
                                    std::size_t, std::size_t, int);                     \
  template SaliencyMap saliency_map(const Model<Real>&, const Tensor<Real>&,            \
                                    const ScoreMap&, std::size_t);                      \
  template Roi unit_footprint(const Model<Real>&, const UnitRef&);                      \
  template Roi roi(const Model<Real>&, const SaliencyMap&, double);

QHCONV_INSTANTIATE(float)
QHCONV_INSTANTIATE(double)

}  // namespace qhconv
