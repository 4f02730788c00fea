#include "qhconv/model.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <random>
#include <variant>

#include "qhconv/conv.hpp"
#include "qhconv/errors.hpp"
#include "qhconv/numeric.hpp"

namespace qhconv {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

template <class Real>
void add_into(Tensor<Real>& dst, const Tensor<Real>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

template <class Real>
class ConvLayer final : public Layer<Real> {
 public:
  ConvLayer(int in_ch, int out_ch, KernelMask mask)
      : in_ch_(in_ch), out_ch_(out_ch), mask_(std::move(mask)) {
    params_[0] = Tensor<Real>({static_cast<std::size_t>(out_ch),
                               static_cast<std::size_t>(in_ch), mask_.count()});
    params_[1] = Tensor<Real>({static_cast<std::size_t>(out_ch)});
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4 || static_cast<int>(in[1]) != in_ch_)
      throw std::invalid_argument("conv layer: input " + shape_to_string(in) +
                                  " does not have " + std::to_string(in_ch_) +
                                  " channels");
    return {in[0], static_cast<std::size_t>(out_ch_), in[2], in[3]};
  }

  void forward(const Tensor<Real>& in, Tensor<Real>& out, LayerCache&, Mode,
               std::uint64_t) const override {
    output_shape(in.shape());
    out = conv_forward(in, mask_, params_[0], params_[1]);
  }

  void backward(const Tensor<Real>& in, const Tensor<Real>&,
                const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                const LayerCache&,
                std::span<Tensor<Real>> param_grads) const override {
    auto g = conv_backward(in, mask_, params_[0], grad_out, !param_grads.empty());
    grad_in = std::move(g.input);
    if (!param_grads.empty()) {
      add_into(param_grads[0], g.weights);
      add_into(param_grads[1], g.bias);
    }
  }

  std::span<Tensor<Real>> params() override { return params_; }
  std::span<const Tensor<Real>> params() const override { return params_; }

  std::uint64_t macs(const Shape& in) const override {
    // Stride 1 with same padding: the output plane equals the input plane.
    return static_cast<std::uint64_t>(in[2]) * in[3] * out_ch_ * in_ch_ * mask_.count();
  }

  std::size_t fan_in() const { return static_cast<std::size_t>(in_ch_) * mask_.count(); }

 private:
  int in_ch_, out_ch_;
  KernelMask mask_;
  std::array<Tensor<Real>, 2> params_;
};

template <class Real>
class ReLULayer final : public Layer<Real> {
 public:
  Shape output_shape(const Shape& in) const override { return in; }

  void forward(const Tensor<Real>& in, Tensor<Real>& out, LayerCache&, Mode,
               std::uint64_t) const override {
    out = Tensor<Real>(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = in[i] > Real{0} ? in[i] : Real{0};
  }

  void backward(const Tensor<Real>& in, const Tensor<Real>&,
                const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                const LayerCache&, std::span<Tensor<Real>>) const override {
    grad_in = Tensor<Real>(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i)
      grad_in[i] = in[i] > Real{0} ? grad_out[i] : Real{0};
  }
};

template <class Real>
class MaxPoolLayer final : public Layer<Real> {
 public:
  explicit MaxPoolLayer(MaxPoolSpec spec) : spec_(spec) {}

  static std::size_t extent(std::size_t in, int k, int stride) {
    if (in < static_cast<std::size_t>(k)) return 1;
    return (in - k + stride - 1) / stride + 1;
  }

  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4) throw std::invalid_argument("maxpool: rank-4 input expected");
    return {in[0], in[1], extent(in[2], spec_.k, spec_.stride),
            extent(in[3], spec_.k, spec_.stride)};
  }

  void forward(const Tensor<Real>& in, Tensor<Real>& out, LayerCache& cache, Mode,
               std::uint64_t) const override {
    const Shape os = output_shape(in.shape());
    out = Tensor<Real>(os);
    cache.argmax.assign(out.size(), 0);
    const std::size_t H = in.dim(2), W = in.dim(3), OH = os[2], OW = os[3];
    std::size_t o = 0;
    for (std::size_t plane = 0; plane < in.dim(0) * in.dim(1); ++plane) {
      const std::size_t base = plane * H * W;
      for (std::size_t oy = 0; oy < OH; ++oy)
        for (std::size_t ox = 0; ox < OW; ++ox, ++o) {
          const std::size_t y0 = oy * spec_.stride, x0 = ox * spec_.stride;
          const std::size_t y1 = std::min(H, y0 + spec_.k), x1 = std::min(W, x0 + spec_.k);
          std::size_t best = base + y0 * W + x0;
          for (std::size_t y = y0; y < y1; ++y)
            for (std::size_t x = x0; x < x1; ++x) {
              const std::size_t idx = base + y * W + x;
              if (in[idx] > in[best]) best = idx;
            }
          out[o] = in[best];
          cache.argmax[o] = static_cast<std::uint32_t>(best);
        }
    }
  }

  void backward(const Tensor<Real>& in, const Tensor<Real>&,
                const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                const LayerCache& cache, std::span<Tensor<Real>>) const override {
    grad_in = Tensor<Real>(in.shape());
    for (std::size_t o = 0; o < grad_out.size(); ++o) grad_in[cache.argmax[o]] += grad_out[o];
  }

 private:
  MaxPoolSpec spec_;
};

template <class Real>
class DropoutLayer final : public Layer<Real> {
 public:
  explicit DropoutLayer(double rate) : rate_(rate) {}

  Shape output_shape(const Shape& in) const override { return in; }

  void forward(const Tensor<Real>& in, Tensor<Real>& out, LayerCache& cache,
               Mode mode, std::uint64_t seed) const override {
    out = in;
    if (mode == Mode::Eval || rate_ == 0.0) {
      cache.keep.clear();
      return;
    }
    std::mt19937_64 rng(seed);
    const Real scale = static_cast<Real>(1.0 / (1.0 - rate_));
    cache.keep.resize(in.size());
    for (std::size_t i = 0; i < in.size(); ++i) {
      const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
      cache.keep[i] = u >= rate_;
      out[i] = cache.keep[i] ? in[i] * scale : Real{0};
    }
  }

  void backward(const Tensor<Real>&, const Tensor<Real>&,
                const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                const LayerCache& cache, std::span<Tensor<Real>>) const override {
    grad_in = grad_out;
    if (cache.keep.empty()) return;
    const Real scale = static_cast<Real>(1.0 / (1.0 - rate_));
    for (std::size_t i = 0; i < grad_in.size(); ++i)
      grad_in[i] = cache.keep[i] ? grad_in[i] * scale : Real{0};
  }

 private:
  double rate_;
};

template <class Real>
class GlobalAvgPoolLayer final : public Layer<Real> {
 public:
  Shape output_shape(const Shape& in) const override {
    if (in.size() != 4) throw std::invalid_argument("gap: rank-4 input expected");
    return {in[0], in[1], 1, 1};
  }

  void forward(const Tensor<Real>& in, Tensor<Real>& out, LayerCache&, Mode,
               std::uint64_t) const override {
    out = Tensor<Real>(output_shape(in.shape()));
    const std::size_t area = in.dim(2) * in.dim(3);
    for (std::size_t p = 0; p < out.size(); ++p) {
      Real s{0};
      for (std::size_t i = 0; i < area; ++i) s += in[p * area + i];
      out[p] = s / static_cast<Real>(area);
    }
  }

  void backward(const Tensor<Real>& in, const Tensor<Real>&,
                const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                const LayerCache&, std::span<Tensor<Real>>) const override {
    grad_in = Tensor<Real>(in.shape());
    const std::size_t area = in.dim(2) * in.dim(3);
    for (std::size_t p = 0; p < grad_out.size(); ++p) {
      const Real g = grad_out[p] / static_cast<Real>(area);
      for (std::size_t i = 0; i < area; ++i) grad_in[p * area + i] = g;
    }
  }

  std::uint64_t macs(const Shape&) const override { return 0; }
};

template <class Real>
class ClassifierLayer final : public Layer<Real> {
 public:
  explicit ClassifierLayer(int classes) : classes_(classes) {}

  Shape output_shape(const Shape& in) const override {
    if (shape_size(in) != in[0] * static_cast<std::size_t>(classes_))
      throw std::invalid_argument("classifier: input " + shape_to_string(in) +
                                  " is not (N, " + std::to_string(classes_) + ", 1, 1)");
    return {in[0], static_cast<std::size_t>(classes_)};
  }

  void forward(const Tensor<Real>& in, Tensor<Real>& out, LayerCache&, Mode,
               std::uint64_t) const override {
    out = in;
    out.reshape(output_shape(in.shape()));
  }

  void backward(const Tensor<Real>& in, const Tensor<Real>&,
                const Tensor<Real>& grad_out, Tensor<Real>& grad_in,
                const LayerCache&, std::span<Tensor<Real>>) const override {
    grad_in = grad_out;
    grad_in.reshape(in.shape());
  }

 private:
  int classes_;
};

template <class Real>
std::unique_ptr<Layer<Real>> make_layer(const LayerSpec& spec) {
  return std::visit(
      overloaded{
          [](const MaskedConvSpec& c) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<ConvLayer<Real>>(c.in_ch, c.out_ch, c.mask);
          },
          [](const Conv1x1Spec& c) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<ConvLayer<Real>>(
                c.in_ch, c.out_ch, KernelMask(1, {{0, 0}}, ShapeKind::Square));
          },
          [](const ReLUSpec&) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<ReLULayer<Real>>();
          },
          [](const MaxPoolSpec& p) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<MaxPoolLayer<Real>>(p);
          },
          [](const DropoutSpec& d) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<DropoutLayer<Real>>(d.rate);
          },
          [](const GlobalAvgPoolSpec&) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<GlobalAvgPoolLayer<Real>>();
          },
          [](const SoftmaxClassifierSpec& s) -> std::unique_ptr<Layer<Real>> {
            return std::make_unique<ClassifierLayer<Real>>(s.classes);
          },
      },
      spec);
}

std::uint64_t layer_dropout_seed(std::uint64_t seed, std::size_t layer) {
  return splitmix64(seed ^ splitmix64(0xD1B54A32D192ED03ULL + layer));
}

}  // namespace

template <class Real>
Model<Real>::Model(ModelConfig config) : config_(std::move(config)) {
  config_.validate();
  layers_.reserve(config_.layers.size());
  for (const auto& spec : config_.layers) layers_.push_back(make_layer<Real>(spec));
}

template <class Real>
Model<Real>::Model(const Model& other) : Model(other.config_) {
  auto dst = params();
  auto src = other.params();
  for (std::size_t i = 0; i < dst.size(); ++i) *dst[i] = *src[i];
}

template <class Real>
Model<Real>& Model<Real>::operator=(const Model& other) {
  if (this != &other) *this = Model(other);
  return *this;
}

template <class Real>
Model<Real>::~Model() = default;

template <class Real>
void Model<Real>::init_weights(std::uint64_t seed) {
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    auto* conv = dynamic_cast<ConvLayer<Real>*>(layers_[i].get());
    if (!conv) continue;
    std::mt19937_64 rng(splitmix64(seed ^ splitmix64(i)));
    std::normal_distribution<double> normal(
        0.0, std::sqrt(2.0 / static_cast<double>(conv->fan_in())));
    auto p = conv->params();
    for (auto& w : p[0].storage()) w = static_cast<Real>(normal(rng));
    p[1].fill(Real{0});
  }
}

template <class Real>
std::vector<Tensor<Real>*> Model<Real>::params() {
  std::vector<Tensor<Real>*> out;
  for (auto& l : layers_)
    for (auto& p : l->params()) out.push_back(&p);
  return out;
}

template <class Real>
std::vector<const Tensor<Real>*> Model<Real>::params() const {
  std::vector<const Tensor<Real>*> out;
  for (const auto& l : layers_)
    for (const auto& p : std::as_const(*l).params()) out.push_back(&p);
  return out;
}

template <class Real>
std::vector<std::string> Model<Real>::param_names() const {
  std::vector<std::string> names;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const auto n = std::as_const(*layers_[i]).params().size();
    if (n >= 1) names.push_back("layer" + std::to_string(i) + ".weight");
    if (n >= 2) names.push_back("layer" + std::to_string(i) + ".bias");
  }
  return names;
}

template <class Real>
Gradients<Real> Model<Real>::zero_gradients() const {
  Gradients<Real> g;
  for (const auto* p : params()) g.emplace_back(p->shape());
  return g;
}

template <class Real>
std::size_t Model<Real>::param_offset(std::size_t layer) const {
  std::size_t off = 0;
  for (std::size_t i = 0; i < layer; ++i) off += std::as_const(*layers_[i]).params().size();
  return off;
}

template <class Real>
Shape Model<Real>::input_shape(std::size_t batch) const {
  return {batch, static_cast<std::size_t>(config_.input_channels),
          static_cast<std::size_t>(config_.input_height),
          static_cast<std::size_t>(config_.input_width)};
}

template <class Real>
Shape Model<Real>::output_shape(std::size_t i, std::size_t batch) const {
  Shape s = input_shape(batch);
  for (std::size_t l = 0; l <= i; ++l) s = layers_.at(l)->output_shape(s);
  return s;
}

template <class Real>
Tensor<Real> Model<Real>::forward_range(const Tensor<Real>& x, std::size_t first,
                                        std::size_t last, Trace<Real>& trace,
                                        Mode mode, std::uint64_t dropout_seed) const {
  if (first > last || last > layers_.size())
    throw std::out_of_range("forward_range: bad layer range");
  trace.first_layer = first;
  trace.activations.assign(last - first + 1, Tensor<Real>());
  trace.caches.assign(last - first, LayerCache{});
  trace.activations[0] = x;
  for (std::size_t i = first; i < last; ++i) {
    const std::size_t k = i - first;
    layers_[i]->forward(trace.activations[k], trace.activations[k + 1],
                        trace.caches[k], mode, layer_dropout_seed(dropout_seed, i));
    if (!trace.activations[k + 1].all_finite())
      throw EngineFault("non-finite activation after layer " + std::to_string(i) +
                        " (" + layer_to_text(config_.layers[i]) + ")");
  }
  return trace.activations.back();
}

template <class Real>
Tensor<Real> Model<Real>::forward(const Tensor<Real>& batch, Trace<Real>& trace,
                                  Mode mode, std::uint64_t dropout_seed) const {
  return forward_range(batch, 0, layers_.size(), trace, mode, dropout_seed);
}

template <class Real>
Tensor<Real> Model<Real>::forward(const Tensor<Real>& batch, Mode mode) const {
  Trace<Real> trace;
  return forward(batch, trace, mode);
}

template <class Real>
Tensor<Real> Model<Real>::backward_range(const Trace<Real>& trace,
                                         const Tensor<Real>& grad, std::size_t first,
                                         std::size_t last, Gradients<Real>* grads) const {
  if (trace.activations.empty())
    throw std::logic_error("backward called before forward");
  if (first > last || first < trace.first_layer ||
      last - trace.first_layer >= trace.activations.size())
    throw std::out_of_range("backward_range: layers not covered by the trace");
  Tensor<Real> g = grad;
  Tensor<Real> next;
  for (std::size_t i = last; i-- > first;) {
    const std::size_t k = i - trace.first_layer;
    std::span<Tensor<Real>> pg;
    if (grads) {
      const std::size_t n = std::as_const(*layers_[i]).params().size();
      pg = std::span<Tensor<Real>>(grads->data() + param_offset(i), n);
    }
    layers_[i]->backward(trace.activations[k], trace.activations[k + 1], g, next,
                         trace.caches[k], pg);
    g = std::move(next);
  }
  return g;
}

template <class Real>
Tensor<Real> Model<Real>::backward(const Trace<Real>& trace,
                                   const Tensor<Real>& grad_scores,
                                   Gradients<Real>* grads) const {
  return backward_range(trace, grad_scores, trace.first_layer,
                        trace.first_layer + trace.caches.size(), grads);
}

template <class Real>
std::uint64_t Model<Real>::count_params() const {
  std::uint64_t n = 0;
  for (const auto* p : params()) n += p->size();
  return n;
}

template <class Real>
std::uint64_t Model<Real>::count_macs(const Shape& input_chw) const {
  if (input_chw.size() != 3) throw std::invalid_argument("count_macs: (C, H, W) expected");
  Shape s{1, input_chw[0], input_chw[1], input_chw[2]};
  std::uint64_t total = 0;
  for (const auto& l : layers_) {
    total += l->macs(s);
    s = l->output_shape(s);
  }
  return total;
}

template <class Real>
Tensor<Real> softmax(const Tensor<Real>& scores) {
  Tensor<Real> p(scores.shape());
  const std::size_t N = scores.dim(0), C = scores.dim(1);
  for (std::size_t n = 0; n < N; ++n) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, double(scores[n * C + c]));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(double(scores[n * C + c]) - mx);
    for (std::size_t c = 0; c < C; ++c)
      p[n * C + c] = static_cast<Real>(std::exp(double(scores[n * C + c]) - mx) / z);
  }
  return p;
}

template <class Real>
LossResult<Real> softmax_cross_entropy(const Tensor<Real>& scores,
                                       std::span<const int> labels) {
  const std::size_t N = scores.dim(0), C = scores.dim(1);
  if (labels.size() != N) throw std::invalid_argument("loss: label count mismatch");
  LossResult<Real> r;
  r.grad = Tensor<Real>(scores.shape());
  double total = 0.0;
  for (std::size_t n = 0; n < N; ++n) {
    const int y = labels[n];
    if (y < 0 || static_cast<std::size_t>(y) >= C)
      throw std::invalid_argument("loss: label out of range");
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < C; ++c) mx = std::max(mx, double(scores[n * C + c]));
    double z = 0.0;
    for (std::size_t c = 0; c < C; ++c) z += std::exp(double(scores[n * C + c]) - mx);
    const double log_z = mx + std::log(z);
    total += log_z - double(scores[n * C + y]);
    for (std::size_t c = 0; c < C; ++c) {
      const double p = std::exp(double(scores[n * C + c]) - log_z);
      r.grad[n * C + c] =
          static_cast<Real>((p - (static_cast<int>(c) == y ? 1.0 : 0.0)) / double(N));
    }
  }
  r.loss = total / static_cast<double>(N);
  if (!std::isfinite(r.loss)) throw EngineFault("non-finite loss");
  return r;
}

template class Model<float>;
template class Model<double>;
template Tensor<float> softmax(const Tensor<float>&);
template Tensor<double> softmax(const Tensor<double>&);
template LossResult<float> softmax_cross_entropy(const Tensor<float>&, std::span<const int>);
template LossResult<double> softmax_cross_entropy(const Tensor<double>&, std::span<const int>);

}  // namespace qhconv
