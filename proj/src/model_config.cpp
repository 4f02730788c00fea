#include "qhconv/model_config.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "qhconv/numeric.hpp"
#include "qhconv/rf_montecarlo.hpp"

namespace qhconv {

namespace {

template <class... Ts>
struct overloaded : Ts... {
  using Ts::operator()...;
};

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

std::string layer_to_text(const LayerSpec& spec) {
  std::ostringstream os;
  std::visit(
      overloaded{
          [&](const MaskedConvSpec& c) {
            os << "conv " << c.in_ch << ' ' << c.out_ch << ' '
               << shape_kind_name(c.mask.kind());
            if (c.mask.kind() != ShapeKind::Square &&
                c.mask.kind() != ShapeKind::FK)
              os << ' ' << pattern_char(*c.mask.pattern());
            if (c.mask.kind() == ShapeKind::FK) os << ' ' << *c.mask.seed();
            if (c.mask.size() != 3) os << " size=" << c.mask.size();
          },
          [&](const Conv1x1Spec& c) {
            os << "conv1x1 " << c.in_ch << ' ' << c.out_ch;
          },
          [&](const ReLUSpec&) { os << "relu"; },
          [&](const MaxPoolSpec& p) { os << "maxpool " << p.k << ' ' << p.stride; },
          [&](const DropoutSpec& d) { os << "dropout " << d.rate; },
          [&](const GlobalAvgPoolSpec&) { os << "gap"; },
          [&](const SoftmaxClassifierSpec& s) { os << "softmax " << s.classes; },
      },
      spec);
  return os.str();
}

LayerSpec parse_layer(const std::string& text) {
  std::istringstream is(text);
  std::string kind;
  is >> kind;
  auto fail = [&]() -> LayerSpec {
    throw std::invalid_argument("malformed layer line '" + text + "'");
  };
  if (kind == "conv") {
    MaskedConvSpec c;
    std::string shape;
    if (!(is >> c.in_ch >> c.out_ch >> shape)) return fail();
    const ShapeKind k = parse_shape_kind(shape);
    std::optional<Pattern> pattern;
    std::optional<std::uint64_t> seed;
    int size = 3;
    std::string tok;
    while (is >> tok) {
      if (tok.rfind("size=", 0) == 0)
        size = std::stoi(tok.substr(5));
      else if (k == ShapeKind::FK)
        seed = std::stoull(tok);
      else if (tok.size() == 1)
        pattern = parse_pattern(tok[0]);
      else
        return fail();
    }
    c.mask = make_mask(k, pattern, size, seed);
    return c;
  }
  if (kind == "conv1x1") {
    Conv1x1Spec c;
    if (!(is >> c.in_ch >> c.out_ch)) return fail();
    return c;
  }
  if (kind == "relu") return ReLUSpec{};
  if (kind == "maxpool") {
    MaxPoolSpec p;
    if (!(is >> p.k >> p.stride)) return fail();
    return p;
  }
  if (kind == "dropout") {
    DropoutSpec d;
    if (!(is >> d.rate)) return fail();
    return d;
  }
  if (kind == "gap") return GlobalAvgPoolSpec{};
  if (kind == "softmax") {
    SoftmaxClassifierSpec s;
    if (!(is >> s.classes)) return fail();
    return s;
  }
  return fail();
}

std::string ModelConfig::to_text() const {
  std::ostringstream os;
  os << "name = " << name << '\n'
     << "pattern_seed = " << pattern_seed << '\n'
     << "input = " << input_channels << ' ' << input_height << ' '
     << input_width << '\n';
  for (const auto& l : layers) os << "layer = " << layer_to_text(l) << '\n';
  return os.str();
}

std::uint64_t ModelConfig::digest() const {
  const auto text = to_text();
  return fnv1a({reinterpret_cast<const std::uint8_t*>(text.data()), text.size()});
}

ModelConfig ModelConfig::parse(const std::string& text) {
  ModelConfig cfg;
  std::istringstream is(text);
  std::string line;
  while (std::getline(is, line)) {
    line = trim(line);
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos)
      throw std::invalid_argument("model config line without '=': " + line);
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    if (key == "name") {
      cfg.name = value;
    } else if (key == "pattern_seed") {
      cfg.pattern_seed = std::stoull(value);
    } else if (key == "input") {
      std::istringstream v(value);
      if (!(v >> cfg.input_channels >> cfg.input_height >> cfg.input_width))
        throw std::invalid_argument("bad input line: " + line);
    } else if (key == "layer") {
      cfg.layers.push_back(parse_layer(value));
    } else {
      throw std::invalid_argument("unknown model config key '" + key + "'");
    }
  }
  cfg.validate();
  return cfg;
}

int ModelConfig::num_classes() const {
  for (auto it = layers.rbegin(); it != layers.rend(); ++it)
    if (auto* s = std::get_if<SoftmaxClassifierSpec>(&*it)) return s->classes;
  throw std::invalid_argument("model has no softmax classifier");
}

void ModelConfig::validate() const {
  int channels = input_channels;
  bool spatial = true;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto where = [&] { return "layer " + std::to_string(i) + " (" +
                              layer_to_text(layers[i]) + ")"; };
    std::visit(
        overloaded{
            [&](const MaskedConvSpec& c) {
              if (c.in_ch != channels)
                throw std::invalid_argument(where() + ": expects " +
                                            std::to_string(c.in_ch) +
                                            " input channels, got " +
                                            std::to_string(channels));
              if (c.out_ch < 1) throw std::invalid_argument(where() + ": no outputs");
              channels = c.out_ch;
            },
            [&](const Conv1x1Spec& c) {
              if (c.in_ch != channels)
                throw std::invalid_argument(where() + ": expects " +
                                            std::to_string(c.in_ch) +
                                            " input channels, got " +
                                            std::to_string(channels));
              if (c.out_ch < 1) throw std::invalid_argument(where() + ": no outputs");
              channels = c.out_ch;
            },
            [&](const ReLUSpec&) {},
            [&](const MaxPoolSpec& p) {
              if (p.k < 1 || p.stride < 1)
                throw std::invalid_argument(where() + ": bad pooling geometry");
            },
            [&](const DropoutSpec& d) {
              if (d.rate < 0.0 || d.rate >= 1.0)
                throw std::invalid_argument(where() + ": rate outside [0, 1)");
            },
            [&](const GlobalAvgPoolSpec&) { spatial = false; },
            [&](const SoftmaxClassifierSpec& s) {
              if (spatial)
                throw std::invalid_argument(where() +
                                            ": classifier needs pooled input");
              if (s.classes != channels)
                throw std::invalid_argument(where() + ": " +
                                            std::to_string(channels) +
                                            " channels for " +
                                            std::to_string(s.classes) + " classes");
              if (i + 1 != layers.size())
                throw std::invalid_argument(where() + ": must be the last layer");
            },
        },
        layers[i]);
  }
  if (layers.empty() || !std::holds_alternative<SoftmaxClassifierSpec>(layers.back()))
    throw std::invalid_argument("model must end with a softmax classifier");
}

namespace {

struct StageWidths {
  int stage1, stage2, stage3;
};

std::string strip_mini(const std::string& name, bool& mini) {
  static const std::string suffix = "-mini";
  mini = name.size() > suffix.size() &&
         name.compare(name.size() - suffix.size(), suffix.size(), suffix) == 0;
  return mini ? name.substr(0, name.size() - suffix.size()) : name;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"BASE-A", "QH-A", "QH-B", "BASE-REF", "QH-EXT", "UB-A", "DIA-A"};
}

ModelConfig make_preset(const std::string& name, const PresetOptions& opts) {
  bool mini = false;
  const std::string base = strip_mini(name, mini);
  const int scale = opts.scale > 0 ? opts.scale : (mini ? 4 : 1);
  if (opts.classes < 2) throw std::invalid_argument("need at least 2 classes");

  ShapeKind kind;
  bool widen = false;
  bool fixed_pattern = false;
  if (base == "BASE-A") {
    kind = ShapeKind::Square;
  } else if (base == "QH-A") {
    kind = ShapeKind::QH;
  } else if (base == "QH-B") {
    kind = ShapeKind::QH;
    widen = true;
  } else if (base == "BASE-REF") {
    kind = ShapeKind::FK;
  } else if (base == "QH-EXT") {
    kind = ShapeKind::QH;
    fixed_pattern = true;
  } else if (base == "UB-A") {
    kind = ShapeKind::UB;
  } else if (base == "DIA-A") {
    kind = ShapeKind::DIA;
  } else {
    throw std::invalid_argument("unknown preset '" + name + "'");
  }

  StageWidths w{96 / scale, 192 / scale, 192 / scale};
  if (widen) {
    if (scale == 1) {
      w = {108, 217, 217};
    } else {
      // Same rule that turns 96/192 into 108/217: sqrt(9/7) keeps in*out*7
      // close to the square model's in*out*9.
      const double f = std::sqrt(9.0 / 7.0);
      w = {static_cast<int>(std::floor(w.stage1 * f)),
           static_cast<int>(std::floor(w.stage2 * f)),
           static_cast<int>(std::floor(w.stage3 * f))};
    }
  }
  if (w.stage1 < 1 || w.stage2 < 1)
    throw std::invalid_argument("scale factor leaves no channels");

  constexpr int kMaskedLayers = 7;
  const auto seq = sample_pattern_sequence(kMaskedLayers, opts.pattern_seed);
  int masked_index = 0;
  auto next_mask = [&]() {
    const int i = masked_index++;
    switch (kind) {
      case ShapeKind::Square:
        return make_mask(kind, std::nullopt, 3);
      case ShapeKind::FK:
        return make_mask(kind, std::nullopt, 3,
                         config_seed(opts.pattern_seed, static_cast<std::uint64_t>(i)));
      default:
        return make_mask(kind, fixed_pattern ? Pattern::R : seq.patterns[i], 3);
    }
  };

  ModelConfig cfg;
  cfg.name = mini ? base + "-mini" : base;
  cfg.pattern_seed = opts.pattern_seed;
  auto& L = cfg.layers;
  int ch = 3;
  auto conv = [&](int out) {
    L.push_back(MaskedConvSpec{ch, out, next_mask()});
    L.push_back(ReLUSpec{});
    ch = out;
  };

  L.push_back(DropoutSpec{0.2});
  for (int i = 0; i < 3; ++i) conv(w.stage1);
  L.push_back(MaxPoolSpec{3, 2});
  L.push_back(DropoutSpec{0.5});
  for (int i = 0; i < 3; ++i) conv(w.stage2);
  L.push_back(MaxPoolSpec{3, 2});
  L.push_back(DropoutSpec{0.5});
  conv(w.stage3);
  L.push_back(Conv1x1Spec{ch, w.stage3});
  L.push_back(ReLUSpec{});
  ch = w.stage3;
  L.push_back(Conv1x1Spec{ch, opts.classes});
  if (opts.extra_dropout) L.push_back(DropoutSpec{0.5});
  L.push_back(GlobalAvgPoolSpec{});
  L.push_back(SoftmaxClassifierSpec{opts.classes});
  cfg.validate();
  return cfg;
}

}  // namespace qhconv
