#include <doctest.h>

#include <cmath>
#include <random>

#include "gradcheck.hpp"
#include "qhconv/conv.hpp"
#include "qhconv/errors.hpp"

using namespace qhconv;

TEST_CASE("every layer type passes the finite-difference check") {
  for (auto& [name, cfg] : gradcheck::layer_fixtures()) {
    CAPTURE(name);
    Model<double> m(cfg);
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      const auto r = gradcheck::check_layer(m, 0, seed);
      CHECK(r.worst() < 1e-4);
    }
  }
}

TEST_CASE("end-to-end gradient of a small masked network") {
  Model<double> m(gradcheck::three_layer_config());
  for (std::uint64_t seed = 1; seed <= 3; ++seed) CHECK(gradcheck::check_end_to_end(m, seed).worst() < 1e-4);
}

TEST_CASE("zero weights give zero scores; softmax normalizes") {
  Model<float> zero(make_preset("QH-A-mini"));
  std::mt19937_64 rng(1);
  const auto x = oracle::random_tensor(zero.input_shape(4), rng).cast<float>();
  const auto s = zero.forward(x);
  for (float v : s.storage()) CHECK(v == 0.0f);

  const auto m = build_model<float>(make_preset("QH-A-mini"), 7);
  const auto p = softmax(m.forward(x));
  for (std::size_t n = 0; n < 4; ++n) {
    double sum = 0.0;
    for (std::size_t c = 0; c < 10; ++c) sum += p[n * 10 + c];
    CHECK(std::abs(sum - 1.0) < 1e-6);
  }
}

TEST_CASE("forward is deterministic and eval-mode dropout is the identity") {
  const auto m = build_model<float>(make_preset("BASE-A-mini"), 3);
  std::mt19937_64 rng(2);
  const auto x = oracle::random_tensor(m.input_shape(2), rng).cast<float>();
  CHECK(m.forward(x) == m.forward(x));
  Trace<float> a, b;
  CHECK(m.forward(x, a, Mode::Train, 5) == m.forward(x, b, Mode::Train, 5));

  Trace<float> t;
  m.forward(x, t, Mode::Eval);
  CHECK(t.output_of(0) == x);  // layer 0 is input dropout
  Trace<float> tr;
  m.forward(x, tr, Mode::Train, 9);
  CHECK_FALSE(tr.output_of(0) == x);
}

TEST_CASE("ReLU blocks gradient at negative pre-activations") {
  ModelConfig cfg;
  cfg.name = "relu";
  cfg.input_channels = 1;
  cfg.input_height = 1;
  cfg.input_width = 2;
  cfg.layers = {ReLUSpec{}, GlobalAvgPoolSpec{}, SoftmaxClassifierSpec{1}};
  Model<double> m(cfg);
  Tensor<double> x({1, 1, 1, 2}, std::vector<double>{-1.0, 2.0});
  Trace<double> t;
  m.forward(x, t, Mode::Eval);
  const auto g = m.backward(t, Tensor<double>({1, 1}, 1.0), nullptr);
  CHECK(g[0] == 0.0);
  CHECK(g[1] == 0.5);
}

TEST_CASE("backward without forward is an error") {
  Model<double> m(gradcheck::three_layer_config());
  Trace<double> empty;
  CHECK_THROWS_AS(m.backward(empty, Tensor<double>({1, 3}), nullptr), std::logic_error);
}

TEST_CASE("non-finite activations raise an engine fault") {
  Model<float> m(make_preset("QH-A-mini"));
  Tensor<float> x(m.input_shape(1), std::nanf(""));
  m.params()[0]->fill(1.0f);
  CHECK_THROWS_AS(m.forward(x), EngineFault);
}

TEST_CASE("parameter counts") {
  CHECK(Model<float>(make_preset("BASE-A")).count_params() == 1369738);
  CHECK(Model<float>(make_preset("QH-A")).count_params() == 1074250);
  for (const auto& name : preset_names()) {
    const Model<float> m(make_preset(name + "-mini"));
    std::uint64_t expect = 0;
    for (std::size_t i = 0; i < m.num_layers(); ++i) {
      if (const auto* c = std::get_if<MaskedConvSpec>(&m.spec(i)))
        expect += static_cast<std::uint64_t>(c->in_ch) * c->out_ch * c->mask.count() + c->out_ch;
      if (const auto* c = std::get_if<Conv1x1Spec>(&m.spec(i)))
        expect += static_cast<std::uint64_t>(c->in_ch) * c->out_ch + c->out_ch;
    }
    CHECK(m.count_params() == expect);
  }
}

TEST_CASE("QH keeps 7/9 of the 3x3 weights and MACs") {
  for (int scale : {1, 4}) {
    const Model<float> base(make_preset("BASE-A", {10, scale}));
    const Model<float> qh(make_preset("QH-A", {10, scale}));
    std::uint64_t wb = 0, wq = 0;
    for (std::size_t i = 0; i < base.num_layers(); ++i) {
      if (!std::holds_alternative<MaskedConvSpec>(base.spec(i))) continue;
      const Shape in = i == 0 ? base.input_shape(1) : base.output_shape(i - 1, 1);
      const auto mb = base.layer(i).macs(in), mq = qh.layer(i).macs(in);
      CHECK(mq * 9 == mb * 7);
      wb += base.layer(i).params()[0].size();
      wq += qh.layer(i).params()[0].size();
      const auto& c = std::get<MaskedConvSpec>(qh.spec(i));
      CHECK(mq == in[2] * in[3] * static_cast<std::uint64_t>(c.out_ch) * c.in_ch * 7);
    }
    CHECK(wq * 9 == wb * 7);
    CHECK(qh.count_macs({3, 32, 32}) < base.count_macs({3, 32, 32}));
  }
}

TEST_CASE("He initialization scale follows the active fan-in") {
  const auto m = build_model<double>(make_preset("QH-A"), 11);
  const auto& w = m.layer(3).params()[0];  // 96 -> 96 QH conv
  double ss = 0.0;
  for (double v : w.storage()) ss += v * v;
  const double var = ss / static_cast<double>(w.size());
  CHECK(var == doctest::Approx(2.0 / (96 * 7)).epsilon(0.02));
  for (double b : m.layer(3).params()[1].storage()) CHECK(b == 0.0);
}
