#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "qhconv/conv.hpp"

using namespace qhconv;

namespace {

std::vector<KernelMask> all_masks() {
  std::vector<KernelMask> out{make_mask(ShapeKind::Square, std::nullopt, 3),
                              make_mask(ShapeKind::FK, std::nullopt, 3, 5)};
  for (auto p : {Pattern::U, Pattern::R, Pattern::D, Pattern::L}) {
    out.push_back(make_mask(ShapeKind::QH, p, 3));
    out.push_back(make_mask(ShapeKind::UB, p, 3));
    out.push_back(make_mask(ShapeKind::DIA, p, 3));
  }
  return out;
}

}  // namespace

TEST_CASE("masked conv forward and backward equal dense conv with zeroed cells") {
  std::mt19937_64 rng(123);
  const auto masks = all_masks();
  for (int fixture = 0; fixture < 40; ++fixture) {
    const auto& m = masks[fixture % masks.size()];
    const std::size_t N = 1 + rng() % 3, C = 1 + rng() % 4, O = 1 + rng() % 5;
    const std::size_t H = 1 + rng() % 7, W = 1 + rng() % 7;
    const auto x = oracle::random_tensor({N, C, H, W}, rng);
    const auto w = oracle::random_tensor({O, C, m.count()}, rng);
    const auto b = oracle::random_tensor({O}, rng);
    const auto dense = oracle::unpack(w, m);

    const auto y = conv_forward(x, m, w, b);
    const auto y_ref = oracle::dense_conv(x, dense, b);
    CHECK(oracle::max_abs_diff(y.storage(), y_ref.storage()) < 1e-12);

    const auto gy = oracle::random_tensor(y.shape(), rng);
    const auto g = conv_backward(x, m, w, gy);
    const auto g_ref = oracle::dense_conv_backward(x, dense, gy);
    CHECK(oracle::max_abs_diff(g.input.storage(), g_ref.input.storage()) < 1e-12);
    CHECK(oracle::max_abs_diff(g.bias.storage(), g_ref.bias.storage()) < 1e-12);
    // packed gradient = dense gradient at active cells; the rest has no storage
    const auto g_w_dense = oracle::unpack(g.weights, m);
    for (std::size_t i = 0; i < g_w_dense.size(); ++i) {
      const bool active = dense[i] != 0.0;
      if (active) CHECK(std::abs(g_w_dense[i] - g_ref.weights[i]) < 1e-12);
    }
    CHECK(g.weights.size() == O * C * m.count());
  }
}

TEST_CASE("identity kernel copies each channel") {
  std::mt19937_64 rng(4);
  const auto m = make_mask(ShapeKind::QH, Pattern::D, 3);
  const std::size_t C = 3;
  const auto x = oracle::random_tensor({2, C, 5, 6}, rng);
  Tensor<double> w({C, C, m.count()});
  const auto& cells = m.cells();
  const std::size_t center =
      std::find(cells.begin(), cells.end(), Offset{0, 0}) - cells.begin();
  for (std::size_t c = 0; c < C; ++c) w[(c * C + c) * m.count() + center] = 1.0;
  const auto y = conv_forward(x, m, w, Tensor<double>({C}));
  CHECK(oracle::max_abs_diff(y.storage(), x.storage()) == 0.0);
}

TEST_CASE("im2col and col2im are adjoint") {
  std::mt19937_64 rng(6);
  const auto m = make_mask(ShapeKind::QH, Pattern::L, 3);
  const int C = 2, H = 4, W = 5;
  const auto x = oracle::random_tensor({static_cast<std::size_t>(C * H * W)}, rng);
  const auto c = oracle::random_tensor({C * m.count() * H * W}, rng);
  std::vector<double> cols(c.size()), back(x.size());
  masked_im2col<double>(x.values(), C, H, W, m, cols);
  masked_col2im<double>(c.values(), C, H, W, m, back);
  double lhs = 0.0, rhs = 0.0;
  for (std::size_t i = 0; i < cols.size(); ++i) lhs += cols[i] * c[i];
  for (std::size_t i = 0; i < back.size(); ++i) rhs += back[i] * x[i];
  CHECK(lhs == doctest::Approx(rhs).epsilon(1e-12));
}

TEST_CASE("float path agrees with double") {
  std::mt19937_64 rng(10);
  const auto m = make_mask(ShapeKind::QH, Pattern::U, 3);
  const auto x = oracle::random_tensor({2, 3, 8, 8}, rng);
  const auto w = oracle::random_tensor({4, 3, 7}, rng);
  const auto b = oracle::random_tensor({4}, rng);
  const auto yd = conv_forward(x, m, w, b);
  const auto yf = conv_forward(x.cast<float>(), m, w.cast<float>(), b.cast<float>());
  for (std::size_t i = 0; i < yd.size(); ++i) CHECK(yf[i] == doctest::Approx(yd[i]).epsilon(1e-5));
}

TEST_CASE("shape errors") {
  const auto m = make_mask(ShapeKind::QH, Pattern::U, 3);
  Tensor<double> x({1, 3, 4, 4}), w({2, 2, 7}), b({2});
  CHECK_THROWS_AS(conv_forward(x, m, w, b), std::invalid_argument);
  MaskedConvSpec spec{2, 2, m};
  CHECK_THROWS_AS(conv_forward(x, spec, w, b), std::invalid_argument);
}
