#pragma once

// Independent reference implementations used by the tests. Plain loops, no
// shared code with the library beyond the data types.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <set>
#include <vector>

#include "qhconv/kernel_shapes.hpp"
#include "qhconv/tensor.hpp"

namespace oracle {

using qhconv::KernelMask;
using qhconv::Offset;
using qhconv::Shape;
using qhconv::Tensor;

inline Tensor<double> random_tensor(Shape s, std::mt19937_64& rng, double lo = -1.0,
                                    double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor<double> t(std::move(s));
  for (auto& v : t.storage()) v = u(rng);
  return t;
}

// Packed (O, I, |cells|) weights expanded to dense (O, I, K, K) with zeros.
inline Tensor<double> unpack(const Tensor<double>& packed, const KernelMask& m) {
  const std::size_t O = packed.dim(0), I = packed.dim(1), K = m.size(), n = m.count();
  Tensor<double> dense({O, I, K, K});
  const int r = m.radius();
  for (std::size_t o = 0; o < O; ++o)
    for (std::size_t i = 0; i < I; ++i)
      for (std::size_t t = 0; t < n; ++t) {
        const auto c = m.cells()[t];
        dense[((o * I + i) * K + (c.dy + r)) * K + (c.dx + r)] = packed[(o * I + i) * n + t];
      }
  return dense;
}

// Dense same-padded cross-correlation, stride 1.
inline Tensor<double> dense_conv(const Tensor<double>& x, const Tensor<double>& w,
                                 const Tensor<double>& b) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const int r = static_cast<int>(K) / 2;
  Tensor<double> y({N, O, H, W});
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          double s = b[o];
          for (std::size_t c = 0; c < C; ++c)
            for (int dy = -r; dy <= r; ++dy)
              for (int dx = -r; dx <= r; ++dx) {
                const long yy = static_cast<long>(i) + dy, xx = static_cast<long>(j) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                  continue;
                s += w[((o * C + c) * K + (dy + r)) * K + (dx + r)] * x.at(n, c, yy, xx);
              }
          y.at(n, o, i, j) = s;
        }
  return y;
}

struct DenseGrads {
  Tensor<double> input, weights, bias;
};

inline DenseGrads dense_conv_backward(const Tensor<double>& x, const Tensor<double>& w,
                                      const Tensor<double>& gy) {
  const std::size_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t O = w.dim(0), K = w.dim(2);
  const int r = static_cast<int>(K) / 2;
  DenseGrads g{Tensor<double>(x.shape()), Tensor<double>(w.shape()), Tensor<double>({O})};
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < W; ++j) {
          const double go = gy.at(n, o, i, j);
          g.bias[o] += go;
          for (std::size_t c = 0; c < C; ++c)
            for (int dy = -r; dy <= r; ++dy)
              for (int dx = -r; dx <= r; ++dx) {
                const long yy = static_cast<long>(i) + dy, xx = static_cast<long>(j) + dx;
                if (yy < 0 || xx < 0 || yy >= static_cast<long>(H) || xx >= static_cast<long>(W))
                  continue;
                const std::size_t wi = ((o * C + c) * K + (dy + r)) * K + (dx + r);
                g.weights[wi] += go * x.at(n, c, yy, xx);
                g.input.at(n, c, yy, xx) += go * w[wi];
              }
        }
  return g;
}

// Minkowski sum of offset sets by explicit double loop.
inline std::set<std::pair<int, int>> dilate(const std::vector<KernelMask>& masks) {
  std::set<std::pair<int, int>> cur{{0, 0}};
  for (const auto& m : masks) {
    std::set<std::pair<int, int>> next;
    for (const auto& [y, x] : cur)
      for (const auto& c : m.cells()) next.insert({y + c.dy, x + c.dx});
    cur = std::move(next);
  }
  return cur;
}

// Central differences of f with respect to every entry of `x`.
inline std::vector<double> numeric_grad(Tensor<double>& x, const std::function<double()>& f,
                                        double h = 1e-5) {
  std::vector<double> g(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + h;
    const double fp = f();
    x[i] = keep - h;
    const double fm = f();
    x[i] = keep;
    g[i] = (fp - fm) / (2 * h);
  }
  return g;
}

// Largest |a - b| / max(floor, |a|, |b|).
inline double rel_error(const std::vector<double>& a, const std::vector<double>& b,
                        double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = std::abs(a[i] - b[i]);
    worst = std::max(worst, d / std::max({floor, std::abs(a[i]), std::abs(b[i])}));
  }
  return worst;
}

inline double max_abs_diff(const std::vector<double>& a, const std::vector<double>& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

}  // namespace oracle
