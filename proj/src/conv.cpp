#include "qhconv/conv.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <vector>

namespace qhconv {

namespace {

template <class Real>
using RowMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using CMap = Eigen::Map<const RowMat<Real>>;
template <class Real>
using MMap = Eigen::Map<RowMat<Real>>;

bool is_pointwise(const KernelMask& mask) {
  return mask.count() == 1 && mask.cells().front() == Offset{0, 0};
}

}  // namespace

template <class Real>
void masked_im2col(std::span<const Real> image, int channels, int height,
                   int width, const KernelMask& mask, std::span<Real> cols) {
  const auto& cells = mask.cells();
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t rows = static_cast<std::size_t>(channels) * cells.size();
  if (image.size() != channels * plane || cols.size() != rows * plane)
    throw std::invalid_argument("masked_im2col: buffer sizes do not match");

  for (int c = 0; c < channels; ++c) {
    const Real* src = image.data() + c * plane;
    for (std::size_t t = 0; t < cells.size(); ++t) {
      const int dy = cells[t].dy, dx = cells[t].dx;
      Real* dst = cols.data() + (c * cells.size() + t) * plane;
      const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
      for (int y = 0; y < height; ++y) {
        Real* row = dst + static_cast<std::size_t>(y) * width;
        const int iy = y + dy;
        if (iy < 0 || iy >= height || x0 >= x1) {
          std::fill(row, row + width, Real{0});
          continue;
        }
        std::fill(row, row + x0, Real{0});
        std::copy(src + iy * width + x0 + dx, src + iy * width + x1 + dx, row + x0);
        std::fill(row + x1, row + width, Real{0});
      }
    }
  }
}

template <class Real>
void masked_col2im(std::span<const Real> cols, int channels, int height,
                   int width, const KernelMask& mask, std::span<Real> image) {
  const auto& cells = mask.cells();
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const std::size_t rows = static_cast<std::size_t>(channels) * cells.size();
  if (image.size() != channels * plane || cols.size() != rows * plane)
    throw std::invalid_argument("masked_col2im: buffer sizes do not match");

  for (int c = 0; c < channels; ++c) {
    Real* dst = image.data() + c * plane;
    for (std::size_t t = 0; t < cells.size(); ++t) {
      const int dy = cells[t].dy, dx = cells[t].dx;
      const Real* src = cols.data() + (c * cells.size() + t) * plane;
      const int x0 = std::max(0, -dx), x1 = std::min(width, width - dx);
      const int y0 = std::max(0, -dy), y1 = std::min(height, height - dy);
      for (int y = y0; y < y1; ++y) {
        const Real* row = src + static_cast<std::size_t>(y) * width;
        Real* out = dst + static_cast<std::size_t>(y + dy) * width + dx;
        for (int x = x0; x < x1; ++x) out[x] += row[x];
      }
    }
  }
}

template <class Real>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c) {
  MMap<Real> C(c, m, n);
  if (beta == Real{0})
    C.setZero();
  else if (beta != Real{1})
    C *= beta;
  // Stored shapes: A is (m x k) or (k x m); B is (k x n) or (n x k).
  if (!trans_a && !trans_b)
    C.noalias() += alpha * (CMap<Real>(a, m, k) * CMap<Real>(b, k, n));
  else if (!trans_a && trans_b)
    C.noalias() += alpha * (CMap<Real>(a, m, k) * CMap<Real>(b, n, k).transpose());
  else if (trans_a && !trans_b)
    C.noalias() += alpha * (CMap<Real>(a, k, m).transpose() * CMap<Real>(b, k, n));
  else
    C.noalias() += alpha * (CMap<Real>(a, k, m).transpose() *
                            CMap<Real>(b, n, k).transpose());
}

template <class Real>
Tensor<Real> conv_forward(const Tensor<Real>& input, const KernelMask& mask,
                          const Tensor<Real>& weights, const Tensor<Real>& bias) {
  if (input.rank() != 4) throw std::invalid_argument("conv_forward: rank-4 input expected");
  const int N = static_cast<int>(input.dim(0)), C = static_cast<int>(input.dim(1));
  const int H = static_cast<int>(input.dim(2)), W = static_cast<int>(input.dim(3));
  const int K = static_cast<int>(mask.count());
  const int O = static_cast<int>(bias.size());
  if (weights.size() != static_cast<std::size_t>(O) * C * K)
    throw std::invalid_argument("conv_forward: weights " +
                                shape_to_string(weights.shape()) + " do not match " +
                                std::to_string(O) + "x" + std::to_string(C) + "x" +
                                std::to_string(K));
  const int HW = H * W;
  Tensor<Real> out({static_cast<std::size_t>(N), static_cast<std::size_t>(O),
                    static_cast<std::size_t>(H), static_cast<std::size_t>(W)});
  const bool pointwise = is_pointwise(mask);
  std::vector<Real> cols(pointwise ? 0 : static_cast<std::size_t>(C) * K * HW);
  for (int n = 0; n < N; ++n) {
    const Real* src = input.item(n).data();
    if (!pointwise) {
      masked_im2col<Real>(input.item(n), C, H, W, mask, cols);
      src = cols.data();
    }
    Real* dst = out.item(n).data();
    gemm<Real>(false, false, O, HW, C * K, Real{1}, weights.data(), src, Real{0}, dst);
    for (int o = 0; o < O; ++o) {
      const Real b = bias[o];
      Real* row = dst + static_cast<std::size_t>(o) * HW;
      for (int i = 0; i < HW; ++i) row[i] += b;
    }
  }
  return out;
}

template <class Real>
ConvGrads<Real> conv_backward(const Tensor<Real>& input, const KernelMask& mask,
                              const Tensor<Real>& weights,
                              const Tensor<Real>& grad_out, bool param_grads) {
  const int N = static_cast<int>(input.dim(0)), C = static_cast<int>(input.dim(1));
  const int H = static_cast<int>(input.dim(2)), W = static_cast<int>(input.dim(3));
  const int K = static_cast<int>(mask.count());
  const int O = static_cast<int>(grad_out.dim(1));
  const int HW = H * W, CK = C * K;
  if (grad_out.dim(0) != input.dim(0) || grad_out.dim(2) != input.dim(2) ||
      grad_out.dim(3) != input.dim(3))
    throw std::invalid_argument("conv_backward: gradient shape mismatch");

  ConvGrads<Real> g;
  g.input = Tensor<Real>(input.shape());
  if (param_grads) {
    g.weights = Tensor<Real>(weights.shape());
    g.bias = Tensor<Real>({static_cast<std::size_t>(O)});
  }
  const bool pointwise = is_pointwise(mask);
  std::vector<Real> cols(pointwise ? 0 : static_cast<std::size_t>(CK) * HW);
  std::vector<Real> dcols(pointwise ? 0 : static_cast<std::size_t>(CK) * HW);
  for (int n = 0; n < N; ++n) {
    const Real* dout = grad_out.item(n).data();
    if (param_grads) {
      const Real* src = input.item(n).data();
      if (!pointwise) {
        masked_im2col<Real>(input.item(n), C, H, W, mask, cols);
        src = cols.data();
      }
      gemm<Real>(false, true, O, CK, HW, Real{1}, dout, src, Real{1}, g.weights.data());
      for (int o = 0; o < O; ++o) {
        const Real* row = dout + static_cast<std::size_t>(o) * HW;
        Real s{0};
        for (int i = 0; i < HW; ++i) s += row[i];
        g.bias[o] += s;
      }
    }
    if (pointwise) {
      gemm<Real>(true, false, CK, HW, O, Real{1}, weights.data(), dout, Real{0},
                 g.input.item(n).data());
    } else {
      gemm<Real>(true, false, CK, HW, O, Real{1}, weights.data(), dout, Real{0},
                 dcols.data());
      masked_col2im<Real>(dcols, C, H, W, mask, g.input.item(n));
    }
  }
  return g;
}

#define QHCONV_INSTANTIATE(Real)                                                     \
  template void masked_im2col<Real>(std::span<const Real>, int, int, int,            \
                                    const KernelMask&, std::span<Real>);             \
  template void masked_col2im<Real>(std::span<const Real>, int, int, int,            \
                                    const KernelMask&, std::span<Real>);             \
  template void gemm<Real>(bool, bool, int, int, int, Real, const Real*, const Real*, \
                           Real, Real*);                                             \
  template Tensor<Real> conv_forward<Real>(const Tensor<Real>&, const KernelMask&,   \
                                           const Tensor<Real>&, const Tensor<Real>&); \
  template ConvGrads<Real> conv_backward<Real>(const Tensor<Real>&, const KernelMask&, \
                                               const Tensor<Real>&,                  \
                                               const Tensor<Real>&, bool);

QHCONV_INSTANTIATE(float)
QHCONV_INSTANTIATE(double)

#undef QHCONV_INSTANTIATE

}  // namespace qhconv
