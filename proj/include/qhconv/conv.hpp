#pragma once

#include <span>

#include "qhconv/kernel_shapes.hpp"
#include "qhconv/model_config.hpp"
#include "qhconv/tensor.hpp"

namespace qhconv {

/// Gathers the active mask offsets of a zero-padded (C, H, W) image into a
/// (C * |cells|) x (H * W) column matrix. Row c * |cells| + t holds channel c
/// shifted by the t-th active offset.
template <class Real>
void masked_im2col(std::span<const Real> image, int channels, int height,
                   int width, const KernelMask& mask, std::span<Real> cols);

/// Adjoint of masked_im2col: scatters columns back and accumulates into image.
template <class Real>
void masked_col2im(std::span<const Real> cols, int channels, int height,
                   int width, const KernelMask& mask, std::span<Real> image);

/// Row-major C = alpha * op(A) * op(B) + beta * C.
template <class Real>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, Real alpha,
          const Real* a, const Real* b, Real beta, Real* c);

/// Masked convolution, stride 1, pad mask.radius(). Weights are packed as
/// (out_ch, in_ch, |cells|); bias is (out_ch).
template <class Real>
Tensor<Real> conv_forward(const Tensor<Real>& input, const KernelMask& mask,
                          const Tensor<Real>& weights, const Tensor<Real>& bias);

template <class Real>
Tensor<Real> conv_forward(const Tensor<Real>& input, const MaskedConvSpec& spec,
                          const Tensor<Real>& weights, const Tensor<Real>& bias) {
  if (input.rank() != 4 || static_cast<int>(input.dim(1)) != spec.in_ch)
    throw std::invalid_argument("conv_forward: input " +
                                shape_to_string(input.shape()) +
                                " does not have " + std::to_string(spec.in_ch) +
                                " channels");
  return conv_forward(input, spec.mask, weights, bias);
}

template <class Real>
struct ConvGrads {
  Tensor<Real> input;
  Tensor<Real> weights;  // empty unless requested
  Tensor<Real> bias;
};

template <class Real>
ConvGrads<Real> conv_backward(const Tensor<Real>& input, const KernelMask& mask,
                              const Tensor<Real>& weights,
                              const Tensor<Real>& grad_out,
                              bool param_grads = true);

}  // namespace qhconv
