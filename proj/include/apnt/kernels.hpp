#pragma once

#include "apnt/tensor.hpp"

namespace apnt::kernels {

enum class Padding { zero, replicate };

/// Stride-1 "same" convolution (cross-correlation). x: (Cin, H, W),
/// weight: (Cout, Cin, k, k) with odd k, bias: (Cout) or nullptr.
Tensor conv2d(const Tensor& x, const Tensor& weight, const Tensor* bias, Padding pad);

/// Accumulates gradients of conv2d into the non-null outputs.
void conv2d_backward(const Tensor& x, const Tensor& weight, Padding pad, const Tensor& grad_out,
                     Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

/// Transposed convolution with kernel == stride == factor (non-overlapping
/// upsampling). weight: (Cin, Cout, f, f).
Tensor conv_transpose(const Tensor& x, const Tensor& weight, const Tensor* bias);
void conv_transpose_backward(const Tensor& x, const Tensor& weight, const Tensor& grad_out,
                             Tensor* grad_x, Tensor* grad_w, Tensor* grad_b);

/// Bilinear downsampling by two (half-pixel centres), i.e. 2x2 averaging.
Tensor downsample2(const Tensor& x);
void downsample2_backward(const Tensor& grad_out, Tensor& grad_x);

Tensor max_pool2(const Tensor& x);

}  // namespace apnt::kernels
