#pragma once

// OpenMP-parallel compute kernels. Every kernel writes each output element from
// exactly one thread and sums in a fixed order, so results do not depend on the
// thread count. Backward kernels accumulate (+=) into their gradient buffers.
// Serial nested-loop counterparts live in rcnet/reference.hpp.

#include "rcnet/tensor.hpp"

namespace rcnet::kernels {

struct ConvGeometry {
  Index batch = 0;
  Index in_channels = 0;
  Index in_h = 0;
  Index in_w = 0;
  Index out_channels = 0;
  Index kernel_h = 0;
  Index kernel_w = 0;
  Index stride = 1;
  Index padding = 0;
  Index out_h = 0;
  Index out_w = 0;

  Index patch_size() const { return in_channels * kernel_h * kernel_w; }
  Index out_plane() const { return out_h * out_w; }
  Index in_plane() const { return in_h * in_w; }
};

// Validates shapes and fills in the output extent. Throws ShapeError.
ConvGeometry make_conv_geometry(const Shape& input, const Shape& weight, Index stride, Index padding);

// C[M,N] += A[M,K] * B[K,N], row-major with leading dimensions.
template <typename T>
void gemm(Index m, Index n, Index k, const T* a, Index lda, const T* b, Index ldb, T* c, Index ldc);

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* grad_output, T* grad_input);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight);
template <typename T>
void conv2d_backward_bias(const ConvGeometry& g, const T* grad_output, T* grad_bias);

// Per-channel batch statistics over N*H*W; biased variance, accumulated in double.
template <typename T>
void channel_moments(const T* x, Index n, Index c, Index plane, double* mean, double* var);

// y = scale[c] * x + shift[c]
template <typename T>
void channel_affine(const T* x, Index n, Index c, Index plane, const T* scale, const T* shift, T* y);

// Train-mode BN backward given normalized activations xhat and inv_std.
template <typename T>
void batchnorm_backward_train(const T* grad_out, const T* xhat, const T* gamma, const T* inv_std, Index n, Index c,
                              Index plane, T* grad_in, T* grad_gamma, T* grad_beta);

template <typename T>
void avgpool2x2_forward(const T* x, Index planes, Index h, Index w, T* y);
template <typename T>
void avgpool2x2_backward(const T* grad_out, Index planes, Index h, Index w, T* grad_in);

// Space-to-depth: channel 4c+k holds phase k=(2*di+dj) of input channel c.
template <typename T>
void invpool_forward(const T* x, Index n, Index c, Index h, Index w, T* y);
template <typename T>
void invpool_inverse(const T* y, Index n, Index c, Index h, Index w, T* x);

template <typename T>
void relu_forward(const T* x, Index count, T* y);
template <typename T>
void relu_backward(const T* grad_out, const T* x, Index count, T* grad_in);

// y += alpha * x
template <typename T>
void axpy(Index count, T alpha, const T* x, T* y);

}  // namespace rcnet::kernels
