#pragma once

// Serial nested-loop kernels. Slow and obvious on purpose: tests use them as the
// independent oracle for rcnet::kernels, and the benchmark measures against them.

#include "rcnet/kernels.hpp"

namespace rcnet::reference {

using kernels::ConvGeometry;

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output);
template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* grad_output, T* grad_input);
template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight);

template <typename T>
void gemm(Index m, Index n, Index k, const T* a, Index lda, const T* b, Index ldb, T* c, Index ldc);

template <typename T>
void channel_moments(const T* x, Index n, Index c, Index plane, double* mean, double* var);

template <typename T>
void avgpool2x2_forward(const T* x, Index planes, Index h, Index w, T* y);

}  // namespace rcnet::reference
