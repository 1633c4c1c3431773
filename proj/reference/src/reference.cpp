#include "rcnet/reference.hpp"

namespace rcnet::reference {

namespace {

template <typename T>
T input_at(const ConvGeometry& g, const T* input, Index n, Index c, Index ih, Index iw) {
  if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) return T{0};
  return input[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw];
}

}  // namespace

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index oh = 0; oh < g.out_h; ++oh)
        for (Index ow = 0; ow < g.out_w; ++ow) {
          T acc = bias ? bias[o] : T{0};
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index ki = 0; ki < g.kernel_h; ++ki)
              for (Index kj = 0; kj < g.kernel_w; ++kj) {
                const T w = weight[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
                acc += w * input_at(g, input, n, c, oh * g.stride - g.padding + ki, ow * g.stride - g.padding + kj);
              }
          output[((n * g.out_channels + o) * g.out_h + oh) * g.out_w + ow] = acc;
        }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* grad_output, T* grad_input) {
  for (Index n = 0; n < g.batch; ++n)
    for (Index o = 0; o < g.out_channels; ++o)
      for (Index oh = 0; oh < g.out_h; ++oh)
        for (Index ow = 0; ow < g.out_w; ++ow) {
          const T dy = grad_output[((n * g.out_channels + o) * g.out_h + oh) * g.out_w + ow];
          for (Index c = 0; c < g.in_channels; ++c)
            for (Index ki = 0; ki < g.kernel_h; ++ki)
              for (Index kj = 0; kj < g.kernel_w; ++kj) {
                const Index ih = oh * g.stride - g.padding + ki;
                const Index iw = ow * g.stride - g.padding + kj;
                if (ih < 0 || ih >= g.in_h || iw < 0 || iw >= g.in_w) continue;
                grad_input[((n * g.in_channels + c) * g.in_h + ih) * g.in_w + iw] +=
                    dy * weight[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj];
              }
        }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight) {
  for (Index o = 0; o < g.out_channels; ++o)
    for (Index c = 0; c < g.in_channels; ++c)
      for (Index ki = 0; ki < g.kernel_h; ++ki)
        for (Index kj = 0; kj < g.kernel_w; ++kj) {
          T acc = 0;
          for (Index n = 0; n < g.batch; ++n)
            for (Index oh = 0; oh < g.out_h; ++oh)
              for (Index ow = 0; ow < g.out_w; ++ow) {
                acc += grad_output[((n * g.out_channels + o) * g.out_h + oh) * g.out_w + ow] *
                       input_at(g, input, n, c, oh * g.stride - g.padding + ki, ow * g.stride - g.padding + kj);
              }
          grad_weight[((o * g.in_channels + c) * g.kernel_h + ki) * g.kernel_w + kj] += acc;
        }
}

template <typename T>
void gemm(Index m, Index n, Index k, const T* a, Index lda, const T* b, Index ldb, T* c, Index ldc) {
  for (Index i = 0; i < m; ++i)
    for (Index j = 0; j < n; ++j) {
      T acc = 0;
      for (Index kk = 0; kk < k; ++kk) acc += a[i * lda + kk] * b[kk * ldb + j];
      c[i * ldc + j] += acc;
    }
}

template <typename T>
void channel_moments(const T* x, Index n, Index c, Index plane, double* mean, double* var) {
  const double count = static_cast<double>(n * plane);
  for (Index ch = 0; ch < c; ++ch) {
    double s = 0;
    double ss = 0;
    for (Index i = 0; i < n; ++i)
      for (Index p = 0; p < plane; ++p) {
        const double v = x[(i * c + ch) * plane + p];
        s += v;
        ss += v * v;
      }
    mean[ch] = s / count;
    var[ch] = ss / count - mean[ch] * mean[ch];
  }
}

template <typename T>
void avgpool2x2_forward(const T* x, Index planes, Index h, Index w, T* y) {
  for (Index p = 0; p < planes; ++p)
    for (Index i = 0; i < h / 2; ++i)
      for (Index j = 0; j < w / 2; ++j) {
        T s = 0;
        for (Index di = 0; di < 2; ++di)
          for (Index dj = 0; dj < 2; ++dj) s += x[(p * h + 2 * i + di) * w + 2 * j + dj];
        y[(p * (h / 2) + i) * (w / 2) + j] = s / T(4);
      }
}

#define RCNET_INSTANTIATE_REFERENCE(T)                                                             \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);        \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);           \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);          \
  template void gemm<T>(Index, Index, Index, const T*, Index, const T*, Index, T*, Index);       \
  template void channel_moments<T>(const T*, Index, Index, Index, double*, double*);             \
  template void avgpool2x2_forward<T>(const T*, Index, Index, Index, T*);

RCNET_INSTANTIATE_REFERENCE(float)
RCNET_INSTANTIATE_REFERENCE(double)

}  // namespace rcnet::reference
