#include "rcnet/kernels.hpp"

#include <algorithm>
#include <vector>

namespace rcnet::kernels {

namespace {

// Columns per packed B panel: two 512-bit vectors worth of T.
template <typename T>
constexpr Index kPanel = 128 / static_cast<Index>(sizeof(T));
constexpr Index kRowBlock = 4;
// Upper bound on im2col buffer elements per batch chunk.
constexpr Index kColBudget = Index{1} << 22;

template <typename T, int Rows>
inline void gemm_micro(Index k, const T* a, Index lda, const T* panel, T* c, Index ldc, Index cols) {
  constexpr Index P = kPanel<T>;
  T acc[Rows][P] = {};
  for (Index kk = 0; kk < k; ++kk) {
    const T* b = panel + kk * P;
    for (int r = 0; r < Rows; ++r) {
      const T av = a[r * lda + kk];
#pragma omp simd
      for (Index j = 0; j < P; ++j) acc[r][j] += av * b[j];
    }
  }
  for (int r = 0; r < Rows; ++r) {
    T* crow = c + r * ldc;
    for (Index j = 0; j < cols; ++j) crow[j] += acc[r][j];
  }
}

template <typename T>
void transpose(Index rows, Index cols, const T* src, T* dst) {
#pragma omp parallel for schedule(static) if (rows * cols > 65536)
  for (Index r = 0; r < rows; ++r) {
    for (Index c = 0; c < cols; ++c) dst[c * rows + r] = src[r * cols + c];
  }
}

// col[(c*kh+ki)*kw+kj][n*P + oh*ow_ + ow] for images [first, first+count).
template <typename T>
void im2col(const ConvGeometry& g, const T* input, Index first, Index count, T* col) {
  const Index plane = g.out_plane();
  const Index width = count * plane;
  const Index rows = g.patch_size();
#pragma omp parallel for schedule(static)
  for (Index row = 0; row < rows; ++row) {
    const Index kj = row % g.kernel_w;
    const Index ki = (row / g.kernel_w) % g.kernel_h;
    const Index ch = row / (g.kernel_w * g.kernel_h);
    T* dst = col + row * width;
    for (Index n = 0; n < count; ++n) {
      const T* src = input + ((first + n) * g.in_channels + ch) * g.in_plane();
      for (Index oh = 0; oh < g.out_h; ++oh) {
        const Index ih = oh * g.stride - g.padding + ki;
        T* out = dst + n * plane + oh * g.out_w;
        if (ih < 0 || ih >= g.in_h) {
          std::fill(out, out + g.out_w, T{0});
          continue;
        }
        const T* line = src + ih * g.in_w;
        for (Index ow = 0; ow < g.out_w; ++ow) {
          const Index iw = ow * g.stride - g.padding + kj;
          out[ow] = (iw >= 0 && iw < g.in_w) ? line[iw] : T{0};
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const ConvGeometry& g, const T* col, Index first, Index count, T* grad_input) {
  const Index plane = g.out_plane();
  const Index width = count * plane;
  const Index kk = g.kernel_h * g.kernel_w;
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < g.in_channels; ++ch) {
    for (Index k = 0; k < kk; ++k) {
      const Index ki = k / g.kernel_w;
      const Index kj = k % g.kernel_w;
      const T* src = col + (ch * kk + k) * width;
      for (Index n = 0; n < count; ++n) {
        T* dst = grad_input + ((first + n) * g.in_channels + ch) * g.in_plane();
        for (Index oh = 0; oh < g.out_h; ++oh) {
          const Index ih = oh * g.stride - g.padding + ki;
          if (ih < 0 || ih >= g.in_h) continue;
          const T* line = src + n * plane + oh * g.out_w;
          T* out = dst + ih * g.in_w;
          for (Index ow = 0; ow < g.out_w; ++ow) {
            const Index iw = ow * g.stride - g.padding + kj;
            if (iw >= 0 && iw < g.in_w) out[iw] += line[ow];
          }
        }
      }
    }
  }
}

// Gathers NCHW images [first, first+count) of an (N,C,P) tensor into a [C, count*P] matrix.
template <typename T>
void gather_channels(const T* src, Index channels, Index plane, Index first, Index count, T* dst) {
  const Index width = count * plane;
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < channels; ++ch) {
    for (Index n = 0; n < count; ++n) {
      const T* s = src + ((first + n) * channels + ch) * plane;
      std::copy(s, s + plane, dst + ch * width + n * plane);
    }
  }
}

Index chunk_images(const ConvGeometry& g) {
  const Index per_image = g.patch_size() * g.out_plane();
  return std::clamp<Index>(kColBudget / std::max<Index>(per_image, 1), 1, g.batch);
}

}  // namespace

ConvGeometry make_conv_geometry(const Shape& input, const Shape& weight, Index stride, Index padding) {
  if (input.size() != 4 || weight.size() != 4) {
    throw ShapeError("conv2d expects 4-d input and weight, got input " + to_string(input) + " and weight " +
                     to_string(weight));
  }
  if (input[1] != weight[1]) {
    throw ShapeError("conv2d channel mismatch: input " + to_string(input) + " vs weight " + to_string(weight));
  }
  if (stride < 1 || padding < 0) throw ShapeError("conv2d requires stride >= 1 and padding >= 0");
  if (weight[2] % 2 == 0 || weight[3] % 2 == 0) {
    throw ShapeError("conv2d requires odd kernel extents, got weight " + to_string(weight));
  }
  ConvGeometry g;
  g.batch = input[0];
  g.in_channels = input[1];
  g.in_h = input[2];
  g.in_w = input[3];
  g.out_channels = weight[0];
  g.kernel_h = weight[2];
  g.kernel_w = weight[3];
  g.stride = stride;
  g.padding = padding;
  const Index span_h = g.in_h + 2 * padding - g.kernel_h;
  const Index span_w = g.in_w + 2 * padding - g.kernel_w;
  if (span_h < 0 || span_w < 0) {
    throw ShapeError("conv2d kernel larger than padded input: input " + to_string(input) + " vs weight " +
                     to_string(weight));
  }
  if (span_h % stride != 0 || span_w % stride != 0) {
    throw ShapeError("conv2d output extent is not exact for input " + to_string(input) + ", weight " +
                     to_string(weight) + ", stride " + std::to_string(stride));
  }
  g.out_h = span_h / stride + 1;
  g.out_w = span_w / stride + 1;
  return g;
}

template <typename T>
void gemm(Index m, Index n, Index k, const T* a, Index lda, const T* b, Index ldb, T* c, Index ldc) {
  constexpr Index P = kPanel<T>;
  const Index panels = (n + P - 1) / P;
#pragma omp parallel
  {
    std::vector<T> packed(static_cast<std::size_t>(k * P));
#pragma omp for schedule(static)
    for (Index panel = 0; panel < panels; ++panel) {
      const Index j0 = panel * P;
      const Index cols = std::min(P, n - j0);
      for (Index kk = 0; kk < k; ++kk) {
        const T* src = b + kk * ldb + j0;
        T* dst = packed.data() + kk * P;
        std::copy(src, src + cols, dst);
        std::fill(dst + cols, dst + P, T{0});
      }
      Index i = 0;
      for (; i + kRowBlock <= m; i += kRowBlock) {
        gemm_micro<T, kRowBlock>(k, a + i * lda, lda, packed.data(), c + i * ldc + j0, ldc, cols);
      }
      for (; i < m; ++i) gemm_micro<T, 1>(k, a + i * lda, lda, packed.data(), c + i * ldc + j0, ldc, cols);
    }
  }
}

template <typename T>
void conv2d_forward(const ConvGeometry& g, const T* input, const T* weight, const T* bias, T* output) {
  const Index plane = g.out_plane();
  const Index chunk = chunk_images(g);
  std::vector<T> col;
  std::vector<T> tmp;
  for (Index first = 0; first < g.batch; first += chunk) {
    const Index count = std::min(chunk, g.batch - first);
    const Index width = count * plane;
    col.resize(static_cast<std::size_t>(g.patch_size() * width));
    tmp.assign(static_cast<std::size_t>(g.out_channels * width), T{0});
    im2col(g, input, first, count, col.data());
    gemm(g.out_channels, width, g.patch_size(), weight, g.patch_size(), col.data(), width, tmp.data(), width);
#pragma omp parallel for schedule(static)
    for (Index o = 0; o < g.out_channels; ++o) {
      const T b = bias ? bias[o] : T{0};
      for (Index n = 0; n < count; ++n) {
        const T* src = tmp.data() + o * width + n * plane;
        T* dst = output + ((first + n) * g.out_channels + o) * plane;
        for (Index p = 0; p < plane; ++p) dst[p] = src[p] + b;
      }
    }
  }
}

template <typename T>
void conv2d_backward_input(const ConvGeometry& g, const T* weight, const T* grad_output, T* grad_input) {
  const Index plane = g.out_plane();
  const Index chunk = chunk_images(g);
  const Index patch = g.patch_size();
  std::vector<T> weight_t(static_cast<std::size_t>(patch * g.out_channels));
  transpose(g.out_channels, patch, weight, weight_t.data());
  std::vector<T> dy;
  std::vector<T> dcol;
  for (Index first = 0; first < g.batch; first += chunk) {
    const Index count = std::min(chunk, g.batch - first);
    const Index width = count * plane;
    dy.resize(static_cast<std::size_t>(g.out_channels * width));
    gather_channels(grad_output, g.out_channels, plane, first, count, dy.data());
    dcol.assign(static_cast<std::size_t>(patch * width), T{0});
    gemm(patch, width, g.out_channels, weight_t.data(), g.out_channels, dy.data(), width, dcol.data(), width);
    col2im_add(g, dcol.data(), first, count, grad_input);
  }
}

template <typename T>
void conv2d_backward_weight(const ConvGeometry& g, const T* input, const T* grad_output, T* grad_weight) {
  const Index plane = g.out_plane();
  const Index chunk = chunk_images(g);
  const Index patch = g.patch_size();
  std::vector<T> col;
  std::vector<T> dy;
  std::vector<T> dy_t;
  // dW^T[patch, O] = col[patch, width] * dy^T[width, O]
  std::vector<T> dw_t(static_cast<std::size_t>(patch * g.out_channels), T{0});
  for (Index first = 0; first < g.batch; first += chunk) {
    const Index count = std::min(chunk, g.batch - first);
    const Index width = count * plane;
    col.resize(static_cast<std::size_t>(patch * width));
    dy.resize(static_cast<std::size_t>(g.out_channels * width));
    dy_t.resize(dy.size());
    im2col(g, input, first, count, col.data());
    gather_channels(grad_output, g.out_channels, plane, first, count, dy.data());
    transpose(g.out_channels, width, dy.data(), dy_t.data());
    gemm(patch, g.out_channels, width, col.data(), width, dy_t.data(), g.out_channels, dw_t.data(), g.out_channels);
  }
#pragma omp parallel for schedule(static)
  for (Index o = 0; o < g.out_channels; ++o) {
    for (Index r = 0; r < patch; ++r) grad_weight[o * patch + r] += dw_t[r * g.out_channels + o];
  }
}

template <typename T>
void conv2d_backward_bias(const ConvGeometry& g, const T* grad_output, T* grad_bias) {
  const Index plane = g.out_plane();
#pragma omp parallel for schedule(static)
  for (Index o = 0; o < g.out_channels; ++o) {
    double s = 0;
    for (Index n = 0; n < g.batch; ++n) {
      const T* src = grad_output + (n * g.out_channels + o) * plane;
#pragma omp simd reduction(+ : s)
      for (Index p = 0; p < plane; ++p) s += src[p];
    }
    grad_bias[o] += static_cast<T>(s);
  }
}

template <typename T>
void channel_moments(const T* x, Index n, Index c, Index plane, double* mean, double* var) {
  const double count = static_cast<double>(n * plane);
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < c; ++ch) {
    double s = 0;
    for (Index i = 0; i < n; ++i) {
      const T* src = x + (i * c + ch) * plane;
#pragma omp simd reduction(+ : s)
      for (Index p = 0; p < plane; ++p) s += src[p];
    }
    const double mu = s / count;
    double ss = 0;
    for (Index i = 0; i < n; ++i) {
      const T* src = x + (i * c + ch) * plane;
#pragma omp simd reduction(+ : ss)
      for (Index p = 0; p < plane; ++p) {
        const double d = src[p] - mu;
        ss += d * d;
      }
    }
    mean[ch] = mu;
    var[ch] = ss / count;
  }
}

template <typename T>
void channel_affine(const T* x, Index n, Index c, Index plane, const T* scale, const T* shift, T* y) {
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const T a = scale[ch];
      const T b = shift[ch];
      const T* src = x + (i * c + ch) * plane;
      T* dst = y + (i * c + ch) * plane;
#pragma omp simd
      for (Index p = 0; p < plane; ++p) dst[p] = a * src[p] + b;
    }
  }
}

template <typename T>
void batchnorm_backward_train(const T* grad_out, const T* xhat, const T* gamma, const T* inv_std, Index n, Index c,
                              Index plane, T* grad_in, T* grad_gamma, T* grad_beta) {
  const double count = static_cast<double>(n * plane);
#pragma omp parallel for schedule(static)
  for (Index ch = 0; ch < c; ++ch) {
    double sum_dy = 0;
    double sum_dy_xhat = 0;
    for (Index i = 0; i < n; ++i) {
      const Index off = (i * c + ch) * plane;
#pragma omp simd reduction(+ : sum_dy, sum_dy_xhat)
      for (Index p = 0; p < plane; ++p) {
        sum_dy += grad_out[off + p];
        sum_dy_xhat += static_cast<double>(grad_out[off + p]) * xhat[off + p];
      }
    }
    if (grad_gamma) grad_gamma[ch] += static_cast<T>(sum_dy_xhat);
    if (grad_beta) grad_beta[ch] += static_cast<T>(sum_dy);
    if (!grad_in) continue;
    const double k = static_cast<double>(gamma[ch]) * inv_std[ch] / count;
    for (Index i = 0; i < n; ++i) {
      const Index off = (i * c + ch) * plane;
      for (Index p = 0; p < plane; ++p) {
        grad_in[off + p] +=
            static_cast<T>(k * (count * grad_out[off + p] - sum_dy - xhat[off + p] * sum_dy_xhat));
      }
    }
  }
}

template <typename T>
void avgpool2x2_forward(const T* x, Index planes, Index h, Index w, T* y) {
  const Index oh = h / 2;
  const Index ow = w / 2;
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < planes; ++p) {
    const T* src = x + p * h * w;
    T* dst = y + p * oh * ow;
    for (Index i = 0; i < oh; ++i) {
      const T* r0 = src + (2 * i) * w;
      const T* r1 = r0 + w;
      for (Index j = 0; j < ow; ++j) {
        dst[i * ow + j] = (r0[2 * j] + r0[2 * j + 1] + r1[2 * j] + r1[2 * j + 1]) * T(0.25);
      }
    }
  }
}

template <typename T>
void avgpool2x2_backward(const T* grad_out, Index planes, Index h, Index w, T* grad_in) {
  const Index oh = h / 2;
  const Index ow = w / 2;
#pragma omp parallel for schedule(static)
  for (Index p = 0; p < planes; ++p) {
    const T* src = grad_out + p * oh * ow;
    T* dst = grad_in + p * h * w;
    for (Index i = 0; i < oh; ++i) {
      T* r0 = dst + (2 * i) * w;
      T* r1 = r0 + w;
      for (Index j = 0; j < ow; ++j) {
        const T gq = src[i * ow + j] * T(0.25);
        r0[2 * j] += gq;
        r0[2 * j + 1] += gq;
        r1[2 * j] += gq;
        r1[2 * j + 1] += gq;
      }
    }
  }
}

template <typename T>
void invpool_forward(const T* x, Index n, Index c, Index h, Index w, T* y) {
  const Index oh = h / 2;
  const Index ow = w / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      const T* src = x + (i * c + ch) * h * w;
      for (Index k = 0; k < 4; ++k) {
        const Index di = k / 2;
        const Index dj = k % 2;
        T* dst = y + ((i * c + ch) * 4 + k) * oh * ow;
        for (Index r = 0; r < oh; ++r) {
          for (Index s = 0; s < ow; ++s) dst[r * ow + s] = src[(2 * r + di) * w + 2 * s + dj];
        }
      }
    }
  }
}

template <typename T>
void invpool_inverse(const T* y, Index n, Index c, Index h, Index w, T* x) {
  const Index oh = h / 2;
  const Index ow = w / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (Index i = 0; i < n; ++i) {
    for (Index ch = 0; ch < c; ++ch) {
      T* dst = x + (i * c + ch) * h * w;
      for (Index k = 0; k < 4; ++k) {
        const Index di = k / 2;
        const Index dj = k % 2;
        const T* src = y + ((i * c + ch) * 4 + k) * oh * ow;
        for (Index r = 0; r < oh; ++r) {
          for (Index s = 0; s < ow; ++s) dst[(2 * r + di) * w + 2 * s + dj] = src[r * ow + s];
        }
      }
    }
  }
}

template <typename T>
void relu_forward(const T* x, Index count, T* y) {
#pragma omp parallel for simd schedule(static) if (count > 65536)
  for (Index i = 0; i < count; ++i) y[i] = x[i] > T{0} ? x[i] : T{0};
}

template <typename T>
void relu_backward(const T* grad_out, const T* x, Index count, T* grad_in) {
#pragma omp parallel for simd schedule(static) if (count > 65536)
  for (Index i = 0; i < count; ++i) grad_in[i] += x[i] > T{0} ? grad_out[i] : T{0};
}

template <typename T>
void axpy(Index count, T alpha, const T* x, T* y) {
#pragma omp parallel for simd schedule(static) if (count > 65536)
  for (Index i = 0; i < count; ++i) y[i] += alpha * x[i];
}

#define RCNET_INSTANTIATE_KERNELS(T)                                                                             \
  template void gemm<T>(Index, Index, Index, const T*, Index, const T*, Index, T*, Index);                    \
  template void conv2d_forward<T>(const ConvGeometry&, const T*, const T*, const T*, T*);                     \
  template void conv2d_backward_input<T>(const ConvGeometry&, const T*, const T*, T*);                        \
  template void conv2d_backward_weight<T>(const ConvGeometry&, const T*, const T*, T*);                       \
  template void conv2d_backward_bias<T>(const ConvGeometry&, const T*, T*);                                   \
  template void channel_moments<T>(const T*, Index, Index, Index, double*, double*);                          \
  template void channel_affine<T>(const T*, Index, Index, Index, const T*, const T*, T*);                     \
  template void batchnorm_backward_train<T>(const T*, const T*, const T*, const T*, Index, Index, Index, T*,  \
                                            T*, T*);                                                          \
  template void avgpool2x2_forward<T>(const T*, Index, Index, Index, T*);                                     \
  template void avgpool2x2_backward<T>(const T*, Index, Index, Index, T*);                                    \
  template void invpool_forward<T>(const T*, Index, Index, Index, Index, T*);                                 \
  template void invpool_inverse<T>(const T*, Index, Index, Index, Index, T*);                                 \
  template void relu_forward<T>(const T*, Index, T*);                                                         \
  template void relu_backward<T>(const T*, const T*, Index, T*);                                              \
  template void axpy<T>(Index, T, const T*, T*);

RCNET_INSTANTIATE_KERNELS(float)
RCNET_INSTANTIATE_KERNELS(double)

#undef RCNET_INSTANTIATE_KERNELS

}  // namespace rcnet::kernels
