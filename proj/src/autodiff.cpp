#include "rcnet/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

#include "rcnet/kernels.hpp"

namespace rcnet {

template <typename T>
Var Graph<T>::input(Tensor<T> value, bool requires_grad) {
  Node n;
  n.op = "input";
  n.value = std::move(value);
  n.requires_grad = requires_grad && grad_enabled_;
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Var Graph<T>::parameter(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{it->second};
  Node n;
  n.op = "parameter";
  n.value = p.value;
  n.requires_grad = grad_enabled_;
  n.param = &p;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  return Var{id};
}

template <typename T>
Var Graph<T>::record(std::string_view op, Tensor<T> value, std::initializer_list<Var> inputs, BackwardFn fn) {
  Node n;
  n.op = op;
  n.value = std::move(value);
  if (grad_enabled_) {
    n.requires_grad = std::any_of(inputs.begin(), inputs.end(), [&](Var v) { return node(v).requires_grad; });
    if (n.requires_grad) n.backward = std::move(fn);
  }
  nodes_.push_back(std::move(n));
  return Var{static_cast<int>(nodes_.size()) - 1};
}

template <typename T>
Tensor<T>& Graph<T>::grad_buffer(Var v) {
  Node& n = node(v);
  if (n.grad.empty()) n.grad = Tensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::backward(Var loss) {
  if (node(loss).value.size() != 1) {
    throw ShapeError("backward requires a scalar loss, got shape " + to_string(node(loss).value.shape()));
  }
  if (!node(loss).requires_grad) return;
  grad_buffer(loss)[0] = T{1};
  for (int i = loss.id; i >= 0; --i) {
    Node& n = nodes_[static_cast<std::size_t>(i)];
    if (!n.requires_grad || n.grad.empty() || !n.backward) continue;
    n.backward(*this, n.grad);
  }
  for (auto& n : nodes_) {
    if (n.param != nullptr && !n.grad.empty()) n.param->grad.add_(n.grad);
  }
}

// ---- ops --------------------------------------------------------------------

namespace {

void require_rank(const Shape& s, std::size_t rank, const char* op) {
  if (s.size() != rank) {
    throw ShapeError(std::string(op) + " expects a rank-" + std::to_string(rank) + " tensor, got " + to_string(s));
  }
}

void require_even_spatial(const Shape& s, const char* op) {
  require_rank(s, 4, op);
  if (s[2] % 2 != 0 || s[3] % 2 != 0) {
    throw ShapeError(std::string(op) + " requires even spatial extents, got " + to_string(s));
  }
}

}  // namespace

template <typename T>
Var conv2d(Graph<T>& g, Var input, Var weight, std::optional<Var> bias, Index stride, Index padding) {
  const auto geom = kernels::make_conv_geometry(g.value(input).shape(), g.value(weight).shape(), stride, padding);
  if (bias && g.value(*bias).shape() != Shape{geom.out_channels}) {
    throw ShapeError("conv2d bias shape " + to_string(g.value(*bias).shape()) + " does not match weight " +
                     to_string(g.value(weight).shape()));
  }
  Tensor<T> out({geom.batch, geom.out_channels, geom.out_h, geom.out_w});
  kernels::conv2d_forward(geom, g.value(input).data(), g.value(weight).data(),
                          bias ? g.value(*bias).data() : static_cast<const T*>(nullptr), out.data());
  const Var b = bias.value_or(Var{});
  auto backward = [geom, input, weight, b](Graph<T>& gr, const Tensor<T>& dy) {
    if (gr.requires_grad(input)) {
      kernels::conv2d_backward_input(geom, gr.value(weight).data(), dy.data(), gr.grad_buffer(input).data());
    }
    if (gr.requires_grad(weight)) {
      kernels::conv2d_backward_weight(geom, gr.value(input).data(), dy.data(), gr.grad_buffer(weight).data());
    }
    if (b.valid() && gr.requires_grad(b)) kernels::conv2d_backward_bias(geom, dy.data(), gr.grad_buffer(b).data());
  };
  if (bias) return g.record("conv2d", std::move(out), {input, weight, *bias}, std::move(backward));
  return g.record("conv2d", std::move(out), {input, weight}, std::move(backward));
}

template <typename T>
Var batchnorm2d(Graph<T>& g, Var input, BnGroup<T>& group, Mode mode, bool update_running_stats,
                const BnConfig& config) {
  const Tensor<T>& x = g.value(input);
  require_rank(x.shape(), 4, "batchnorm2d");
  const Index n = x.dim(0);
  const Index c = x.dim(1);
  const Index plane = x.dim(2) * x.dim(3);
  if (c != group.channels) {
    throw ShapeError("batchnorm2d channel mismatch: input " + to_string(x.shape()) + " vs group of " +
                     std::to_string(group.channels) + " channels");
  }
  ++group.forward_count;
  const Var gamma = g.parameter(group.gamma);
  const Var beta = g.parameter(group.beta);
  const T* gamma_v = group.gamma.value.data();
  const T* beta_v = group.beta.value.data();
  Tensor<T> out(x.shape());
  Tensor<T> inv_std({c});
  Tensor<T> xhat(x.shape());

  if (mode == Mode::kTrain) {
    if (n * plane < 2) {
      throw ShapeError("batchnorm2d in train mode needs more than one value per channel, got " + to_string(x.shape()));
    }
    std::vector<double> mean(static_cast<std::size_t>(c));
    std::vector<double> var(static_cast<std::size_t>(c));
    kernels::channel_moments(x.data(), n, c, plane, mean.data(), var.data());
    Tensor<T> shift({c});
    for (Index ch = 0; ch < c; ++ch) {
      const double is = 1.0 / std::sqrt(var[static_cast<std::size_t>(ch)] + config.eps);
      inv_std[ch] = static_cast<T>(is);
      shift[ch] = static_cast<T>(-mean[static_cast<std::size_t>(ch)] * is);
    }
    kernels::channel_affine(x.data(), n, c, plane, inv_std.data(), shift.data(), xhat.data());
    kernels::channel_affine(xhat.data(), n, c, plane, gamma_v, beta_v, out.data());
    if (update_running_stats) {
      const T m = static_cast<T>(config.momentum);
      for (Index ch = 0; ch < c; ++ch) {
        group.running_mean[ch] = (T{1} - m) * group.running_mean[ch] + m * static_cast<T>(mean[static_cast<std::size_t>(ch)]);
        group.running_var[ch] = (T{1} - m) * group.running_var[ch] + m * static_cast<T>(var[static_cast<std::size_t>(ch)]);
      }
      ++group.stat_updates;
    }
    return g.record("batchnorm2d", std::move(out), {input, gamma, beta},
                    [input, gamma, beta, n, c, plane, xhat = std::move(xhat), inv_std = std::move(inv_std)](
                        Graph<T>& gr, const Tensor<T>& dy) {
                      T* dx = gr.requires_grad(input) ? gr.grad_buffer(input).data() : nullptr;
                      kernels::batchnorm_backward_train(dy.data(), xhat.data(), gr.value(gamma).data(), inv_std.data(),
                                                        n, c, plane, dx, gr.grad_buffer(gamma).data(),
                                                        gr.grad_buffer(beta).data());
                    });
  }

  // Eval: affine map with frozen statistics.
  Tensor<T> shift({c});
  Tensor<T> mul({c});
  for (Index ch = 0; ch < c; ++ch) {
    const double is = 1.0 / std::sqrt(static_cast<double>(group.running_var[ch]) + config.eps);
    inv_std[ch] = static_cast<T>(is);
    shift[ch] = static_cast<T>(-static_cast<double>(group.running_mean[ch]) * is);
  }
  kernels::channel_affine(x.data(), n, c, plane, inv_std.data(), shift.data(), xhat.data());
  kernels::channel_affine(xhat.data(), n, c, plane, gamma_v, beta_v, out.data());
  for (Index ch = 0; ch < c; ++ch) mul[ch] = gamma_v[ch] * inv_std[ch];
  return g.record("batchnorm2d_eval", std::move(out), {input, gamma, beta},
                  [input, gamma, beta, n, c, plane, xhat = std::move(xhat), mul = std::move(mul)](
                      Graph<T>& gr, const Tensor<T>& dy) {
                    T* dx = gr.requires_grad(input) ? gr.grad_buffer(input).data() : nullptr;
                    T* dgamma = gr.grad_buffer(gamma).data();
                    T* dbeta = gr.grad_buffer(beta).data();
                    for (Index ch = 0; ch < c; ++ch) {
                      double sum_dy = 0;
                      double sum_dy_xhat = 0;
                      for (Index i = 0; i < n; ++i) {
                        const Index off = (i * c + ch) * plane;
                        for (Index p = 0; p < plane; ++p) {
                          sum_dy += dy[off + p];
                          sum_dy_xhat += static_cast<double>(dy[off + p]) * xhat[off + p];
                          if (dx) dx[off + p] += mul[ch] * dy[off + p];
                        }
                      }
                      dgamma[ch] += static_cast<T>(sum_dy_xhat);
                      dbeta[ch] += static_cast<T>(sum_dy);
                    }
                  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  const Tensor<T>& xv = g.value(x);
  Tensor<T> out(xv.shape());
  kernels::relu_forward(xv.data(), xv.size(), out.data());
  return g.record("relu", std::move(out), {x}, [x](Graph<T>& gr, const Tensor<T>& dy) {
    kernels::relu_backward(dy.data(), gr.value(x).data(), dy.size(), gr.grad_buffer(x).data());
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  check_same_shape(g.value(a).shape(), g.value(b).shape(), "add");
  Tensor<T> out = g.value(a);
  out.add_(g.value(b));
  return g.record("add", std::move(out), {a, b}, [a, b](Graph<T>& gr, const Tensor<T>& dy) {
    if (gr.requires_grad(a)) gr.grad_buffer(a).add_(dy);
    if (gr.requires_grad(b)) gr.grad_buffer(b).add_(dy);
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> out(g.value(x).shape());
  kernels::axpy(out.size(), factor, g.value(x).data(), out.data());
  return g.record("scale", std::move(out), {x}, [x, factor](Graph<T>& gr, const Tensor<T>& dy) {
    kernels::axpy(dy.size(), factor, dy.data(), gr.grad_buffer(x).data());
  });
}

template <typename T>
Var avgpool2d(Graph<T>& g, Var x) {
  const Shape& s = g.value(x).shape();
  require_even_spatial(s, "avgpool2d");
  Tensor<T> out({s[0], s[1], s[2] / 2, s[3] / 2});
  kernels::avgpool2x2_forward(g.value(x).data(), s[0] * s[1], s[2], s[3], out.data());
  return g.record("avgpool2d", std::move(out), {x}, [x, s](Graph<T>& gr, const Tensor<T>& dy) {
    kernels::avgpool2x2_backward(dy.data(), s[0] * s[1], s[2], s[3], gr.grad_buffer(x).data());
  });
}

template <typename T>
Var global_avgpool(Graph<T>& g, Var x) {
  const Shape& s = g.value(x).shape();
  require_rank(s, 4, "global_avgpool");
  const Index planes = s[0] * s[1];
  const Index plane = s[2] * s[3];
  Tensor<T> out({s[0], s[1]});
  const T* src = g.value(x).data();
  for (Index p = 0; p < planes; ++p) {
    double acc = 0;
    for (Index i = 0; i < plane; ++i) acc += src[p * plane + i];
    out[p] = static_cast<T>(acc / static_cast<double>(plane));
  }
  return g.record("global_avgpool", std::move(out), {x}, [x, planes, plane](Graph<T>& gr, const Tensor<T>& dy) {
    T* dx = gr.grad_buffer(x).data();
    const T inv = T{1} / static_cast<T>(plane);
    for (Index p = 0; p < planes; ++p) {
      const T gq = dy[p] * inv;
      for (Index i = 0; i < plane; ++i) dx[p * plane + i] += gq;
    }
  });
}

template <typename T>
Var linear(Graph<T>& g, Var x, Var weight, Var bias) {
  const Shape& xs = g.value(x).shape();
  const Shape& ws = g.value(weight).shape();
  require_rank(xs, 2, "linear input");
  require_rank(ws, 2, "linear weight");
  if (xs[1] != ws[1] || g.value(bias).shape() != Shape{ws[0]}) {
    throw ShapeError("linear shape mismatch: input " + to_string(xs) + " vs weight " + to_string(ws) + " and bias " +
                     to_string(g.value(bias).shape()));
  }
  const Index n = xs[0];
  const Index d = xs[1];
  const Index k = ws[0];
  Tensor<T> out({n, k});
  for (Index i = 0; i < n; ++i)
    for (Index j = 0; j < k; ++j) out[i * k + j] = g.value(bias)[j];
  Tensor<T> weight_t({d, k});
  for (Index j = 0; j < k; ++j)
    for (Index i = 0; i < d; ++i) weight_t[i * k + j] = g.value(weight)[j * d + i];
  kernels::gemm(n, k, d, g.value(x).data(), d, weight_t.data(), k, out.data(), k);
  return g.record("linear", std::move(out), {x, weight, bias},
                  [x, weight, bias, n, d, k](Graph<T>& gr, const Tensor<T>& dy) {
                    if (gr.requires_grad(x)) {
                      kernels::gemm(n, d, k, dy.data(), k, gr.value(weight).data(), d, gr.grad_buffer(x).data(), d);
                    }
                    if (gr.requires_grad(weight)) {
                      Tensor<T> dy_t({k, n});
                      for (Index i = 0; i < n; ++i)
                        for (Index j = 0; j < k; ++j) dy_t[j * n + i] = dy[i * k + j];
                      kernels::gemm(k, d, n, dy_t.data(), n, gr.value(x).data(), d, gr.grad_buffer(weight).data(), d);
                    }
                    if (gr.requires_grad(bias)) {
                      T* db = gr.grad_buffer(bias).data();
                      for (Index j = 0; j < k; ++j) {
                        double s = 0;
                        for (Index i = 0; i < n; ++i) s += dy[i * k + j];
                        db[j] += static_cast<T>(s);
                      }
                    }
                  });
}

template <typename T>
Var invpool(Graph<T>& g, Var x) {
  const Shape s = g.value(x).shape();
  require_even_spatial(s, "invpool");
  Tensor<T> out({s[0], s[1] * 4, s[2] / 2, s[3] / 2});
  kernels::invpool_forward(g.value(x).data(), s[0], s[1], s[2], s[3], out.data());
  return g.record("invpool", std::move(out), {x}, [x, s](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T> dx(s);
    kernels::invpool_inverse(dy.data(), s[0], s[1], s[2], s[3], dx.data());
    gr.grad_buffer(x).add_(dx);
  });
}

template <typename T>
Var invpool_inverse(Graph<T>& g, Var x) {
  const Shape s = g.value(x).shape();
  require_rank(s, 4, "invpool_inverse");
  if (s[1] % 4 != 0) throw ShapeError("invpool_inverse needs a channel count divisible by 4, got " + to_string(s));
  const Shape out_shape{s[0], s[1] / 4, s[2] * 2, s[3] * 2};
  Tensor<T> out(out_shape);
  kernels::invpool_inverse(g.value(x).data(), out_shape[0], out_shape[1], out_shape[2], out_shape[3], out.data());
  return g.record("invpool_inverse", std::move(out), {x}, [x, out_shape](Graph<T>& gr, const Tensor<T>& dy) {
    Tensor<T> dx(gr.value(x).shape());
    kernels::invpool_forward(dy.data(), out_shape[0], out_shape[1], out_shape[2], out_shape[3], dx.data());
    gr.grad_buffer(x).add_(dx);
  });
}

template <typename T>
Var softmax_cross_entropy(Graph<T>& g, Var logits, std::span<const int> labels) {
  const Shape& s = g.value(logits).shape();
  require_rank(s, 2, "softmax_cross_entropy");
  const Index n = s[0];
  const Index k = s[1];
  if (static_cast<Index>(labels.size()) != n) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + to_string(s));
  }
  Tensor<T> probs(s);
  double total = 0;
  const T* z = g.value(logits).data();
  for (Index i = 0; i < n; ++i) {
    const int label = labels[static_cast<std::size_t>(i)];
    if (label < 0 || label >= k) {
      throw std::out_of_range("label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
    }
    const T* row = z + i * k;
    const double mx = *std::max_element(row, row + k);
    double denom = 0;
    for (Index j = 0; j < k; ++j) denom += std::exp(static_cast<double>(row[j]) - mx);
    for (Index j = 0; j < k; ++j) probs[i * k + j] = static_cast<T>(std::exp(static_cast<double>(row[j]) - mx) / denom);
    total += mx + std::log(denom) - static_cast<double>(row[label]);
  }
  Tensor<T> out({1}, static_cast<T>(total / static_cast<double>(n)));
  std::vector<int> lab(labels.begin(), labels.end());
  return g.record("softmax_cross_entropy", std::move(out), {logits},
                  [logits, n, k, probs = std::move(probs), lab = std::move(lab)](Graph<T>& gr, const Tensor<T>& dy) {
                    T* dz = gr.grad_buffer(logits).data();
                    const T sc = dy[0] / static_cast<T>(n);
                    for (Index i = 0; i < n; ++i) {
                      for (Index j = 0; j < k; ++j) {
                        const T onehot = (j == lab[static_cast<std::size_t>(i)]) ? T{1} : T{0};
                        dz[i * k + j] += sc * (probs[i * k + j] - onehot);
                      }
                    }
                  });
}

template <typename T>
Var mse_loss(Graph<T>& g, Var pred, const Tensor<T>& target) {
  check_same_shape(g.value(pred).shape(), target.shape(), "mse_loss");
  const Tensor<T>& p = g.value(pred);
  Tensor<T> diff(p.shape());
  double acc = 0;
  for (Index i = 0; i < p.size(); ++i) {
    diff[i] = p[i] - target[i];
    acc += static_cast<double>(diff[i]) * diff[i];
  }
  const Index count = p.size();
  Tensor<T> out({1}, static_cast<T>(acc / static_cast<double>(count)));
  return g.record("mse_loss", std::move(out), {pred},
                  [pred, count, diff = std::move(diff)](Graph<T>& gr, const Tensor<T>& dy) {
                    kernels::axpy(count, T{2} * dy[0] / static_cast<T>(count), diff.data(),
                                  gr.grad_buffer(pred).data());
                  });
}

template <typename T>
Var weighted_sum(Graph<T>& g, Var x, const Tensor<T>& weights) {
  check_same_shape(g.value(x).shape(), weights.shape(), "weighted_sum");
  double acc = 0;
  for (Index i = 0; i < weights.size(); ++i) acc += static_cast<double>(g.value(x)[i]) * weights[i];
  Tensor<T> out({1}, static_cast<T>(acc));
  return g.record("weighted_sum", std::move(out), {x}, [x, weights](Graph<T>& gr, const Tensor<T>& dy) {
    kernels::axpy(weights.size(), dy[0], weights.data(), gr.grad_buffer(x).data());
  });
}

template class Graph<float>;
template class Graph<double>;

#define RCNET_INSTANTIATE_OPS(T)                                                                         \
  template Var conv2d<T>(Graph<T>&, Var, Var, std::optional<Var>, Index, Index);                       \
  template Var batchnorm2d<T>(Graph<T>&, Var, BnGroup<T>&, Mode, bool, const BnConfig&);               \
  template Var relu<T>(Graph<T>&, Var);                                                                \
  template Var add<T>(Graph<T>&, Var, Var);                                                            \
  template Var scale<T>(Graph<T>&, Var, T);                                                            \
  template Var avgpool2d<T>(Graph<T>&, Var);                                                           \
  template Var global_avgpool<T>(Graph<T>&, Var);                                                      \
  template Var linear<T>(Graph<T>&, Var, Var, Var);                                                    \
  template Var invpool<T>(Graph<T>&, Var);                                                             \
  template Var invpool_inverse<T>(Graph<T>&, Var);                                                     \
  template Var softmax_cross_entropy<T>(Graph<T>&, Var, std::span<const int>);                         \
  template Var mse_loss<T>(Graph<T>&, Var, const Tensor<T>&);                                          \
  template Var weighted_sum<T>(Graph<T>&, Var, const Tensor<T>&);

RCNET_INSTANTIATE_OPS(float)
RCNET_INSTANTIATE_OPS(double)

}  // namespace rcnet
