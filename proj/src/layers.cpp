#include "rcnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace rcnet {

const char* to_string(CellKind kind) {
  switch (kind) {
    case CellKind::kPreactResblock: return "preact_resblock";
    case CellKind::kConvBnRelu: return "conv_bn_relu";
  }
  return "?";
}

int bn_slots(CellKind kind) { return kind == CellKind::kPreactResblock ? 2 : 1; }
int convs_per_body(CellKind kind) { return kind == CellKind::kPreactResblock ? 2 : 1; }

template <typename T>
Tensor<T> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng) {
  Tensor<T> t(std::move(shape));
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / static_cast<double>(fan_in)));
  for (T& v : t.values()) v = static_cast<T>(dist(rng));
  return t;
}

template <typename T>
CellBody<T>::CellBody(CellKind kind_, Index channels_, const std::string& prefix, std::mt19937_64& rng, bool shared)
    : kind(kind_), channels(channels_) {
  const int n = convs_per_body(kind);
  convs.reserve(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    convs.emplace_back(prefix + ".conv" + std::to_string(i + 1) + ".weight",
                       he_normal<T>({channels, channels, 3, 3}, channels * 9, rng), shared,
                       shared ? T(0.5) : T{1});
  }
}

template <typename T>
Var run_cell_body(Graph<T>& g, CellBody<T>& body, Var x, std::span<BnGroup<T>* const> groups,
                  const ForwardContext& ctx) {
  const bool use_bn = !groups.empty();
  if (use_bn && static_cast<int>(groups.size()) != body.bn_slots()) {
    throw std::invalid_argument("run_cell_body: " + std::string(to_string(body.kind)) + " needs " +
                                std::to_string(body.bn_slots()) + " BN groups, got " + std::to_string(groups.size()));
  }
  for (std::size_t i = 0; i < groups.size(); ++i) {
    for (std::size_t j = i + 1; j < groups.size(); ++j) {
      if (groups[i] == groups[j]) throw std::logic_error("run_cell_body: BN group reused within one traversal");
    }
  }
  const Shape in_shape = g.value(x).shape();
  if (in_shape.size() != 4 || in_shape[1] != body.channels) {
    throw ShapeError("run_cell_body: input " + to_string(in_shape) + " does not have " +
                     std::to_string(body.channels) + " channels");
  }
  auto norm = [&](Var v, int slot) {
    if (!use_bn) return v;
    return batchnorm2d(g, v, *groups[static_cast<std::size_t>(slot)], ctx.mode, ctx.update_running_stats, ctx.bn);
  };
  auto conv = [&](Var v, int i) {
    return conv2d(g, v, g.parameter(body.convs[static_cast<std::size_t>(i)]), std::nullopt, 1, 1);
  };
  if (body.kind == CellKind::kConvBnRelu) return relu(g, norm(conv(x, 0), 0));
  Var h = conv(relu(g, norm(x, 0)), 0);
  h = conv(relu(g, norm(h, 1)), 1);
  return add(g, x, h);
}

template <typename T>
Stem<T>::Stem(Index in_channels, Index out_channels, std::mt19937_64& rng)
    : weight("stem.weight", he_normal<T>({out_channels, in_channels, 3, 3}, in_channels * 9, rng)) {}

template <typename T>
ClassifierHead<T>::ClassifierHead(Index channels, Index num_classes, std::mt19937_64& rng)
    : weight("head.linear.weight", he_normal<T>({num_classes, channels}, channels, rng)),
      bias("head.linear.bias", Tensor<T>({num_classes})) {}

template <typename T>
Var ClassifierHead<T>::forward(Graph<T>& g, Var x, BnGroup<T>* bn, const ForwardContext& ctx) {
  Var h = x;
  if (bn != nullptr) h = batchnorm2d(g, h, *bn, ctx.mode, ctx.update_running_stats, ctx.bn);
  h = global_avgpool(g, relu(g, h));
  return linear(g, h, g.parameter(weight), g.parameter(bias));
}

template <typename T>
DenoiseHead<T>::DenoiseHead(Index channels, Index image_channels, std::mt19937_64& rng)
    : weight("head.conv.weight", he_normal<T>({image_channels, channels, 3, 3}, channels * 9, rng)) {}

template Tensor<float> he_normal<float>(Shape, Index, std::mt19937_64&);
template Tensor<double> he_normal<double>(Shape, Index, std::mt19937_64&);
template struct CellBody<float>;
template struct CellBody<double>;
template Var run_cell_body<float>(Graph<float>&, CellBody<float>&, Var, std::span<BnGroup<float>* const>,
                                  const ForwardContext&);
template Var run_cell_body<double>(Graph<double>&, CellBody<double>&, Var, std::span<BnGroup<double>* const>,
                                   const ForwardContext&);
template struct Stem<float>;
template struct Stem<double>;
template struct ClassifierHead<float>;
template struct ClassifierHead<double>;
template struct DenoiseHead<float>;
template struct DenoiseHead<double>;

}  // namespace rcnet
