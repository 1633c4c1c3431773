#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "rcnet/autodiff.hpp"
#include "rcnet/parameter.hpp"

namespace rcnet {

enum class CellKind { kPreactResblock, kConvBnRelu };

const char* to_string(CellKind kind);
int bn_slots(CellKind kind);
int convs_per_body(CellKind kind);

struct ForwardContext {
  Mode mode = Mode::kTrain;
  // Train mode only: false normalizes with batch statistics but leaves the
  // running statistics untouched.
  bool update_running_stats = true;
  BnConfig bn;
};

// He-normal initialization: N(0, 2 / fan_in).
template <typename T>
Tensor<T> he_normal(Shape shape, Index fan_in, std::mt19937_64& rng);

// The convolutional body of an RC cell. Input and output channel counts are
// equal so the body can be applied to its own output.
template <typename T>
struct CellBody {
  CellKind kind = CellKind::kPreactResblock;
  Index channels = 0;
  std::vector<Parameter<T>> convs;

  CellBody() = default;
  CellBody(CellKind kind, Index channels, const std::string& prefix, std::mt19937_64& rng, bool shared = true);

  int bn_slots() const { return rcnet::bn_slots(kind); }
};

// One application of the body with the given BN groups:
//   preact_resblock: x + conv2(relu(bn2(conv1(relu(bn1(x))))))
//   conv_bn_relu:    relu(bn(conv(x)))
// An empty group list runs the body without normalization.
template <typename T>
Var run_cell_body(Graph<T>& g, CellBody<T>& body, Var x, std::span<BnGroup<T>* const> groups,
                  const ForwardContext& ctx);

// Single 3x3 convolution, no bias.
template <typename T>
struct Stem {
  Parameter<T> weight;

  Stem() = default;
  Stem(Index in_channels, Index out_channels, std::mt19937_64& rng);
  Var forward(Graph<T>& g, Var x) { return conv2d(g, x, g.parameter(weight), std::nullopt, 1, 1); }
};

// BN -> ReLU -> global average pool -> linear. The BN group is chosen by the caller.
template <typename T>
struct ClassifierHead {
  Parameter<T> weight;
  Parameter<T> bias;

  ClassifierHead() = default;
  ClassifierHead(Index channels, Index num_classes, std::mt19937_64& rng);
  Var forward(Graph<T>& g, Var x, BnGroup<T>* bn, const ForwardContext& ctx);
};

// 3x3 convolution back to image channels, no bias.
template <typename T>
struct DenoiseHead {
  Parameter<T> weight;

  DenoiseHead() = default;
  DenoiseHead(Index channels, Index image_channels, std::mt19937_64& rng);
  Var forward(Graph<T>& g, Var x) { return conv2d(g, x, g.parameter(weight), std::nullopt, 1, 1); }
};

}  // namespace rcnet
