#pragma once

#include <cstdint>
#include <string>

#include "rcnet/tensor.hpp"

namespace rcnet {

// A trainable tensor with its gradient accumulator and momentum buffer.
// Shared parameters (convolutions reused across unroll steps) train at a
// reduced learning-rate scale.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> momentum;
  bool is_shared = false;
  T lr_scale = T{1};

  Parameter() = default;
  Parameter(std::string name_, Tensor<T> value_, bool shared = false, T scale = T{1})
      : name(std::move(name_)),
        value(std::move(value_)),
        grad(value.shape()),
        momentum(value.shape()),
        is_shared(shared) {
    set_lr_scale(scale);
  }

  void set_lr_scale(T scale) {
    if (!(scale > T{0} && scale <= T{1})) {
      throw std::invalid_argument("lr_scale must lie in (0, 1], got " + std::to_string(scale));
    }
    lr_scale = scale;
  }

  void zero_grad() { grad.zero(); }
  Index size() const { return value.size(); }
};

enum class Mode { kTrain, kEval };

struct BnConfig {
  double eps = 1e-5;
  double momentum = 0.1;
};

// gamma/beta plus running statistics for one BN layer instance. The counters
// are an audit trail: how often the group normalized a batch, and how often
// its running statistics moved.
template <typename T>
struct BnGroup {
  std::string name;
  Index channels = 0;
  Parameter<T> gamma;
  Parameter<T> beta;
  Tensor<T> running_mean;
  Tensor<T> running_var;
  std::uint64_t forward_count = 0;
  std::uint64_t stat_updates = 0;

  BnGroup() = default;
  BnGroup(Index c, const std::string& prefix)
      : name(prefix),
        channels(c),
        gamma(prefix + ".gamma", Tensor<T>({c}, T{1})),
        beta(prefix + ".beta", Tensor<T>({c}, T{0})),
        running_mean({c}, T{0}),
        running_var({c}, T{1}) {}

  void reset_audit() {
    forward_count = 0;
    stat_updates = 0;
  }
};

}  // namespace rcnet
