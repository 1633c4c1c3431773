#pragma once

#include <span>

#include "rcnet/parameter.hpp"

namespace rcnet {

struct SgdOptions {
  double lr = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
};

// buf = momentum * buf + (grad + weight_decay * w);  w -= lr * lr_scale * buf
// With momentum 0 the buffer is bypassed.
template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, const SgdOptions& options);

template <typename T>
double global_grad_norm(std::span<Parameter<T>* const> params);

// Rescales all gradients jointly when their global L2 norm exceeds max_norm.
// Returns the pre-clip norm. A norm within 1e-7 * max_norm of the threshold
// counts as already clipped, which keeps the operation idempotent under
// floating-point rounding.
template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm);

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params);

}  // namespace rcnet
