#include "rcnet/optim.hpp"

#include <cmath>
#include <stdexcept>

namespace rcnet {

template <typename T>
void sgd_step(std::span<Parameter<T>* const> params, const SgdOptions& options) {
  if (!(options.lr > 0)) throw std::invalid_argument("sgd_step: learning rate must be positive");
  if (options.momentum < 0 || options.momentum >= 1) throw std::invalid_argument("sgd_step: momentum must lie in [0, 1)");
  if (options.weight_decay < 0) throw std::invalid_argument("sgd_step: weight decay must be non-negative");
  const T mu = static_cast<T>(options.momentum);
  const T wd = static_cast<T>(options.weight_decay);
  for (Parameter<T>* p : params) {
    const T step = static_cast<T>(options.lr) * p->lr_scale;
    T* w = p->value.data();
    const T* g = p->grad.data();
    T* buf = p->momentum.data();
    const Index n = p->value.size();
    if (options.momentum == 0) {
      for (Index i = 0; i < n; ++i) w[i] -= step * (g[i] + wd * w[i]);
      continue;
    }
    for (Index i = 0; i < n; ++i) {
      buf[i] = mu * buf[i] + (g[i] + wd * w[i]);
      w[i] -= step * buf[i];
    }
  }
}

template <typename T>
double global_grad_norm(std::span<Parameter<T>* const> params) {
  double ss = 0;
  for (const Parameter<T>* p : params) {
    for (T g : p->grad.values()) ss += static_cast<double>(g) * g;
  }
  return std::sqrt(ss);
}

template <typename T>
double clip_grad_norm(std::span<Parameter<T>* const> params, double max_norm) {
  if (!(max_norm > 0)) throw std::invalid_argument("clip_grad_norm: max_norm must be positive");
  const double norm = global_grad_norm(params);
  if (norm > max_norm * (1.0 + 1e-7)) {
    const T coef = static_cast<T>(max_norm / norm);
    for (Parameter<T>* p : params) {
      for (T& g : p->grad.values()) g *= coef;
    }
  }
  return norm;
}

template <typename T>
void zero_grads(std::span<Parameter<T>* const> params) {
  for (Parameter<T>* p : params) p->zero_grad();
}

template void sgd_step<float>(std::span<Parameter<float>* const>, const SgdOptions&);
template void sgd_step<double>(std::span<Parameter<double>* const>, const SgdOptions&);
template double global_grad_norm<float>(std::span<Parameter<float>* const>);
template double global_grad_norm<double>(std::span<Parameter<double>* const>);
template double clip_grad_norm<float>(std::span<Parameter<float>* const>, double);
template double clip_grad_norm<double>(std::span<Parameter<double>* const>, double);
template void zero_grads<float>(std::span<Parameter<float>* const>);
template void zero_grads<double>(std::span<Parameter<double>* const>);

}  // namespace rcnet
