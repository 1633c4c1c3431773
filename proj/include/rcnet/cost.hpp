#pragma once

#include <cstdint>
#include <map>

#include "rcnet/network.hpp"

namespace rcnet {

// Parameter, depth and compute accounting derived from a NetworkSpec alone.
// FLOPs are multiply-accumulates of convolutions and the linear head; BN,
// ReLU and pooling are ignored. BN params count learned gamma/beta only.
struct CostReport {
  Index conv_params = 0;
  Index bn_params = 0;
  Index linear_params = 0;
  Index total_params = 0;
  int unrolled_depth = 0;
  std::map<int, std::int64_t> flops_per_step;

  bool operator==(const CostReport&) const = default;
};

CostReport cost_report(const NetworkSpec& spec);

}  // namespace rcnet
