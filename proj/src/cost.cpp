#include "rcnet/cost.hpp"

namespace rcnet {

namespace {

Index bn_addresses(BnMode mode, int m) {
  switch (mode) {
    case BnMode::kNone: return 0;
    case BnMode::kShared: return 1;
    case BnMode::kIndependent: return m;
    case BnMode::kDoubleIndependent: return static_cast<Index>(m) * (m + 1) / 2;
  }
  return 0;
}

std::int64_t conv_macs(Index h, Index out_c, Index in_c, Index k) { return h * h * out_c * in_c * k * k; }

}  // namespace

CostReport cost_report(const NetworkSpec& spec) {
  const auto layout = network_layout(spec);
  const int m = spec.max_step;
  const int depth_steps = spec.expanded() ? spec.expanded_step : m;
  CostReport r;

  for (const Stage& st : layout) {
    const Index c = st.in_channels;
    switch (st.kind) {
      case Stage::Kind::kStem:
        r.conv_params += st.out_channels * c * 9;
        r.unrolled_depth += 1;
        break;
      case Stage::Kind::kCell: {
        const Index body = convs_per_body(st.cell_kind) * c * c * 9;
        const Index slots = bn_slots(st.cell_kind);
        if (spec.expanded()) {
          r.conv_params += body * spec.expanded_step;
          r.bn_params += spec.bn_mode == BnMode::kNone ? 0 : 2 * c * slots * spec.expanded_step;
        } else {
          r.conv_params += body;
          r.bn_params += 2 * c * slots * bn_addresses(spec.bn_mode, m);
        }
        r.unrolled_depth += convs_per_body(st.cell_kind) * depth_steps;
        break;
      }
      case Stage::Kind::kInvPool:
        break;
      case Stage::Kind::kTransition: {
        const Index addresses = st.per_step_bn ? m : 1;
        r.conv_params += st.out_channels * c * 9 + st.out_channels * st.out_channels * 9;
        if (st.stride != 1 || c != st.out_channels) r.conv_params += st.out_channels * c;
        r.bn_params += 2 * (c + st.out_channels) * addresses;
        r.unrolled_depth += 2;
        break;
      }
      case Stage::Kind::kClassifierHead:
        r.linear_params += st.out_channels * c + st.out_channels;
        r.bn_params += 2 * c * (st.per_step_bn ? m : 1);
        r.unrolled_depth += 1;
        break;
      case Stage::Kind::kDenoiseHead:
        r.conv_params += st.out_channels * c * 9;
        r.unrolled_depth += 1;
        break;
    }
  }
  r.total_params = r.conv_params + r.bn_params + r.linear_params;

  auto flops_at = [&](int s) {
    std::int64_t total = 0;
    Index h = spec.image_size;
    for (const Stage& st : layout) {
      const Index c = st.in_channels;
      switch (st.kind) {
        case Stage::Kind::kStem:
        case Stage::Kind::kDenoiseHead:
          total += conv_macs(h, st.out_channels, c, 3);
          break;
        case Stage::Kind::kCell:
          for (int j = 1; j <= s; ++j) {
            total += convs_per_body(st.cell_kind) * conv_macs(h, c, c, 3);
            if (st.pool_mid && j == pool_position(s)) h /= 2;
          }
          break;
        case Stage::Kind::kInvPool:
          h /= 2;
          break;
        case Stage::Kind::kTransition:
          h /= st.stride;
          total += conv_macs(h, st.out_channels, c, 3) + conv_macs(h, st.out_channels, st.out_channels, 3);
          if (st.stride != 1 || c != st.out_channels) total += conv_macs(h, st.out_channels, c, 1);
          break;
        case Stage::Kind::kClassifierHead:
          total += st.out_channels * c;
          break;
      }
    }
    return total;
  };
  if (spec.expanded()) {
    r.flops_per_step[spec.expanded_step] = flops_at(spec.expanded_step);
  } else {
    for (int s = 1; s <= m; ++s) r.flops_per_step[s] = flops_at(s);
  }
  return r;
}

}  // namespace rcnet
