#include "rcnet/rc.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

namespace rcnet {

const char* to_string(BnMode mode) {
  switch (mode) {
    case BnMode::kNone: return "none";
    case BnMode::kShared: return "shared";
    case BnMode::kIndependent: return "independent";
    case BnMode::kDoubleIndependent: return "double_independent";
  }
  return "?";
}

BnMode parse_bn_mode(std::string_view text) {
  if (text == "none") return BnMode::kNone;
  if (text == "shared") return BnMode::kShared;
  if (text == "independent") return BnMode::kIndependent;
  if (text == "double_independent") return BnMode::kDoubleIndependent;
  throw std::invalid_argument("unknown bn_mode '" + std::string(text) +
                              "' (expected none, shared, independent or double_independent)");
}

Index canonical_bank_index(int unified_step, int unroll_index) {
  return static_cast<Index>(unified_step) * (unified_step - 1) / 2 + (unroll_index - 1);
}

template <typename T>
BnBank<T>::BnBank(BnMode mode, int max_step, int slots, Index channels, const std::string& prefix)
    : mode_(mode), max_step_(max_step), slots_(slots), channels_(channels) {
  if (max_step < 1) throw std::invalid_argument("BnBank: max_step must be >= 1");
  const std::size_t addresses = address_count();
  groups_.reserve(addresses * static_cast<std::size_t>(slots));
  for (std::size_t a = 0; a < addresses; ++a) {
    for (int s = 0; s < slots; ++s) {
      groups_.emplace_back(channels, prefix + "." + std::to_string(a) + ".slot" + std::to_string(s));
    }
  }
}

template <typename T>
std::size_t BnBank<T>::address_count() const {
  const auto m = static_cast<std::size_t>(max_step_);
  switch (mode_) {
    case BnMode::kNone: return 0;
    case BnMode::kShared: return 1;
    case BnMode::kIndependent: return m;
    case BnMode::kDoubleIndependent: return m * (m + 1) / 2;
  }
  return 0;
}

template <typename T>
BankAddress BnBank<T>::address(std::size_t index) const {
  switch (mode_) {
    case BnMode::kNone:
    case BnMode::kShared: return {0, 0};
    case BnMode::kIndependent: return {0, static_cast<int>(index) + 1};
    case BnMode::kDoubleIndependent: {
      int s = 1;
      while (static_cast<std::size_t>(canonical_bank_index(s + 1, 1)) <= index) ++s;
      return {s, static_cast<int>(index - static_cast<std::size_t>(canonical_bank_index(s, 1))) + 1};
    }
  }
  return {};
}

template <typename T>
std::vector<BnGroup<T>*> BnBank<T>::select(int unified_step, int unroll_index) {
  if (unified_step < 1 || unified_step > max_step_ || unroll_index < 1 || unroll_index > unified_step) {
    throw std::out_of_range("BnBank::select: need 1 <= j <= s <= " + std::to_string(max_step_) + ", got s=" +
                            std::to_string(unified_step) + " j=" + std::to_string(unroll_index));
  }
  std::size_t address = 0;
  switch (mode_) {
    case BnMode::kNone: return {};
    case BnMode::kShared: address = 0; break;
    case BnMode::kIndependent: address = static_cast<std::size_t>(unroll_index - 1); break;
    case BnMode::kDoubleIndependent:
      address = static_cast<std::size_t>(canonical_bank_index(unified_step, unroll_index));
      break;
  }
  std::vector<BnGroup<T>*> out;
  out.reserve(static_cast<std::size_t>(slots_));
  for (int s = 0; s < slots_; ++s) out.push_back(&group(address, s));
  return out;
}

template <typename T>
BnGroup<T>& BnBank<T>::group(std::size_t address_index, int slot) {
  return groups_.at(address_index * static_cast<std::size_t>(slots_) + static_cast<std::size_t>(slot));
}

template <typename T>
UpstreamBnBank<T>::UpstreamBnBank(bool per_step, int max_step, int slots, Index channels, const std::string& prefix)
    : per_step_(per_step), max_step_(max_step), slots_(slots) {
  const std::size_t addresses = address_count();
  groups_.reserve(addresses * static_cast<std::size_t>(slots));
  for (std::size_t a = 0; a < addresses; ++a) {
    for (int s = 0; s < slots; ++s) {
      groups_.emplace_back(channels, prefix + "." + std::to_string(a) + ".slot" + std::to_string(s));
    }
  }
}

template <typename T>
std::vector<BnGroup<T>*> UpstreamBnBank<T>::select(int upstream_step) {
  if (upstream_step < 1 || upstream_step > max_step_) {
    throw std::out_of_range("UpstreamBnBank::select: step " + std::to_string(upstream_step) + " outside [1, " +
                            std::to_string(max_step_) + "]");
  }
  const std::size_t address = per_step_ ? static_cast<std::size_t>(upstream_step - 1) : 0;
  std::vector<BnGroup<T>*> out;
  for (int s = 0; s < slots_; ++s) {
    out.push_back(&groups_[address * static_cast<std::size_t>(slots_) + static_cast<std::size_t>(s)]);
  }
  return out;
}

template <typename T>
RcCell<T>::RcCell(std::string name_, CellKind kind, Index channels, BnMode mode, int max_step, bool pool_mid_,
                  std::mt19937_64& rng)
    : name(std::move(name_)),
      body(kind, channels, name, rng, /*shared=*/true),
      bank(mode, max_step, bn_slots(kind), channels, name + ".bank"),
      pool_mid(pool_mid_) {
  if (mode == BnMode::kShared) {
    for (auto& grp : bank.groups()) {
      grp.gamma.is_shared = grp.beta.is_shared = true;
      grp.gamma.lr_scale = grp.beta.lr_scale = T(0.5);
    }
  }
}

template <typename T>
Var RcCell<T>::unroll(Graph<T>& g, Var x, int steps, const ForwardContext& ctx,
                      const std::function<void(int, Var)>& observe) {
  if (steps < 1 || steps > max_step()) {
    throw std::out_of_range(name + ": unroll step " + std::to_string(steps) + " outside [1, " +
                            std::to_string(max_step()) + "]");
  }
  const int pool_after = pool_mid ? pool_position(steps) : 0;
  Var h = x;
  for (int j = 1; j <= steps; ++j) {
    const auto groups = bank.select(steps, j);
    h = run_cell_body(g, body, h, std::span<BnGroup<T>* const>(groups), ctx);
    if (observe) observe(j, h);
    if (j == pool_after) h = avgpool2d(g, h);
  }
  return h;
}

StepDistribution::StepDistribution(std::vector<int> support, std::vector<double> probs)
    : support_(std::move(support)), probs_(std::move(probs)) {
  if (support_.empty() || support_.size() != probs_.size()) {
    throw std::invalid_argument("StepDistribution: support and probabilities must be non-empty and equally long");
  }
  for (std::size_t i = 0; i < support_.size(); ++i) {
    if (support_[i] < 1) throw std::invalid_argument("StepDistribution: steps must be >= 1");
    if (i > 0 && support_[i] <= support_[i - 1]) {
      throw std::invalid_argument("StepDistribution: support must be distinct and ascending");
    }
    if (!(probs_[i] > 0)) throw std::invalid_argument("StepDistribution: probabilities must be positive");
  }
  const double total = std::accumulate(probs_.begin(), probs_.end(), 0.0);
  if (std::abs(total - 1.0) > 1e-9) {
    throw std::invalid_argument("StepDistribution: probabilities sum to " + std::to_string(total) + ", not 1");
  }
  double acc = 0;
  for (double p : probs_) cumulative_.push_back(acc += p);
}

StepDistribution StepDistribution::fixed(int step) { return StepDistribution({step}, {1.0}); }

bool StepDistribution::contains(int step) const {
  return std::binary_search(support_.begin(), support_.end(), step);
}

int StepDistribution::sample(std::mt19937_64& rng) const {
  const double u = static_cast<double>(rng() >> 11) * 0x1.0p-53;
  for (std::size_t i = 0; i + 1 < cumulative_.size(); ++i) {
    if (u < cumulative_[i]) return support_[i];
  }
  return support_.back();
}

template class BnBank<float>;
template class BnBank<double>;
template class UpstreamBnBank<float>;
template class UpstreamBnBank<double>;
template struct RcCell<float>;
template struct RcCell<double>;

}  // namespace rcnet
