#pragma once

// Recurrent-convolution cells: one CellBody unrolled s times, with the BN
// groups for each unroll position drawn from a bank.
//
// Bank layouts per BnMode (per slot):
//   none                - no groups; the body runs unnormalized
//   shared              - 1 group reused at every position
//   independent         - m groups, position j uses group j
//   double_independent  - m(m+1)/2 groups; at unified step s, position j uses
//                         group (s, j), stored at s(s-1)/2 + (j-1)

#include <cstdint>
#include <functional>
#include <random>
#include <string>
#include <string_view>
#include <vector>

#include "rcnet/layers.hpp"

namespace rcnet {

enum class BnMode { kNone, kShared, kIndependent, kDoubleIndependent };

const char* to_string(BnMode mode);
BnMode parse_bn_mode(std::string_view text);

// (unified step, unroll index) for one bank address. Zero means "not part of
// the address" (step for shared/independent banks, both for shared).
struct BankAddress {
  int step = 0;
  int unroll = 0;
};

Index canonical_bank_index(int unified_step, int unroll_index);

template <typename T>
class BnBank {
 public:
  BnBank() = default;
  BnBank(BnMode mode, int max_step, int slots, Index channels, const std::string& prefix);

  BnMode mode() const { return mode_; }
  int max_step() const { return max_step_; }
  int slots() const { return slots_; }
  Index channels() const { return channels_; }
  std::size_t address_count() const;
  std::size_t group_count() const { return groups_.size(); }
  BankAddress address(std::size_t index) const;

  // Groups for unroll position j of an s-step unroll; empty for BnMode::kNone.
  std::vector<BnGroup<T>*> select(int unified_step, int unroll_index);

  BnGroup<T>& group(std::size_t address_index, int slot);
  std::vector<BnGroup<T>>& groups() { return groups_; }
  const std::vector<BnGroup<T>>& groups() const { return groups_; }

 private:
  BnMode mode_ = BnMode::kNone;
  int max_step_ = 1;
  int slots_ = 0;
  Index channels_ = 0;
  std::vector<BnGroup<T>> groups_;  // address-major
};

// BN groups for a non-recurrent module downstream of RC cells: one set per
// upstream unified step when per_step is set, otherwise a single set.
template <typename T>
class UpstreamBnBank {
 public:
  UpstreamBnBank() = default;
  UpstreamBnBank(bool per_step, int max_step, int slots, Index channels, const std::string& prefix);

  bool per_step() const { return per_step_; }
  int slots() const { return slots_; }
  std::size_t address_count() const { return per_step_ ? static_cast<std::size_t>(max_step_) : 1; }
  std::vector<BnGroup<T>*> select(int upstream_step);
  std::vector<BnGroup<T>>& groups() { return groups_; }
  const std::vector<BnGroup<T>>& groups() const { return groups_; }

 private:
  bool per_step_ = false;
  int max_step_ = 1;
  int slots_ = 0;
  std::vector<BnGroup<T>> groups_;
};

template <typename T>
struct RcCell {
  std::string name;
  CellBody<T> body;
  BnBank<T> bank;
  // Average-pool once, right after step ceil(s/2).
  bool pool_mid = false;

  RcCell() = default;
  RcCell(std::string name, CellKind kind, Index channels, BnMode mode, int max_step, bool pool_mid,
         std::mt19937_64& rng);

  int max_step() const { return bank.max_step(); }
  // `observe`, when set, sees the state after every unroll position j.
  Var unroll(Graph<T>& g, Var x, int steps, const ForwardContext& ctx,
             const std::function<void(int, Var)>& observe = {});
};

// Step after which a pooling cell downsamples, for an s-step unroll.
inline int pool_position(int steps) { return (steps + 1) / 2; }

// Discrete distribution over unroll steps. Sampling consumes exactly one
// 64-bit draw, so the sequence is reproducible from the engine state alone.
class StepDistribution {
 public:
  StepDistribution(std::vector<int> support, std::vector<double> probs);
  static StepDistribution fixed(int step);

  const std::vector<int>& support() const { return support_; }
  const std::vector<double>& probs() const { return probs_; }
  bool is_singleton() const { return support_.size() == 1; }
  int max_step() const { return support_.back(); }
  bool contains(int step) const;

  int sample(std::mt19937_64& rng) const;

 private:
  std::vector<int> support_;
  std::vector<double> probs_;
  std::vector<double> cumulative_;
};

}  // namespace rcnet
