#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "rcnet/layers.hpp"
#include "rcnet/rc.hpp"

namespace rcnet {

enum class Arch { kClassifierR2, kDenoiserR3, kResNetR4 };
enum class Task { kClassify, kDenoise };

const char* to_string(Arch arch);
Arch parse_arch(std::string_view text);

// Declarative network description. The stage layout, parameter counts, depth
// and FLOPs are all derived from these fields.
struct NetworkSpec {
  Arch arch = Arch::kClassifierR2;
  int max_step = 1;
  BnMode bn_mode = BnMode::kIndependent;
  std::vector<Index> widths{64, 256};
  Index in_channels = 3;
  Index image_size = 32;
  Index num_classes = 10;
  double bn_eps = 1e-5;
  double bn_momentum = 0.1;
  // Denoisers run on inputs divided by this and scale the residual back.
  double value_range = 255.0;
  // Non-zero: the untied standard network equal to the RC network unrolled
  // exactly this many steps.
  int expanded_step = 0;

  Task task() const { return arch == Arch::kDenoiserR3 ? Task::kDenoise : Task::kClassify; }
  bool expanded() const { return expanded_step > 0; }
  bool operator==(const NetworkSpec&) const = default;
};

// Throws std::invalid_argument describing the first inconsistency.
void validate(const NetworkSpec& spec);

NetworkSpec classifier_r2_spec(int max_step, BnMode mode, std::vector<Index> widths = {64, 256},
                               Index in_channels = 3, Index image_size = 32, Index num_classes = 10);
NetworkSpec denoiser_r3_spec(int max_step, BnMode mode, Index width = 64, Index image_channels = 1,
                             Index patch_size = 40);
NetworkSpec r4_spec(int max_step, BnMode mode, std::vector<Index> widths = {64, 128, 256, 512}, Index in_channels = 3,
                    Index image_size = 32, Index num_classes = 100);

struct Stage {
  enum class Kind { kStem, kCell, kInvPool, kTransition, kClassifierHead, kDenoiseHead };
  Kind kind = Kind::kStem;
  std::string name;
  Index in_channels = 0;
  Index out_channels = 0;
  Index stride = 1;
  CellKind cell_kind = CellKind::kPreactResblock;
  bool pool_mid = false;
  // Transitions and heads that follow an RC cell get one BN set per upstream step.
  bool per_step_bn = false;
};

std::vector<Stage> network_layout(const NetworkSpec& spec);

// ---- modules ----------------------------------------------------------------

template <typename T>
struct StemModule {
  Stem<T> stem;
};

template <typename T>
struct CellModule {
  RcCell<T> cell;
};

struct InvPoolModule {};

// Non-recurrent pre-activation block. A stride-2 transition average-pools the
// normalized input before both the 3x3 path and the 1x1 projection shortcut.
template <typename T>
struct TransitionModule {
  std::string name;
  Index in_channels = 0;
  Index out_channels = 0;
  Index stride = 1;
  Parameter<T> conv1;
  Parameter<T> conv2;
  std::optional<Parameter<T>> shortcut;
  UpstreamBnBank<T> bank;
};

// An RC cell unrolled a fixed number of steps with untied weights.
template <typename T>
struct ExpandedCellModule {
  std::string name;
  bool pool_mid = false;
  std::vector<CellBody<T>> bodies;
  std::vector<std::vector<BnGroup<T>>> groups;  // [depth][slot]; empty inner lists without BN
};

template <typename T>
struct ClassifierHeadModule {
  ClassifierHead<T> head;
  UpstreamBnBank<T> bank;
};

template <typename T>
struct DenoiseHeadModule {
  DenoiseHead<T> head;
};

template <typename T>
using Module = std::variant<StemModule<T>, CellModule<T>, InvPoolModule, TransitionModule<T>, ExpandedCellModule<T>,
                            ClassifierHeadModule<T>, DenoiseHeadModule<T>>;

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T>* tensor;
};

template <typename T>
class Network {
 public:
  Network(NetworkSpec spec, std::uint64_t init_seed);

  const NetworkSpec& spec() const { return spec_; }
  std::vector<Module<T>>& modules() { return modules_; }
  const std::vector<Module<T>>& modules() const { return modules_; }

  // Steps the network was trained for; inference outside it is rejected.
  const std::vector<int>& support() const { return support_; }
  void set_support(std::vector<int> support);
  bool supports(int step) const;

  // Called with (cell name, unroll position, state) after each cell step.
  using FeatureObserver = std::function<void(const std::string&, int, const Tensor<T>&)>;
  void set_feature_observer(FeatureObserver observer) { observer_ = std::move(observer); }

  // Classifier: logits. Denoiser: prediction = f(x) + x on the input scale.
  Var forward(Graph<T>& g, Var input, int step, const ForwardContext& ctx);

  std::vector<Parameter<T>*> parameters();
  std::vector<BnGroup<T>*> bn_groups();
  // Parameters, running statistics and (optionally) momentum buffers under
  // canonical names; the order is stable for a given spec.
  std::vector<NamedTensor<T>> state(bool include_momentum);
  Index parameter_count();

 private:
  NetworkSpec spec_;
  std::vector<Module<T>> modules_;
  std::vector<int> support_;
  FeatureObserver observer_;
};

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t init_seed);

template <typename T>
Network<T> build_classifier_r2(int max_step, BnMode mode, std::uint64_t seed, std::vector<Index> widths = {64, 256},
                               Index in_channels = 3, Index image_size = 32, Index num_classes = 10) {
  return build_network<T>(classifier_r2_spec(max_step, mode, std::move(widths), in_channels, image_size, num_classes),
                          seed);
}

template <typename T>
Network<T> build_denoiser_r3(int max_step, BnMode mode, std::uint64_t seed, Index width = 64, Index image_channels = 1,
                             Index patch_size = 40) {
  return build_network<T>(denoiser_r3_spec(max_step, mode, width, image_channels, patch_size), seed);
}

template <typename T>
Network<T> build_r4(int max_step, BnMode mode, std::uint64_t seed, std::vector<Index> widths = {64, 128, 256, 512},
                    Index in_channels = 3, Index image_size = 32, Index num_classes = 100) {
  return build_network<T>(r4_spec(max_step, mode, std::move(widths), in_channels, image_size, num_classes), seed);
}

// The untied standard network that computes exactly what `rc` computes at the
// given step: each cell becomes `step` blocks holding copies of the shared
// weights, with the step's BN groups installed at their depths.
template <typename T>
Network<T> expand_to_standard(Network<T>& rc, int step);

extern template class Network<float>;
extern template class Network<double>;

}  // namespace rcnet
