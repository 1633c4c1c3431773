#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "rcnet/data.hpp"
#include "rcnet/network.hpp"
#include "rcnet/optim.hpp"
#include "rcnet/rc.hpp"

namespace rcnet {

enum class Regime { kFixed, kCostAdjustable, kAggregated };

const char* to_string(Regime regime);
Regime parse_regime(std::string_view text);

struct TrainConfig {
  Regime regime = Regime::kFixed;
  double lr = 0.05;
  double shared_lr_scale = 0.5;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  double clip_max_norm = 5.0;
  int epochs = 10;
  Index batch_size = 32;
  // Stop after this many iterations in total; 0 runs all epochs.
  Index max_iterations = 0;
  // Fixed-step runs use a singleton distribution.
  StepDistribution steps = StepDistribution::fixed(1);
  std::uint64_t seed = 1;
  // Multiply lr by lr_decay_factor every lr_decay_every epochs; 0 disables.
  int lr_decay_every = 0;
  double lr_decay_factor = 0.1;
  // Denoise training: noise level and patch size (0 = whole images).
  double sigma = 25.0;
  Index patch_size = 0;
};

void validate(const TrainConfig& cfg);

struct IterationRecord {
  Index iteration = 0;
  int epoch = 0;
  int step = 0;  // 0 for aggregated iterations, which run every support step
  double loss = 0;
  double grad_norm_pre = 0;
  double grad_norm_post = 0;
};

struct EpochRecord {
  int epoch = 0;
  Index iterations = 0;  // cumulative
  double train_loss = 0;
  std::map<int, double> metric;  // step -> error rate or PSNR
};

struct RunLog {
  std::string metric_name;  // "err" or "psnr"
  std::vector<IterationRecord> iterations;
  std::vector<EpochRecord> epochs;
};

// Everything beyond network tensors needed to continue a run exactly.
struct TrainerState {
  Index iteration = 0;
  std::mt19937_64 step_rng;
  bool operator==(const TrainerState&) const = default;
};

TrainerState initial_trainer_state(const TrainConfig& cfg);

template <typename T>
struct TrainHooks {
  // Runs after each parameter update.
  std::function<void(const IterationRecord&)> on_iteration;
  // Runs after each epoch's evaluation.
  std::function<void(const EpochRecord&)> on_epoch;
};

// Runs the configured regime from `state` until the epoch/iteration budget is
// used up. `eval` may be null. The network's support is set to the regime's.
template <typename T>
RunLog train(Network<T>& net, const Dataset& data, const Dataset* eval, const TrainConfig& cfg, TrainerState& state,
             const TrainHooks<T>& hooks = {});

template <typename T>
RunLog train_fixed(Network<T>& net, const Dataset& data, const TrainConfig& cfg, const Dataset* eval = nullptr);
template <typename T>
RunLog train_cost_adjustable(Network<T>& net, const Dataset& data, const TrainConfig& cfg,
                             const Dataset* eval = nullptr);
template <typename T>
RunLog train_aggregated(Network<T>& net, const Dataset& data, const TrainConfig& cfg, const Dataset* eval = nullptr);

// A prepared minibatch: inputs plus labels (classification) or clean targets (denoise).
template <typename T>
struct Batch {
  Tensor<T> input;
  std::vector<int> labels;
  Tensor<T> target;
};

// Training loss for one batch at one step: cross-entropy on logits, or the
// residual L2 loss ||f(x) + x - y||^2 (mean, on the [0,1] scale).
template <typename T>
Var batch_loss(Network<T>& net, Graph<T>& g, const Batch<T>& batch, int step, const ForwardContext& ctx);

// sum_s p_s * loss_s over the distribution's support, in one graph.
template <typename T>
Var aggregated_loss(Network<T>& net, Graph<T>& g, const Batch<T>& batch, const StepDistribution& dist,
                    const ForwardContext& ctx);

// Eval-mode forward at a supported step; never mutates the network.
template <typename T>
Tensor<T> infer(Network<T>& net, const Tensor<T>& input, int step);

template <typename T>
double evaluate_classification(Network<T>& net, const Dataset& data, int step, Index batch_size = 128);

// Mean per-image PSNR of the denoised output, clipped to [0, max_value].
template <typename T>
double evaluate_denoise(Network<T>& net, const Dataset& data, int step, double max_value = 255.0,
                        Index batch_size = 16);

// Mean per-image PSNR of the noisy inputs themselves.
double noisy_input_psnr(const Dataset& data, double max_value = 255.0);

// Error of a softmax-regression probe on raw pixels, trained full-batch.
double linear_probe_error(const Dataset& train, const Dataset& test, int epochs = 200, double lr = 0.5);

}  // namespace rcnet
