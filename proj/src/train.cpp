#include "rcnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace rcnet {

const char* to_string(Regime regime) {
  switch (regime) {
    case Regime::kFixed: return "fixed";
    case Regime::kCostAdjustable: return "cost_adjustable";
    case Regime::kAggregated: return "aggregated";
  }
  return "?";
}

Regime parse_regime(std::string_view text) {
  if (text == "fixed") return Regime::kFixed;
  if (text == "cost_adjustable") return Regime::kCostAdjustable;
  if (text == "aggregated") return Regime::kAggregated;
  throw std::invalid_argument("unknown regime '" + std::string(text) +
                              "' (expected fixed, cost_adjustable or aggregated)");
}

void validate(const TrainConfig& cfg) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument("train config: " + what);
  };
  require(cfg.lr > 0, "lr must be positive");
  require(cfg.shared_lr_scale > 0 && cfg.shared_lr_scale <= 1, "shared_lr_scale must lie in (0, 1]");
  require(cfg.momentum >= 0 && cfg.momentum < 1, "momentum must lie in [0, 1)");
  require(cfg.weight_decay >= 0, "weight_decay must be non-negative");
  require(cfg.clip_max_norm > 0, "clip_max_norm must be positive");
  require(cfg.epochs >= 1, "epochs must be >= 1");
  require(cfg.batch_size >= 1, "batch_size must be >= 1");
  require(cfg.max_iterations >= 0, "max_iterations must be non-negative");
  require(cfg.lr_decay_every >= 0, "lr_decay_every must be non-negative");
  require(cfg.lr_decay_factor > 0 && cfg.lr_decay_factor <= 1, "lr_decay_factor must lie in (0, 1]");
  require(cfg.sigma > 0, "sigma must be positive");
  require(cfg.patch_size >= 0, "patch_size must be non-negative");
  require(cfg.regime != Regime::kFixed || cfg.steps.is_singleton(), "fixed regime needs a single step");
}

TrainerState initial_trainer_state(const TrainConfig& cfg) {
  TrainerState s;
  std::seed_seq seq{static_cast<std::uint32_t>(cfg.seed), static_cast<std::uint32_t>(cfg.seed >> 32), 0x73746570u};
  s.step_rng.seed(seq);
  return s;
}

namespace {

// Independent stream per (seed, epoch, purpose) so a resumed run regenerates
// exactly the same shuffles, crops and noise.
std::mt19937_64 epoch_stream(std::uint64_t seed, int epoch, std::uint32_t purpose) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(epoch), purpose};
  return std::mt19937_64(seq);
}

struct EpochPlan {
  std::vector<Index> order;
  Tensor<float> inputs;   // denoise: noisy crops, aligned with targets
  Tensor<float> targets;  // denoise: clean crops
};

EpochPlan plan_epoch(const Dataset& data, const TrainConfig& cfg, int epoch) {
  EpochPlan plan;
  const Index n = data.size();
  plan.order.resize(static_cast<std::size_t>(n));
  std::iota(plan.order.begin(), plan.order.end(), Index{0});
  auto shuffle_rng = epoch_stream(cfg.seed, epoch, 1);
  std::shuffle(plan.order.begin(), plan.order.end(), shuffle_rng);
  if (data.task == Task::kDenoise) {
    const Index c = data.channels();
    const Index h = data.height();
    const Index w = data.width();
    const Index p = cfg.patch_size > 0 ? std::min({cfg.patch_size, h, w}) : 0;
    const Index ph = p > 0 ? p : h;
    const Index pw = p > 0 ? p : w;
    plan.targets = Tensor<float>({n, c, ph, pw});
    auto crop_rng = epoch_stream(cfg.seed, epoch, 2);
    for (Index i = 0; i < n; ++i) {
      const Index y0 = ph < h ? static_cast<Index>(crop_rng() % static_cast<std::uint64_t>(h - ph + 1)) : 0;
      const Index x0 = pw < w ? static_cast<Index>(crop_rng() % static_cast<std::uint64_t>(w - pw + 1)) : 0;
      for (Index ch = 0; ch < c; ++ch) {
        for (Index y = 0; y < ph; ++y) {
          const float* src = data.images.data() + ((i * c + ch) * h + y0 + y) * w + x0;
          std::copy_n(src, pw, plan.targets.data() + ((i * c + ch) * ph + y) * pw);
        }
      }
    }
    auto noise_rng = epoch_stream(cfg.seed, epoch, 3);
    plan.inputs = add_gaussian_noise(plan.targets, cfg.sigma, noise_rng).noisy;
  }
  return plan;
}

template <typename T>
Batch<T> make_batch(const Dataset& data, const EpochPlan& plan, Index begin, Index end) {
  std::span<const Index> idx(plan.order.data() + begin, static_cast<std::size_t>(end - begin));
  Batch<T> b;
  if (data.task == Task::kClassify) {
    b.input = gather_batch<T>(data.images, idx);
    for (Index i : idx) b.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  } else {
    b.input = gather_batch<T>(plan.inputs, idx);
    b.target = gather_batch<T>(plan.targets, idx);
  }
  return b;
}

std::string support_text(const std::vector<int>& support) {
  std::ostringstream os;
  os << '{';
  for (std::size_t i = 0; i < support.size(); ++i) os << (i ? ", " : "") << support[i];
  os << '}';
  return os.str();
}

template <typename T>
Var forward_checked(Network<T>& net, Graph<T>& g, Var x, int step, const ForwardContext& ctx) {
  if (!net.supports(step)) {
    throw std::invalid_argument("step " + std::to_string(step) + " is outside the trained support " +
                                support_text(net.support()));
  }
  return net.forward(g, x, step, ctx);
}

}  // namespace

template <typename T>
Var batch_loss(Network<T>& net, Graph<T>& g, const Batch<T>& batch, int step, const ForwardContext& ctx) {
  const Var x = g.input(batch.input);
  const Var out = net.forward(g, x, step, ctx);
  if (net.spec().task() == Task::kClassify) {
    return softmax_cross_entropy(g, out, std::span<const int>(batch.labels));
  }
  const T inv = T{1} / static_cast<T>(net.spec().value_range);
  Tensor<T> target = batch.target;
  for (T& v : target.values()) v *= inv;
  return mse_loss(g, scale(g, out, inv), target);
}

template <typename T>
Var aggregated_loss(Network<T>& net, Graph<T>& g, const Batch<T>& batch, const StepDistribution& dist,
                    const ForwardContext& ctx) {
  std::optional<Var> total;
  for (std::size_t i = 0; i < dist.support().size(); ++i) {
    const Var term = scale(g, batch_loss(net, g, batch, dist.support()[i], ctx), static_cast<T>(dist.probs()[i]));
    total = total ? add(g, *total, term) : term;
  }
  return *total;
}

template <typename T>
RunLog train(Network<T>& net, const Dataset& data, const Dataset* eval, const TrainConfig& cfg, TrainerState& state,
             const TrainHooks<T>& hooks) {
  validate(cfg);
  if (data.size() == 0) throw std::invalid_argument("train: empty dataset");
  if (data.task != net.spec().task()) throw std::invalid_argument("train: dataset task does not match the network");
  const auto& support = cfg.steps.support();
  if (cfg.steps.max_step() > net.spec().max_step) {
    throw std::invalid_argument("train: step distribution support " + support_text(support) + " exceeds max_step " +
                                std::to_string(net.spec().max_step));
  }
  if (cfg.regime != Regime::kFixed && !cfg.steps.is_singleton() &&
      net.spec().bn_mode != BnMode::kDoubleIndependent) {
    throw std::invalid_argument(std::string("train: ") + to_string(cfg.regime) +
                                " training over several steps needs bn_mode double_independent");
  }
  net.set_support(support);
  auto params = net.parameters();
  for (auto* p : params) {
    if (p->is_shared) p->set_lr_scale(static_cast<T>(cfg.shared_lr_scale));
  }
  const std::span<Parameter<T>* const> pspan(params);

  const Index n = data.size();
  const Index per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  Index total = per_epoch * cfg.epochs;
  if (cfg.max_iterations > 0) total = std::min(total, cfg.max_iterations);

  RunLog log;
  log.metric_name = data.task == Task::kClassify ? "err" : "psnr";
  ForwardContext ctx;
  ctx.mode = Mode::kTrain;

  int planned_epoch = -1;
  EpochPlan plan;
  double epoch_loss = 0;
  Index epoch_count = 0;
  for (Index it = state.iteration; it < total; ++it) {
    const int epoch = static_cast<int>(it / per_epoch);
    const Index b = it % per_epoch;
    if (epoch != planned_epoch) {
      plan = plan_epoch(data, cfg, epoch);
      planned_epoch = epoch;
    }
    const Batch<T> batch = make_batch<T>(data, plan, b * cfg.batch_size, std::min(n, (b + 1) * cfg.batch_size));

    int step = 0;
    if (cfg.regime == Regime::kFixed) {
      step = support.front();
    } else if (cfg.regime == Regime::kCostAdjustable) {
      step = cfg.steps.sample(state.step_rng);
    }

    zero_grads(pspan);
    Graph<T> g;
    const Var loss = cfg.regime == Regime::kAggregated ? aggregated_loss(net, g, batch, cfg.steps, ctx)
                                                       : batch_loss(net, g, batch, step, ctx);
    const double loss_value = static_cast<double>(g.value(loss)[0]);
    if (!std::isfinite(loss_value)) {
      throw std::runtime_error("train: non-finite loss at iteration " + std::to_string(it));
    }
    g.backward(loss);
    IterationRecord rec;
    rec.iteration = it;
    rec.epoch = epoch;
    rec.step = step;
    rec.loss = loss_value;
    // Parameters outside this iteration's graph (BN groups of other steps)
    // get no update at all, so weight decay cannot drift them.
    std::vector<Parameter<T>*> used;
    for (auto* p : params) {
      if (g.uses(*p)) used.push_back(p);
    }
    const std::span<Parameter<T>* const> uspan(used);
    rec.grad_norm_pre = clip_grad_norm(uspan, cfg.clip_max_norm);
    rec.grad_norm_post = global_grad_norm(uspan);
    SgdOptions opt;
    opt.lr = cfg.lr;
    if (cfg.lr_decay_every > 0) opt.lr *= std::pow(cfg.lr_decay_factor, epoch / cfg.lr_decay_every);
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    sgd_step(uspan, opt);
    state.iteration = it + 1;
    log.iterations.push_back(rec);
    if (hooks.on_iteration) hooks.on_iteration(rec);
    epoch_loss += loss_value;
    ++epoch_count;

    if (b == per_epoch - 1 || it + 1 == total) {
      EpochRecord er;
      er.epoch = epoch;
      er.iterations = it + 1;
      er.train_loss = epoch_loss / static_cast<double>(epoch_count);
      if (eval != nullptr) {
        for (int s : support) {
          er.metric[s] = eval->task == Task::kClassify ? evaluate_classification(net, *eval, s)
                                                       : evaluate_denoise(net, *eval, s);
        }
      }
      log.epochs.push_back(er);
      if (hooks.on_epoch) hooks.on_epoch(er);
      epoch_loss = 0;
      epoch_count = 0;
    }
  }
  return log;
}

template <typename T>
RunLog train_fixed(Network<T>& net, const Dataset& data, const TrainConfig& cfg, const Dataset* eval) {
  TrainConfig c = cfg;
  c.regime = Regime::kFixed;
  TrainerState state = initial_trainer_state(c);
  return train(net, data, eval, c, state);
}

template <typename T>
RunLog train_cost_adjustable(Network<T>& net, const Dataset& data, const TrainConfig& cfg, const Dataset* eval) {
  TrainConfig c = cfg;
  c.regime = Regime::kCostAdjustable;
  TrainerState state = initial_trainer_state(c);
  return train(net, data, eval, c, state);
}

template <typename T>
RunLog train_aggregated(Network<T>& net, const Dataset& data, const TrainConfig& cfg, const Dataset* eval) {
  TrainConfig c = cfg;
  c.regime = Regime::kAggregated;
  TrainerState state = initial_trainer_state(c);
  return train(net, data, eval, c, state);
}

template <typename T>
Tensor<T> infer(Network<T>& net, const Tensor<T>& input, int step) {
  Graph<T> g(/*grad_enabled=*/false);
  ForwardContext ctx;
  ctx.mode = Mode::kEval;
  const Var out = forward_checked(net, g, g.input(input), step, ctx);
  return g.value(out);
}

template <typename T>
double evaluate_classification(Network<T>& net, const Dataset& data, int step, Index batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_classification: empty dataset");
  if (data.task != Task::kClassify) throw std::invalid_argument("evaluate_classification: not a labeled dataset");
  Index wrong = 0;
  std::vector<Index> idx;
  for (Index begin = 0; begin < data.size(); begin += batch_size) {
    const Index end = std::min(data.size(), begin + batch_size);
    idx.resize(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<T> logits = infer(net, gather_batch<T>(data.images, idx), step);
    const Index k = logits.dim(1);
    for (Index i = 0; i < end - begin; ++i) {
      const T* row = logits.data() + i * k;
      const Index pred = std::max_element(row, row + k) - row;
      if (pred != data.labels[static_cast<std::size_t>(begin + i)]) ++wrong;
    }
  }
  return static_cast<double>(wrong) / static_cast<double>(data.size());
}

namespace {

template <typename T>
double image_psnr_sum(const Tensor<T>& a, const Tensor<float>& clean, Index first, double max_value, bool clip) {
  const Index count = a.dim(0);
  const Index sample = a.size() / count;
  double sum = 0;
  for (Index i = 0; i < count; ++i) {
    Tensor<double> x({sample});
    Tensor<double> y({sample});
    for (Index p = 0; p < sample; ++p) {
      double v = static_cast<double>(a[i * sample + p]);
      x[p] = clip ? std::clamp(v, 0.0, max_value) : v;
      y[p] = clean[(first + i) * sample + p];
    }
    sum += psnr(x, y, max_value);
  }
  return sum;
}

}  // namespace

template <typename T>
double evaluate_denoise(Network<T>& net, const Dataset& data, int step, double max_value, Index batch_size) {
  if (data.size() == 0) throw std::invalid_argument("evaluate_denoise: empty dataset");
  if (data.task != Task::kDenoise || data.noisy.empty()) {
    throw std::invalid_argument("evaluate_denoise: dataset has no noisy images");
  }
  double sum = 0;
  std::vector<Index> idx;
  for (Index begin = 0; begin < data.size(); begin += batch_size) {
    const Index end = std::min(data.size(), begin + batch_size);
    idx.resize(static_cast<std::size_t>(end - begin));
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor<T> out = infer(net, gather_batch<T>(data.noisy, idx), step);
    sum += image_psnr_sum(out, data.images, begin, max_value, true);
  }
  return sum / static_cast<double>(data.size());
}

double noisy_input_psnr(const Dataset& data, double max_value) {
  if (data.size() == 0 || data.noisy.empty()) throw std::invalid_argument("noisy_input_psnr: no noisy images");
  return image_psnr_sum(data.noisy, data.images, 0, max_value, true) / static_cast<double>(data.size());
}

double linear_probe_error(const Dataset& train, const Dataset& test, int epochs, double lr) {
  if (train.task != Task::kClassify || train.size() == 0 || test.size() == 0) {
    throw std::invalid_argument("linear_probe_error: needs non-empty labeled datasets");
  }
  const Index n = train.size();
  const Index d = train.images.size() / n;
  const Index k = train.num_classes;
  // Standardize features with training statistics.
  std::vector<double> mean(static_cast<std::size_t>(d)), inv_std(static_cast<std::size_t>(d));
  for (Index j = 0; j < d; ++j) {
    double s = 0, s2 = 0;
    for (Index i = 0; i < n; ++i) {
      const double v = train.images[i * d + j];
      s += v;
      s2 += v * v;
    }
    const double m = s / n;
    mean[static_cast<std::size_t>(j)] = m;
    inv_std[static_cast<std::size_t>(j)] = 1.0 / std::sqrt(std::max(s2 / n - m * m, 1e-12));
  }
  auto features = [&](const Dataset& ds) {
    const Index m = ds.size();
    Tensor<double> x({m, d});
    for (Index i = 0; i < m; ++i) {
      for (Index j = 0; j < d; ++j) {
        x[i * d + j] = (ds.images[i * d + j] - mean[static_cast<std::size_t>(j)]) * inv_std[static_cast<std::size_t>(j)];
      }
    }
    return x;
  };
  const Tensor<double> xtr = features(train);
  Parameter<double> w("probe.weight", Tensor<double>({k, d}));
  Parameter<double> b("probe.bias", Tensor<double>({k}));
  std::vector<Parameter<double>*> params{&w, &b};
  SgdOptions opt;
  opt.lr = lr;
  opt.momentum = 0.9;
  opt.weight_decay = 0;
  for (int e = 0; e < epochs; ++e) {
    zero_grads(std::span<Parameter<double>* const>(params));
    Graph<double> g;
    const Var logits = linear(g, g.input(xtr), g.parameter(w), g.parameter(b));
    g.backward(softmax_cross_entropy(g, logits, std::span<const int>(train.labels)));
    sgd_step(std::span<Parameter<double>* const>(params), opt);
  }
  const Tensor<double> xte = features(test);
  Graph<double> g(false);
  const Tensor<double>& logits = g.value(linear(g, g.input(xte), g.parameter(w), g.parameter(b)));
  Index wrong = 0;
  for (Index i = 0; i < test.size(); ++i) {
    const double* row = logits.data() + i * k;
    if (std::max_element(row, row + k) - row != test.labels[static_cast<std::size_t>(i)]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(test.size());
}

#define RCNET_INSTANTIATE_TRAIN(T)                                                                                   \
  template Var batch_loss<T>(Network<T>&, Graph<T>&, const Batch<T>&, int, const ForwardContext&);                 \
  template Var aggregated_loss<T>(Network<T>&, Graph<T>&, const Batch<T>&, const StepDistribution&,                \
                                  const ForwardContext&);                                                           \
  template RunLog train<T>(Network<T>&, const Dataset&, const Dataset*, const TrainConfig&, TrainerState&,         \
                           const TrainHooks<T>&);                                                                   \
  template RunLog train_fixed<T>(Network<T>&, const Dataset&, const TrainConfig&, const Dataset*);                 \
  template RunLog train_cost_adjustable<T>(Network<T>&, const Dataset&, const TrainConfig&, const Dataset*);       \
  template RunLog train_aggregated<T>(Network<T>&, const Dataset&, const TrainConfig&, const Dataset*);            \
  template Tensor<T> infer<T>(Network<T>&, const Tensor<T>&, int);                                                 \
  template double evaluate_classification<T>(Network<T>&, const Dataset&, int, Index);                             \
  template double evaluate_denoise<T>(Network<T>&, const Dataset&, int, double, Index);

RCNET_INSTANTIATE_TRAIN(float)
RCNET_INSTANTIATE_TRAIN(double)

}  // namespace rcnet
