// Acceptance run: one PASS/FAIL line per criterion. Pass criterion numbers as
// arguments to run a subset, e.g. `rcnet_acceptance 1 4 9`.

#include <sys/wait.h>

#include <chrono>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <map>
#include <set>
#include <sstream>

#include "rcnet/checkpoint.hpp"
#include "rcnet/cli.hpp"
#include "rcnet/cost.hpp"
#include "rcnet/parallel.hpp"
#include "rcnet/train.hpp"
#include "test_util.hpp"

using namespace rcnet;
using rcnet::testing::gradient_check;
using rcnet::testing::random_tensor;
using rcnet::testing::temp_dir;
namespace fs = std::filesystem;

namespace {

// Collects sub-check results; a criterion passes when every check does.
class Report {
 public:
  void check(bool ok, const std::string& what) {
    if (!ok) {
      pass_ = false;
      failures_ += (failures_.empty() ? "" : "; ") + what;
    }
  }
  void note(const std::string& text) { notes_ += (notes_.empty() ? "" : " ") + text; }
  bool pass() const { return pass_; }
  std::string detail() const { return pass_ ? notes_ : "failed: " + failures_ + (notes_.empty() ? "" : " | " + notes_); }

 private:
  bool pass_ = true;
  std::string failures_;
  std::string notes_;
};

std::string num(double v, int precision = 4) {
  std::ostringstream s;
  s << std::setprecision(precision) << v;
  return s.str();
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

template <typename T>
void perturb_bn(Network<T>& net, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.5, 1.5);
  std::normal_distribution<double> nd(0.0, 0.2);
  for (auto* grp : net.bn_groups()) {
    for (Index c = 0; c < grp->channels; ++c) {
      grp->gamma.value[c] = static_cast<T>(u(rng));
      grp->beta.value[c] = static_cast<T>(nd(rng));
      grp->running_mean[c] = static_cast<T>(nd(rng));
      grp->running_var[c] = static_cast<T>(u(rng));
    }
  }
}

template <typename T>
Tensor<T> forward(Network<T>& net, const Tensor<T>& x, int step, Mode mode) {
  Graph<T> g(false);
  ForwardContext ctx;
  ctx.mode = mode;
  ctx.update_running_stats = false;
  return g.value(net.forward(g, g.input(x), step, ctx));
}

template <typename T>
std::vector<Tensor<T>> snapshot(Network<T>& net) {
  std::vector<Tensor<T>> out;
  for (const auto& t : net.state(true)) out.push_back(*t.tensor);
  return out;
}

template <typename T>
bool same_state(const std::vector<Tensor<T>>& a, const std::vector<Tensor<T>>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!bit_equal(a[i], b[i])) return false;
  }
  return true;
}

int cli(std::vector<std::string> args) {
  args.insert(args.begin(), "rcnet");
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  if (code != 0) std::cerr << err.str();
  return code;
}

// ---- 1: expansion equivalence -------------------------------------------------

Report expansion_suite() {
  Report r;
  const auto spec = classifier_r2_spec(4, BnMode::kIndependent, {16, 64}, 3, 16, 10);
  double worst_f32 = 0, worst_f64 = 0, worst_grad = 0;
  {
    auto net = build_network<float>(spec, 1);
    perturb_bn(net, 2);
    const auto x = random_tensor<float>({16, 3, 16, 16}, 3);
    for (int s = 1; s <= 4; ++s) {
      auto ex = expand_to_standard(net, s);
      for (Mode m : {Mode::kEval, Mode::kTrain}) {
        worst_f32 = std::max(worst_f32, static_cast<double>(max_abs_diff(forward(net, x, s, m), forward(ex, x, s, m))));
      }
    }
  }
  auto net = build_network<double>(spec, 1);
  perturb_bn(net, 2);
  const auto x = random_tensor<double>({16, 3, 16, 16}, 3);
  std::vector<int> labels;
  for (int i = 0; i < 16; ++i) labels.push_back(i % 10);
  for (int s = 1; s <= 4; ++s) {
    auto ex = expand_to_standard(net, s);
    for (Mode m : {Mode::kEval, Mode::kTrain}) {
      worst_f64 = std::max(worst_f64, max_abs_diff(forward(net, x, s, m), forward(ex, x, s, m)));
    }
    ForwardContext ctx;
    ctx.update_running_stats = false;
    auto backprop = [&](Network<double>& n) {
      for (auto* p : n.parameters()) p->zero_grad();
      Graph<double> g;
      g.backward(softmax_cross_entropy(g, n.forward(g, g.input(x), s, ctx), labels));
      std::map<std::string, Tensor<double>> grads;
      for (auto* p : n.parameters()) grads[p->name] = p->grad;
      return grads;
    };
    const auto rc = backprop(net);
    const auto st = backprop(ex);
    for (const std::string cell : {"cell1", "cell2"}) {
      for (const std::string conv : {".conv1.weight", ".conv2.weight"}) {
        const Tensor<double>& shared = rc.at(cell + conv);
        Tensor<double> sum(shared.shape());
        for (int d = 1; d <= s; ++d) sum.add_(st.at(cell + ".depth" + std::to_string(d) + conv));
        worst_grad = std::max(worst_grad, max_abs_diff(shared, sum));
      }
    }
  }
  r.check(worst_f32 < 1e-5, "f32 forward deviation " + num(worst_f32));
  r.check(worst_f64 < 1e-10, "f64 forward deviation " + num(worst_f64));
  r.check(worst_grad < 1e-10, "shared gradient deviation " + num(worst_grad));
  r.note("fwd_f32=" + num(worst_f32) + " fwd_f64=" + num(worst_f64) + " grad_sum=" + num(worst_grad));
  return r;
}

// ---- 2: finite-difference gradients ------------------------------------------

Parameter<double> param(const std::string& name, Shape shape, std::uint64_t seed, double stddev = 1.0) {
  return Parameter<double>(name, random_tensor<double>(std::move(shape), seed, stddev));
}

Var project(Graph<double>& g, Var y, std::uint64_t seed) {
  return weighted_sum(g, y, random_tensor<double>(g.value(y).shape(), seed));
}

Report gradient_suite() {
  Report r;
  std::map<std::string, double> errs;
  {
    auto x = param("x", {2, 3, 5, 5}, 1);
    auto w = param("w", {4, 3, 3, 3}, 2, 0.5);
    auto b = param("b", {4}, 3);
    errs["conv"] = gradient_check({&x, &w, &b}, [&](Graph<double>& g) {
      return project(g, conv2d(g, g.parameter(x), g.parameter(w), g.parameter(b), 1, 1), 4);
    });
    auto x2 = param("x", {1, 2, 7, 7}, 5);
    auto w2 = param("w", {3, 2, 3, 3}, 6, 0.5);
    errs["conv_stride2"] = gradient_check({&x2, &w2}, [&](Graph<double>& g) {
      return project(g, conv2d(g, g.parameter(x2), g.parameter(w2), std::nullopt, 2, 0), 7);
    });
  }
  {
    auto x = param("x", {3, 2, 3, 3}, 8, 2.0);
    BnGroup<double> bn(2, "bn");
    bn.gamma.value = random_tensor<double>({2}, 9);
    bn.beta.value = random_tensor<double>({2}, 10);
    errs["bn_train"] = gradient_check({&x, &bn.gamma, &bn.beta}, [&](Graph<double>& g) {
      return project(g, batchnorm2d(g, g.parameter(x), bn, Mode::kTrain, false), 11);
    });
    bn.running_mean = random_tensor<double>({2}, 15);
    bn.running_var = Tensor<double>({2}, {0.7, 1.9});
    errs["bn_eval"] = gradient_check({&x, &bn.gamma, &bn.beta}, [&](Graph<double>& g) {
      return project(g, batchnorm2d(g, g.parameter(x), bn, Mode::kEval), 16);
    });
  }
  {
    auto x = param("x", {2, 3, 4, 6}, 20);
    errs["pools"] = gradient_check({&x}, [&](Graph<double>& g) {
      return add(g, project(g, avgpool2d(g, g.parameter(x)), 21), project(g, global_avgpool(g, g.parameter(x)), 22));
    });
    auto a = param("a", {2, 2, 4, 4}, 23);
    auto b = param("b", {1, 8, 2, 3}, 24);
    errs["invpool"] = gradient_check({&a, &b}, [&](Graph<double>& g) {
      return add(g, project(g, invpool(g, g.parameter(a)), 25), project(g, invpool_inverse(g, g.parameter(b)), 26));
    });
    auto c = param("c", {2, 3, 4}, 17);
    auto d = param("d", {2, 3, 4}, 18);
    errs["relu_add_scale"] = gradient_check({&c, &d}, [&](Graph<double>& g) {
      return project(g, add(g, relu(g, g.parameter(c)), scale(g, g.parameter(d), 1.7)), 19);
    });
  }
  {
    auto x = param("x", {3, 5}, 27);
    auto w = param("w", {4, 5}, 28);
    auto b = param("b", {4}, 29);
    errs["linear"] = gradient_check({&x, &w, &b}, [&](Graph<double>& g) {
      return project(g, linear(g, g.parameter(x), g.parameter(w), g.parameter(b)), 30);
    });
    auto logits = param("logits", {4, 5}, 31, 2.0);
    auto pred = param("pred", {2, 3, 2}, 32);
    const auto target = random_tensor<double>({2, 3, 2}, 33);
    const std::vector<int> labels{0, 4, 2, 2};
    errs["losses"] = gradient_check({&logits, &pred}, [&](Graph<double>& g) {
      return add(g, softmax_cross_entropy(g, g.parameter(logits), labels), mse_loss(g, g.parameter(pred), target));
    });
  }
  for (CellKind kind : {CellKind::kPreactResblock, CellKind::kConvBnRelu}) {
    std::mt19937_64 rng(34);
    CellBody<double> body(kind, 3, "cell", rng);
    std::vector<BnGroup<double>> bns;
    for (std::size_t k = 0; k < body.convs.size(); ++k) {
      bns.emplace_back(3, "bn" + std::to_string(k));
      bns.back().gamma.value = random_tensor<double>({3}, 35 + k);
      bns.back().beta.value = random_tensor<double>({3}, 45 + k);
    }
    std::vector<BnGroup<double>*> groups;
    std::vector<Parameter<double>*> params;
    auto x = param("x", {2, 3, 4, 4}, 37);
    params.push_back(&x);
    for (auto& c : body.convs) params.push_back(&c);
    for (auto& bn : bns) {
      groups.push_back(&bn);
      params.push_back(&bn.gamma);
      params.push_back(&bn.beta);
    }
    ForwardContext ctx;
    ctx.update_running_stats = false;
    errs[kind == CellKind::kPreactResblock ? "residual_block" : "conv_bn_relu_block"] =
        gradient_check(params, [&](Graph<double>& g) {
          return project(g, run_cell_body(g, body, g.parameter(x), std::span<BnGroup<double>* const>(groups), ctx),
                         38);
        });
  }
  double worst = 0;
  for (const auto& [op, e] : errs) {
    r.check(e < 1e-6, op + " rel err " + num(e));
    worst = std::max(worst, e);
  }
  r.note(std::to_string(errs.size()) + " checks, worst rel err " + num(worst));
  return r;
}

// ---- 3: structural table ------------------------------------------------------

Report structure_table() {
  Report r;
  const int depth[] = {6, 10, 14, 18};
  Index conv1 = cost_report(classifier_r2_spec(1, BnMode::kIndependent)).conv_params;
  for (int n = 1; n <= 4; ++n) {
    const CostReport c = cost_report(classifier_r2_spec(n, BnMode::kIndependent));
    r.check(c.unrolled_depth == depth[n - 1], "depth at n=" + std::to_string(n) + " is " + std::to_string(c.unrolled_depth));
    r.check(c.conv_params == conv1, "conv params differ at n=" + std::to_string(n));
  }
  const Index rc = cost_report(classifier_r2_spec(4, BnMode::kIndependent)).total_params;
  auto expanded = classifier_r2_spec(4, BnMode::kIndependent);
  expanded.expanded_step = 4;
  const Index st = cost_report(expanded).total_params;
  r.check(std::abs(rc - 1.263e6) <= 0.05 * 1.263e6, "R2^4 params " + std::to_string(rc));
  r.check(std::abs(st - 5.023e6) <= 0.05 * 5.023e6, "S2^4 params " + std::to_string(st));
  r.note("depth=6,10,14,18 R2^4=" + std::to_string(rc) + " S2^4=" + std::to_string(st) +
         " conv=" + std::to_string(conv1));
  return r;
}

// ---- 4: BN bank arithmetic and usage audit -------------------------------------

template <typename T>
std::vector<CellModule<T>*> cells(Network<T>& net) {
  std::vector<CellModule<T>*> out;
  for (auto& m : net.modules()) {
    if (auto* c = std::get_if<CellModule<T>>(&m)) out.push_back(c);
  }
  return out;
}

Report bank_audit() {
  Report r;
  for (int m = 1; m <= 5; ++m) {
    auto ind = build_network<float>(classifier_r2_spec(m, BnMode::kIndependent, {4, 16}, 3, 8, 3), 1);
    auto dbl = build_network<float>(classifier_r2_spec(m, BnMode::kDoubleIndependent, {4, 16}, 3, 8, 3), 1);
    for (auto* c : cells(ind)) {
      r.check(c->cell.bank.group_count() == static_cast<std::size_t>(m * c->cell.bank.slots()),
              "independent count m=" + std::to_string(m));
    }
    for (auto* c : cells(dbl)) {
      r.check(c->cell.bank.group_count() == static_cast<std::size_t>(m * (m + 1) / 2 * c->cell.bank.slots()),
              "double-independent count m=" + std::to_string(m));
    }
  }

  const int m = 4;
  auto net = build_network<float>(classifier_r2_spec(m, BnMode::kDoubleIndependent, {4, 16}, 3, 8, 3), 2);
  const Dataset data = make_synthetic_classification(3, 400, 8, 3);
  TrainConfig cfg;
  cfg.regime = Regime::kCostAdjustable;
  cfg.steps = StepDistribution({1, 2, 3, 4}, {0.25, 0.25, 0.25, 0.25});
  cfg.batch_size = 4;
  cfg.epochs = 10;
  cfg.max_iterations = 1000;
  for (auto* grp : net.bn_groups()) grp->reset_audit();
  Index iterations = 0;
  Index leaks = 0;
  Index misses = 0;
  std::map<int, Index> per_step;
  TrainHooks<float> hooks;
  hooks.on_iteration = [&](const IterationRecord& rec) {
    ++iterations;
    ++per_step[rec.step];
    for (auto* c : cells(net)) {
      auto& bank = c->cell.bank;
      for (std::size_t a = 0; a < bank.address_count(); ++a) {
        const bool in_row = bank.address(a).step == rec.step;
        for (int k = 0; k < bank.slots(); ++k) {
          auto& grp = bank.group(a, k);
          if (in_row && (grp.forward_count != 1 || grp.stat_updates != 1)) ++misses;
          if (!in_row && (grp.forward_count != 0 || grp.stat_updates != 0)) ++leaks;
        }
      }
    }
    for (auto* grp : net.bn_groups()) grp->reset_audit();
  };
  TrainerState state = initial_trainer_state(cfg);
  train(net, data, nullptr, cfg, state, hooks);
  r.check(iterations == 1000, "ran " + std::to_string(iterations) + " iterations");
  r.check(leaks == 0, std::to_string(leaks) + " leaked group uses");
  r.check(misses == 0, std::to_string(misses) + " missed group uses");
  r.check(per_step.size() == 4, "not every step was sampled");
  r.note("counts exact for m=1..5; audit over " + std::to_string(iterations) + " iterations, leaks=" +
         std::to_string(leaks) + " misses=" + std::to_string(misses));
  return r;
}

// ---- 5: BN mode comparison ------------------------------------------------------

Report bn_mode_comparison() {
  Report r;
  const auto t0 = std::chrono::steady_clock::now();
  const Dataset train_set = make_synthetic_classification(3, 2000, 16, 11);
  const Dataset test_set = make_synthetic_classification(3, 500, 16, 12);
  std::map<BnMode, double> test_err, train_err;
  for (BnMode mode : {BnMode::kNone, BnMode::kShared, BnMode::kIndependent}) {
    std::string errs;
    for (std::uint64_t seed = 1; seed <= 3; ++seed) {
      auto net = build_classifier_r2<float>(3, mode, seed, {8, 32}, 3, 16, 3);
      TrainConfig cfg;
      cfg.steps = StepDistribution::fixed(3);
      cfg.epochs = 6;
      cfg.seed = seed;
      train_fixed(net, train_set, cfg);
      const double te = evaluate_classification(net, test_set, 3);
      test_err[mode] += te / 3;
      train_err[mode] += evaluate_classification(net, train_set, 3) / 3;
      errs += (errs.empty() ? "" : "/") + num(te, 3);
    }
    r.note(std::string(to_string(mode)) + " test_err=" + errs + " mean=" + num(test_err[mode], 3) +
           " train_err=" + num(train_err[mode], 3) + ";");
  }
  const double secs = seconds_since(t0);
  r.check(test_err[BnMode::kIndependent] < test_err[BnMode::kShared], "independent test error not below shared");
  r.check(train_err[BnMode::kIndependent] <= 0.10, "independent train error above 10%");
  r.check(secs <= 15 * 60, "took " + num(secs) + "s");
  return r;
}

// ---- 6: cost-adjustable versus fixed-step --------------------------------------

Report cost_adjustable_vs_fixed() {
  Report r;
  const Dataset train_set = make_synthetic_classification(3, 2000, 16, 11);
  const Dataset test_set = make_synthetic_classification(3, 500, 16, 12);
  const auto dir = temp_dir("acceptance_adj");

  auto adj = build_classifier_r2<float>(4, BnMode::kDoubleIndependent, 1, {8, 32}, 3, 16, 3);
  TrainConfig cfg;
  cfg.regime = Regime::kCostAdjustable;
  cfg.steps = StepDistribution({2, 3, 4}, {0.2, 0.3, 0.5});
  cfg.epochs = 6;
  train_cost_adjustable(adj, train_set, cfg);
  save_checkpoint(adj, TrainerState{}, dir / "adj.ckpt");
  auto restored = load_checkpoint<float>(dir / "adj.ckpt");

  for (int s : {2, 3, 4}) {
    auto fixed = build_classifier_r2<float>(s, BnMode::kIndependent, 1, {8, 32}, 3, 16, 3);
    TrainConfig fc;
    fc.steps = StepDistribution::fixed(s);
    fc.epochs = 6;
    train_fixed(fixed, train_set, fc);
    const double e_adj = evaluate_classification(restored, test_set, s);
    const double e_fix = evaluate_classification(fixed, test_set, s);
    r.check(std::abs(e_adj - e_fix) <= 0.05, "step " + std::to_string(s) + " gap " + num(e_adj - e_fix, 3));
    r.note("s=" + std::to_string(s) + " adjustable=" + num(e_adj, 3) + " fixed=" + num(e_fix, 3) + ";");
  }
  return r;
}

// ---- 7: denoising ----------------------------------------------------------------

Report denoise() {
  Report r;
  const auto t0 = std::chrono::steady_clock::now();
  Dataset train_set;
  train_set.task = Task::kDenoise;
  train_set.images = make_synthetic_textures(32, 64, 7);
  train_set.sigma = 25.0;
  const Dataset test_set = make_denoise_set(make_synthetic_textures(8, 64, 1000010), 25.0, 2000010, "test");
  const double noisy = noisy_input_psnr(test_set);

  auto net = build_denoiser_r3<float>(2, BnMode::kIndependent, 1, 16, 1, 40);
  TrainConfig cfg;
  cfg.steps = StepDistribution::fixed(2);
  cfg.epochs = 400;
  cfg.batch_size = 8;
  cfg.patch_size = 40;
  train_fixed(net, train_set, cfg);
  const double out = evaluate_denoise(net, test_set, 2);
  const double secs = seconds_since(t0);

  auto zero = build_denoiser_r3<float>(2, BnMode::kIndependent, 1, 16, 1, 40);
  for (auto& m : zero.modules()) {
    if (auto* h = std::get_if<DenoiseHeadModule<float>>(&m)) h->head.weight.value.zero();
  }
  const double zero_psnr = evaluate_denoise(zero, test_set, 2);
  r.check(out - noisy >= 3.0, "gain " + num(out - noisy) + " dB");
  r.check(secs <= 600, "took " + num(secs) + "s");
  r.check(zero_psnr == noisy, "zero-head PSNR " + num(zero_psnr, 10) + " vs noisy " + num(noisy, 10));
  r.note("noisy=" + num(noisy) + "dB output=" + num(out) + "dB gain=" + num(out - noisy, 3) + "dB train=" +
         num(secs, 3) + "s zero_head=" + num(zero_psnr));
  return r;
}

// ---- 8: determinism, round trip, resume ----------------------------------------

const char* kToyIni =
    "[network]\narch = r2_classifier\nmax_step = 4\nbn_mode = double_independent\nwidths = 4,16\nimage_size = 8\n"
    "num_classes = 3\n"
    "[train]\nregime = cost_adjustable\nsteps = 2,3,4\nstep_probs = 0.2,0.3,0.5\nepochs = 3\nbatch_size = 16\n"
    "[data]\ntrain_samples = 96\ntest_samples = 32\n";

Report determinism() {
  Report r;
  set_max_threads(1);
  const auto dir = temp_dir("acceptance_det");
  std::ofstream(dir / "toy.ini") << kToyIni;
  for (const char* run : {"a", "b"}) {
    r.check(cli({"train", "--config", (dir / "toy.ini").string(), "--out-dir", (dir / run).string(),
                 "--deterministic"}) == 0,
            std::string("train run ") + run);
  }
  r.check(slurp(dir / "a" / "final.ckpt") == slurp(dir / "b" / "final.ckpt"), "checkpoints differ");
  r.check(slurp(dir / "a" / "metrics.csv") == slurp(dir / "b" / "metrics.csv"), "metrics.csv differs");

  TrainerState st;
  auto net = load_checkpoint<float>(dir / "a" / "final.ckpt", &st);
  save_checkpoint(net, st, dir / "resaved.ckpt");
  r.check(slurp(dir / "resaved.ckpt") == slurp(dir / "a" / "final.ckpt"), "save/load/save not byte-identical");

  std::string partial = kToyIni;
  partial.insert(partial.find("[data]"), "max_iterations = 7\n");
  std::ofstream(dir / "partial.ini") << partial;
  r.check(cli({"train", "--config", (dir / "partial.ini").string(), "--out-dir", (dir / "p").string()}) == 0,
          "partial run");
  r.check(cli({"train", "--config", (dir / "toy.ini").string(), "--out-dir", (dir / "resumed").string(),
               "--checkpoint", (dir / "p" / "final.ckpt").string()}) == 0,
          "resumed run");
  r.check(slurp(dir / "resumed" / "final.ckpt") == slurp(dir / "a" / "final.ckpt"),
          "resumed run diverged from uninterrupted run");
  r.note("two runs, round trip and resume at iteration 7 all byte-identical");
  return r;
}

// ---- 9: regime collapse -------------------------------------------------------------

Report regime_collapse() {
  Report r;
  const Dataset data = make_synthetic_classification(3, 400, 8, 5);
  const auto spec = classifier_r2_spec(3, BnMode::kDoubleIndependent, {4, 16}, 3, 8, 3);
  auto fixed = build_network<float>(spec, 9);
  auto adj = build_network<float>(spec, 9);
  TrainConfig cfg;
  cfg.steps = StepDistribution::fixed(3);
  cfg.batch_size = 8;
  cfg.epochs = 10;
  cfg.max_iterations = 200;
  cfg.seed = 4;
  const RunLog a = train_fixed(fixed, data, cfg);
  cfg.regime = Regime::kCostAdjustable;
  const RunLog b = train_cost_adjustable(adj, data, cfg);
  r.check(a.iterations.size() == 200 && b.iterations.size() == 200, "iteration count");
  bool same_log = a.iterations.size() == b.iterations.size();
  for (std::size_t i = 0; same_log && i < a.iterations.size(); ++i) {
    same_log = a.iterations[i].loss == b.iterations[i].loss && a.iterations[i].grad_norm_pre == b.iterations[i].grad_norm_pre;
  }
  r.check(same_log, "loss trajectories differ");
  r.check(same_state(snapshot(fixed), snapshot(adj)), "final states differ");
  r.note("200 iterations, losses and all state tensors bit-identical");
  return r;
}

// ---- 10: formats ---------------------------------------------------------------------

Report formats() {
  Report r;
  const auto dir = temp_dir("acceptance_fmt");
  {
    const int n = 7;
    std::ofstream out(dir / "fixture.bin", std::ios::binary);
    for (int i = 0; i < n; ++i) {
      out.put(static_cast<char>((i * 3) % 10));
      for (int c = 0; c < 3; ++c)
        for (int p = 0; p < 1024; ++p) out.put(static_cast<char>((5 * i + 7 * c + p) % 256));
    }
  }
  r.check(fs::file_size(dir / "fixture.bin") == 3073u * 7u, "fixture size");
  const Dataset d = load_cifar10({dir / "fixture.bin"});
  bool exact = d.size() == 7 && d.images.shape() == Shape{7, 3, 32, 32};
  for (int i = 0; exact && i < 7; ++i) {
    exact = d.labels[static_cast<std::size_t>(i)] == (i * 3) % 10;
    for (int c = 0; exact && c < 3; ++c)
      for (int p = 0; exact && p < 1024; ++p)
        exact = d.images.at({i, c, p / 32, p % 32}) == static_cast<float>((5 * i + 7 * c + p) % 256) / 255.f;
  }
  r.check(exact, "CIFAR fixture decoded inexactly");

  auto net = build_denoiser_r3<float>(2, BnMode::kIndependent, 1, 4, 1, 16);
  save_checkpoint(net, TrainerState{}, dir / "den.ckpt");
  Tensor<float> img({1, 1, 20, 36});
  for (Index i = 0; i < img.size(); ++i) img[i] = static_cast<float>((i * 29) % 256);
  write_pgm(dir / "in.pgm", img);
  const std::string cmd = std::string(RCNET_BINARY) + " infer --checkpoint " + (dir / "den.ckpt").string() +
                          " --input " + (dir / "in.pgm").string() + " --output " + (dir / "out.pgm").string() +
                          " > /dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  r.check(WIFEXITED(status) && WEXITSTATUS(status) == 0, "infer exited abnormally");
  r.check(fs::exists(dir / "out.pgm") && read_pgm(dir / "out.pgm").shape() == img.shape(), "PGM dimensions changed");

  const fs::path golden = RCNET_GOLDEN_DIR;
  auto golden_line = [&](const char* name) {
    std::ifstream in(golden / name);
    std::string line;
    std::getline(in, line);
    return line;
  };
  r.check(cli({"cost", "--config", (golden / "cost_sweep.ini").string(), "--sweep", "--out-dir", dir.string()}) == 0,
          "cost sweep");
  r.check(slurp(dir / "cost.csv") == slurp(golden / "cost_sweep.csv"), "cost.csv golden mismatch");
  r.check(metrics_csv_header("err", {2, 3, 4}) == golden_line("metrics_header_err_2_3_4.csv"), "metrics header");
  r.check(metrics_csv_header("psnr", {2}) == golden_line("metrics_header_psnr_2.csv"), "psnr metrics header");
  r.check(cost_csv_header(4) == golden_line("cost_header_4.csv"), "cost header");
  r.check(kIterationsCsvHeader == golden_line("iterations_header.csv"), "iterations header");
  r.check(kEvalCsvHeader == golden_line("eval_header.csv"), "eval header");
  r.check(kBnCsvHeader == golden_line("bn_header.csv"), "bn header");
  r.note("CIFAR 7-record fixture exact, PGM 20x36 preserved, 7 golden files match");
  return r;
}

struct Criterion {
  int id;
  const char* name;
  double budget_seconds;  // 0 = no time limit of its own
  std::function<Report()> run;
};

}  // namespace

int main(int argc, char** argv) {
  configure_threads_from_env();
  const std::vector<Criterion> criteria = {
      {1, "expansion-equivalence", 120, expansion_suite},
      {2, "gradient-suite", 120, gradient_suite},
      {3, "structural-table", 0, structure_table},
      {4, "bn-bank-arithmetic", 0, bank_audit},
      {5, "bn-mode-comparison", 900, bn_mode_comparison},
      {6, "cost-adjustable-vs-fixed", 0, cost_adjustable_vs_fixed},
      {7, "denoise", 0, denoise},
      {8, "determinism", 0, determinism},
      {9, "regime-collapse", 0, regime_collapse},
      {10, "formats", 0, formats},
  };
  std::set<int> selected;
  for (int i = 1; i < argc; ++i) selected.insert(std::atoi(argv[i]));

  int failed = 0;
  for (const auto& c : criteria) {
    if (!selected.empty() && !selected.count(c.id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Report rep;
    try {
      rep = c.run();
    } catch (const std::exception& e) {
      rep.check(false, std::string("exception: ") + e.what());
    }
    const double secs = seconds_since(t0);
    if (c.budget_seconds > 0) rep.check(secs <= c.budget_seconds, "over the " + num(c.budget_seconds) + "s budget");
    if (!rep.pass()) ++failed;
    std::cout << (rep.pass() ? "PASS" : "FAIL") << " criterion " << c.id << " " << c.name << " (" << std::fixed
              << std::setprecision(1) << secs << "s) " << std::defaultfloat << rep.detail() << std::endl;
  }
  return failed == 0 ? 0 : 1;
}
