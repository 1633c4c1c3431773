#include "rcnet/cli.hpp"

#include <CLI11.hpp>
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "rcnet/checkpoint.hpp"
#include "rcnet/cost.hpp"
#include "rcnet/parallel.hpp"

namespace rcnet {

namespace fs = std::filesystem;

std::string metrics_csv_header(const std::string& metric, const std::vector<int>& support) {
  std::string h = "epoch,iterations,train_loss";
  for (int s : support) h += "," + metric + "@" + std::to_string(s);
  return h;
}

std::string cost_csv_header(int max_step) {
  std::string h = "mode,max_step,conv_params,bn_params,linear_params,total,depth";
  for (int s = 1; s <= max_step; ++s) h += ",flops@" + std::to_string(s);
  return h;
}

namespace {

template <typename T>
std::string fmt(T v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw std::runtime_error("write failed for '" + path.string() + "'");
}

Tensor<float> stack_images(const std::vector<std::string>& files) {
  std::vector<Tensor<float>> images;
  for (const auto& f : files) images.push_back(read_pgm(f));
  const Shape first = images.front().shape();
  for (std::size_t i = 1; i < images.size(); ++i) {
    if (images[i].shape() != first) {
      throw DataError("pgm_denoise: '" + files[i] + "' is " + to_string(images[i].shape()) + ", expected " +
                      to_string(first) + " like '" + files[0] + "'");
    }
  }
  Tensor<float> out({static_cast<Index>(images.size()), 1, first[2], first[3]});
  const Index plane = first[2] * first[3];
  for (std::size_t i = 0; i < images.size(); ++i) {
    std::copy_n(images[i].data(), plane, out.data() + static_cast<Index>(i) * plane);
  }
  return out;
}

Tensor<float> read_image(const fs::path& path) {
  return path.extension() == ".pgm" ? read_pgm(path) : read_raw_tensor(path);
}

std::string support_text(const std::vector<int>& support) {
  std::string s;
  for (std::size_t i = 0; i < support.size(); ++i) s += (i ? "," : "") + std::to_string(support[i]);
  return "{" + s + "}";
}

struct CommonOptions {
  std::string config;
  std::string checkpoint;
  std::optional<int> step;
  std::optional<std::uint64_t> seed;
  bool deterministic = false;
  std::string out_dir;
};

template <typename T>
Index write_bn_csv(Network<T>& net, const fs::path& path);

// ---- train ---------------------------------------------------------------------

template <typename T>
int cmd_train(ExperimentConfig cfg, const CommonOptions& opt, std::ostream& out) {
  if (opt.seed) cfg.train.seed = *opt.seed;
  if (!opt.out_dir.empty()) cfg.output.dir = opt.out_dir;
  const fs::path dir = cfg.output.dir;
  fs::create_directories(dir);
  write_text(dir / "config.resolved.ini", to_ini(cfg));

  const Datasets data = load_datasets(cfg);
  Network<T> net(cfg.network, cfg.train.seed);
  TrainerState state = initial_trainer_state(cfg.train);
  if (!opt.checkpoint.empty()) load_checkpoint_into(net, &state, opt.checkpoint);

  const bool classify = cfg.network.task() == Task::kClassify;
  std::optional<double> best;
  TrainHooks<T> hooks;
  hooks.on_epoch = [&](const EpochRecord& rec) {
    if (rec.metric.empty()) return;
    double mean = 0;
    for (const auto& [s, v] : rec.metric) mean += v;
    mean /= static_cast<double>(rec.metric.size());
    const double score = classify ? -mean : mean;
    if (!best || score > *best) {
      best = score;
      save_checkpoint(net, state, dir / "best.ckpt");
    }
  };
  const RunLog log = train(net, data.train, &data.test, cfg.train, state, hooks);
  save_checkpoint(net, state, dir / "final.ckpt");

  std::ostringstream metrics;
  metrics << metrics_csv_header(log.metric_name, cfg.train.steps.support()) << "\n";
  for (const auto& e : log.epochs) {
    metrics << e.epoch << ',' << e.iterations << ',' << fmt(e.train_loss);
    for (int s : cfg.train.steps.support()) metrics << ',' << (e.metric.count(s) ? fmt(e.metric.at(s)) : "");
    metrics << "\n";
  }
  write_text(dir / "metrics.csv", metrics.str());

  std::ostringstream iters;
  iters << kIterationsCsvHeader << "\n";
  for (const auto& r : log.iterations) {
    iters << r.iteration << ',' << r.epoch << ',' << r.step << ',' << fmt(r.loss) << ',' << fmt(r.grad_norm_pre) << ','
          << fmt(r.grad_norm_post) << "\n";
  }
  write_text(dir / "iterations.csv", iters.str());
  if (cfg.output.export_bn) write_bn_csv(net, dir / "bn.csv");

  out << "trained " << log.iterations.size() << " iterations; run directory " << dir.string() << "\n";
  if (!log.epochs.empty()) {
    for (const auto& [s, v] : log.epochs.back().metric) {
      out << "metric=" << log.metric_name << " step=" << s << " value=" << fmt(v) << "\n";
    }
  }
  return kExitOk;
}

// ---- eval ----------------------------------------------------------------------

template <typename T>
int cmd_eval(const ExperimentConfig& cfg, const CommonOptions& opt, std::ostream& out) {
  Network<T> net = load_checkpoint<T>(opt.checkpoint);
  if (!(net.spec() == cfg.network)) {
    throw ConfigError("[network] section of '" + opt.config + "' does not describe the checkpoint's network");
  }
  const Datasets data = load_datasets(cfg);
  const std::vector<int> steps = opt.step ? std::vector<int>{*opt.step} : net.support();
  for (int s : steps) {
    if (!net.supports(s)) {
      throw std::invalid_argument("step " + std::to_string(s) + " is outside the trained support " +
                                  support_text(net.support()));
    }
  }
  const CostReport cost = cost_report(net.spec());
  const bool classify = net.spec().task() == Task::kClassify;
  const std::string metric = classify ? "err" : "psnr";
  std::ostringstream csv;
  csv << kEvalCsvHeader << "\n";
  for (int s : steps) {
    const double v = classify ? evaluate_classification(net, data.test, s) : evaluate_denoise(net, data.test, s);
    out << "metric=" << metric << " step=" << s << " value=" << fmt(v) << "\n";
    csv << metric << ',' << s << ',' << fmt(v) << ',' << cost.flops_per_step.at(s) << "\n";
  }
  const fs::path dir = opt.out_dir.empty() ? fs::path(".") : fs::path(opt.out_dir);
  fs::create_directories(dir);
  write_text(dir / "eval.csv", csv.str());
  return kExitOk;
}

// ---- infer ---------------------------------------------------------------------

template <typename T>
int cmd_infer(const CommonOptions& opt, const std::string& input, const std::string& output, std::ostream& out) {
  Network<T> net = load_checkpoint<T>(opt.checkpoint);
  const int step = opt.step.value_or(net.support().back());
  Tensor<float> x = read_image(input);
  if (x.rank() == 3) x.reshape({1, x.dim(0), x.dim(1), x.dim(2)});
  const Tensor<float> y = to_float(infer(net, cast<T>(x), step));
  if (fs::path(output).extension() == ".pgm") {
    write_pgm(output, y);
  } else {
    write_raw_tensor(output, y);
  }
  out << "wrote " << output << " shape " << to_string(y.shape()) << " step=" << step << "\n";
  return kExitOk;
}

// ---- cost ----------------------------------------------------------------------

int cmd_cost(const ExperimentConfig& cfg, const CommonOptions& opt, bool sweep, std::ostream& out) {
  std::vector<NetworkSpec> specs;
  if (sweep) {
    for (int n = 1; n <= cfg.network.max_step; ++n) {
      NetworkSpec s = cfg.network;
      s.max_step = n;
      specs.push_back(s);
    }
  } else {
    specs.push_back(cfg.network);
  }
  const int max_step = cfg.network.max_step;
  std::ostringstream csv;
  csv << cost_csv_header(max_step) << "\n";
  out << std::left << std::setw(20) << "mode" << std::right << std::setw(9) << "max_step" << std::setw(13) << "conv"
      << std::setw(10) << "bn" << std::setw(10) << "linear" << std::setw(13) << "total" << std::setw(7) << "depth"
      << "  flops per step\n";
  for (const auto& s : specs) {
    const CostReport r = cost_report(s);
    csv << to_string(s.bn_mode) << ',' << s.max_step << ',' << r.conv_params << ',' << r.bn_params << ','
        << r.linear_params << ',' << r.total_params << ',' << r.unrolled_depth;
    for (int k = 1; k <= max_step; ++k) {
      csv << ',';
      if (r.flops_per_step.count(k)) csv << r.flops_per_step.at(k);
    }
    csv << "\n";
    out << std::left << std::setw(20) << to_string(s.bn_mode) << std::right << std::setw(9) << s.max_step
        << std::setw(13) << r.conv_params << std::setw(10) << r.bn_params << std::setw(10) << r.linear_params
        << std::setw(13) << r.total_params << std::setw(7) << r.unrolled_depth << " ";
    for (const auto& [k, f] : r.flops_per_step) out << ' ' << k << ':' << f;
    out << "\n";
  }
  const fs::path dir = opt.out_dir.empty() ? fs::path(".") : fs::path(opt.out_dir);
  fs::create_directories(dir);
  write_text(dir / "cost.csv", csv.str());
  return kExitOk;
}

// ---- expand-check --------------------------------------------------------------

template <typename T>
int cmd_expand_check(const CommonOptions& opt, Index inputs, std::ostream& out) {
  Network<T> net = load_checkpoint<T>(opt.checkpoint);
  if (net.spec().bn_mode == BnMode::kShared) {
    throw std::invalid_argument("expand-check: shared-BN networks have no per-depth expansion");
  }
  const std::vector<int> steps = opt.step ? std::vector<int>{*opt.step} : net.support();
  const double threshold = 1e-5;
  std::mt19937_64 rng(opt.seed.value_or(1));
  const auto& spec = net.spec();
  Tensor<T> x({inputs, spec.in_channels, spec.image_size, spec.image_size});
  if (spec.task() == Task::kDenoise) {
    std::uniform_real_distribution<double> u(0.0, spec.value_range);
    for (T& v : x.values()) v = static_cast<T>(u(rng));
  } else {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (T& v : x.values()) v = static_cast<T>(nd(rng));
  }
  bool pass = true;
  for (int s : steps) {
    Network<T> expanded = expand_to_standard(net, s);
    for (Mode mode : {Mode::kEval, Mode::kTrain}) {
      ForwardContext ctx;
      ctx.mode = mode;
      ctx.update_running_stats = false;
      Graph<T> ga(false);
      Graph<T> gb(false);
      const Tensor<T>& a = ga.value(net.forward(ga, ga.input(x), s, ctx));
      const Tensor<T>& b = gb.value(expanded.forward(gb, gb.input(x), s, ctx));
      const double diff = static_cast<double>(max_abs_diff(a, b));
      const bool ok = diff < threshold;
      pass = pass && ok;
      out << "expand-check step=" << s << " mode=" << (mode == Mode::kEval ? "eval" : "train")
          << " max_abs_diff=" << fmt(diff) << " threshold=" << fmt(threshold) << " result=" << (ok ? "pass" : "fail")
          << "\n";
    }
  }
  if (!pass) throw CheckFailure("expand-check: expanded network deviates beyond " + fmt(threshold));
  return kExitOk;
}

// ---- export-bn -----------------------------------------------------------------

template <typename T>
Index write_bn_csv(Network<T>& net, const fs::path& path) {
  std::ostringstream csv;
  csv << kBnCsvHeader << "\n";
  Index rows = 0;
  for (auto& module : net.modules()) {
    auto* cm = std::get_if<CellModule<T>>(&module);
    if (cm == nullptr) continue;
    auto& bank = cm->cell.bank;
    for (std::size_t a = 0; a < bank.address_count(); ++a) {
      const BankAddress addr = bank.address(a);
      for (int k = 0; k < bank.slots(); ++k) {
        const BnGroup<T>& g = bank.group(a, k);
        for (Index c = 0; c < g.channels; ++c) {
          csv << cm->cell.name << ',' << a << ',' << addr.step << ',' << addr.unroll << ',' << k << ',' << c << ','
              << fmt(g.gamma.value[c]) << ',' << fmt(g.beta.value[c]) << ',' << fmt(g.running_mean[c]) << ','
              << fmt(g.running_var[c]) << "\n";
          ++rows;
        }
      }
    }
  }
  write_text(path, csv.str());
  return rows;
}

template <typename T>
int cmd_export_bn(const CommonOptions& opt, std::ostream& out) {
  Network<T> net = load_checkpoint<T>(opt.checkpoint);
  const fs::path dir = opt.out_dir.empty() ? fs::path(".") : fs::path(opt.out_dir);
  fs::create_directories(dir);
  const Index rows = write_bn_csv(net, dir / "bn.csv");
  out << "wrote " << (dir / "bn.csv").string() << " rows=" << rows << "\n";
  return kExitOk;
}

// ---- export-features -----------------------------------------------------------

template <typename T>
int cmd_export_features(const CommonOptions& opt, const std::string& input, const std::string& cell,
                        std::ostream& out) {
  Network<T> net = load_checkpoint<T>(opt.checkpoint);
  const int step = opt.step.value_or(net.support().back());
  const std::string name = cell.rfind("cell", 0) == 0 ? cell : "cell" + cell;
  const fs::path dir = opt.out_dir.empty() ? fs::path(".") : fs::path(opt.out_dir);
  fs::create_directories(dir);
  Tensor<float> x = read_image(input);
  if (x.rank() == 3) x.reshape({1, x.dim(0), x.dim(1), x.dim(2)});
  int written = 0;
  net.set_feature_observer([&](const std::string& cell_name, int j, const Tensor<T>& state) {
    if (cell_name != name) return;
    const fs::path file = dir / (name + "_step" + std::to_string(step) + "_unroll" + std::to_string(j) + ".f32");
    write_raw_tensor(file, to_float(state));
    out << "wrote " << file.string() << " shape " << to_string(state.shape()) << "\n";
    ++written;
  });
  infer(net, cast<T>(x), step);
  if (written == 0) throw std::invalid_argument("export-features: network has no cell named '" + name + "'");
  return kExitOk;
}

template <typename F>
int dispatch(DType dtype, F&& fn) {
  return dtype == DType::kFloat64 ? fn(double{}) : fn(float{});
}

}  // namespace

Datasets load_datasets(const ExperimentConfig& cfg) {
  const DataConfig& d = cfg.data;
  const NetworkSpec& n = cfg.network;
  Datasets out;
  switch (d.kind) {
    case DataKind::kSyntheticClassification:
      out.train = make_synthetic_classification(static_cast<int>(n.num_classes), d.train_samples, n.image_size, d.seed,
                                                n.in_channels, d.pixel_noise);
      out.test = make_synthetic_classification(static_cast<int>(n.num_classes), d.test_samples, n.image_size,
                                               d.seed + 1000003, n.in_channels, d.pixel_noise);
      out.test.split = "test";
      break;
    case DataKind::kCifar10: {
      if (n.in_channels != 3 || n.image_size != 32 || n.num_classes != 10) {
        throw ConfigError("[network] cifar10 needs in_channels=3, image_size=32, num_classes=10");
      }
      std::vector<fs::path> train(d.train_files.begin(), d.train_files.end());
      std::vector<fs::path> test(d.test_files.begin(), d.test_files.end());
      out.train = load_cifar10(train, "train");
      out.test = load_cifar10(test, "test");
      break;
    }
    case DataKind::kSyntheticDenoise: {
      const Index size = d.image_size > 0 ? d.image_size : n.image_size;
      out.train.task = Task::kDenoise;
      out.train.images = make_synthetic_textures(d.train_samples, size, d.seed, n.in_channels);
      out.train.sigma = d.sigma;
      out.test = make_denoise_set(make_synthetic_textures(d.test_samples, size, d.seed + 1000003, n.in_channels),
                                  d.sigma, d.seed + 2000003, "test");
      break;
    }
    case DataKind::kPgmDenoise:
      if (n.in_channels != 1) throw ConfigError("[network] pgm_denoise needs in_channels=1");
      out.train.task = Task::kDenoise;
      out.train.images = stack_images(d.train_files);
      out.train.sigma = d.sigma;
      out.test = make_denoise_set(stack_images(d.test_files), d.sigma, d.seed + 2000003, "test");
      break;
  }
  return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"rcnet: recurrent-convolution networks with step-dependent batch normalization"};
  app.require_subcommand(1);
  CommonOptions opt;
  std::string input;
  std::string output;
  std::string cell = "1";
  bool sweep = false;
  Index inputs = 16;

  auto add_seed = [&](CLI::App* c) { c->add_option("--seed", opt.seed, "override the RNG seed"); };
  auto add_det = [&](CLI::App* c) {
    c->add_flag("--deterministic", opt.deterministic, "single-threaded kernels (same as RCNET_THREADS=1)");
  };
  auto add_out = [&](CLI::App* c) { c->add_option("--out-dir", opt.out_dir, "output directory"); };
  auto add_step = [&](CLI::App* c) { c->add_option("--step", opt.step, "unrolling step")->check(CLI::PositiveNumber); };

  auto* train_cmd = app.add_subcommand("train", "train a network described by a config file");
  train_cmd->add_option("--config", opt.config, "experiment config")->required();
  train_cmd->add_option("--checkpoint", opt.checkpoint, "resume from this checkpoint");
  add_seed(train_cmd);
  add_det(train_cmd);
  add_out(train_cmd);

  auto* eval_cmd = app.add_subcommand("eval", "evaluate a checkpoint on the config's test split");
  eval_cmd->add_option("--checkpoint", opt.checkpoint)->required();
  eval_cmd->add_option("--config", opt.config, "config providing the [data] section")->required();
  add_step(eval_cmd);
  add_det(eval_cmd);
  add_out(eval_cmd);

  auto* infer_cmd = app.add_subcommand("infer", "run one input (PGM or raw f32 tensor) through a checkpoint");
  infer_cmd->add_option("--checkpoint", opt.checkpoint)->required();
  infer_cmd->add_option("--input", input)->required();
  infer_cmd->add_option("--output", output)->required();
  add_step(infer_cmd);
  add_det(infer_cmd);

  auto* cost_cmd = app.add_subcommand("cost", "parameter, depth and FLOP accounting for a config");
  cost_cmd->add_option("--config", opt.config)->required();
  cost_cmd->add_flag("--sweep", sweep, "one row per max_step from 1 to the configured value");
  add_out(cost_cmd);

  auto* expand_cmd = app.add_subcommand("expand-check", "compare a checkpoint with its untied expansion");
  expand_cmd->add_option("--checkpoint", opt.checkpoint)->required();
  expand_cmd->add_option("--inputs", inputs, "number of random inputs")->check(CLI::PositiveNumber);
  add_step(expand_cmd);
  add_seed(expand_cmd);
  add_det(expand_cmd);

  auto* bn_cmd = app.add_subcommand("export-bn", "dump every cell BN group as CSV");
  bn_cmd->add_option("--checkpoint", opt.checkpoint)->required();
  add_out(bn_cmd);

  auto* feat_cmd = app.add_subcommand("export-features", "dump a cell's state after every unroll position");
  feat_cmd->add_option("--checkpoint", opt.checkpoint)->required();
  feat_cmd->add_option("--input", input)->required();
  feat_cmd->add_option("--cell", cell, "cell index or name (default 1)");
  add_step(feat_cmd);
  add_det(feat_cmd);
  add_out(feat_cmd);

  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  try {
    app.parse(static_cast<int>(argv.size()), argv.data());
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (opt.deterministic) set_max_threads(1);
    auto with_config = [&] { return load_config(opt.config); };
    auto ckpt_dtype = [&] { return read_checkpoint_info(opt.checkpoint).dtype; };
    if (*train_cmd) {
      const ExperimentConfig cfg = with_config();
      return dispatch(cfg.precision, [&](auto t) { return cmd_train<decltype(t)>(cfg, opt, out); });
    }
    if (*eval_cmd) {
      const ExperimentConfig cfg = with_config();
      return dispatch(ckpt_dtype(), [&](auto t) { return cmd_eval<decltype(t)>(cfg, opt, out); });
    }
    if (*infer_cmd) {
      return dispatch(ckpt_dtype(), [&](auto t) { return cmd_infer<decltype(t)>(opt, input, output, out); });
    }
    if (*cost_cmd) return cmd_cost(with_config(), opt, sweep, out);
    if (*expand_cmd) {
      return dispatch(ckpt_dtype(), [&](auto t) { return cmd_expand_check<decltype(t)>(opt, inputs, out); });
    }
    if (*bn_cmd) return dispatch(ckpt_dtype(), [&](auto t) { return cmd_export_bn<decltype(t)>(opt, out); });
    if (*feat_cmd) {
      return dispatch(ckpt_dtype(), [&](auto t) { return cmd_export_features<decltype(t)>(opt, input, cell, out); });
    }
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const DataError& e) {
    err << "data error: " << e.what() << "\n";
    return kExitData;
  } catch (const CheckpointError& e) {
    err << "checkpoint error: " << e.what() << "\n";
    return kExitCheckpoint;
  } catch (const CheckFailure& e) {
    err << "check failed: " << e.what() << "\n";
    return kExitCheckFailed;
  } catch (const std::invalid_argument& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::out_of_range& e) {
    err << "error: " << e.what() << "\n";
    return kExitConfig;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return kExitFailure;
  }
  return kExitFailure;
}

}  // namespace rcnet
