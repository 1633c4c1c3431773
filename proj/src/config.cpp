#include "rcnet/config.hpp"

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>
#include <charconv>
#include <fstream>
#include <optional>
#include <set>
#include <sstream>

namespace rcnet {

namespace pt = boost::property_tree;

const char* to_string(DataKind kind) {
  switch (kind) {
    case DataKind::kSyntheticClassification: return "synthetic_classification";
    case DataKind::kCifar10: return "cifar10";
    case DataKind::kSyntheticDenoise: return "synthetic_denoise";
    case DataKind::kPgmDenoise: return "pgm_denoise";
  }
  return "?";
}

namespace {

DataKind parse_data_kind(std::string_view text) {
  for (DataKind k : {DataKind::kSyntheticClassification, DataKind::kCifar10, DataKind::kSyntheticDenoise,
                     DataKind::kPgmDenoise}) {
    if (text == to_string(k)) return k;
  }
  throw std::invalid_argument("unknown data kind '" + std::string(text) +
                              "' (expected synthetic_classification, cifar10, synthetic_denoise or pgm_denoise)");
}

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  if (trim(s).empty()) return out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(trim(item));
  return out;
}

template <typename Int>
std::optional<Int> parse_int(const std::string& s) {
  Int v{};
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) return std::nullopt;
  return v;
}

std::optional<double> parse_double(const std::string& s) {
  double v = 0;
  const auto* end = s.data() + s.size();
  auto [p, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || p != end || s.empty()) return std::nullopt;
  return v;
}

// Typed access to one INI section that remembers which keys the schema knows.
class Section {
 public:
  Section(const pt::ptree* tree, std::string name) : tree_(tree), name_(std::move(name)) {}

  std::optional<std::string> raw(const std::string& key) {
    known_.insert(key);
    if (tree_ == nullptr) return std::nullopt;
    auto child = tree_->get_child_optional(pt::ptree::path_type(key, '\0'));
    if (!child) return std::nullopt;
    return trim(child->data());
  }

  [[noreturn]] void fail(const std::string& key, const std::string& what, const std::string& value) const {
    throw ConfigError("[" + name_ + "] " + key + ": " + what + ", got '" + value + "'");
  }

  template <typename Int>
  Int get_int(const std::string& key, Int fallback) {
    const auto s = raw(key);
    if (!s) return fallback;
    const auto v = parse_int<Int>(*s);
    if (!v) fail(key, "expected an integer", *s);
    return *v;
  }

  double get_double(const std::string& key, double fallback) {
    const auto s = raw(key);
    if (!s) return fallback;
    const auto v = parse_double(*s);
    if (!v) fail(key, "expected a number", *s);
    return *v;
  }

  bool get_bool(const std::string& key, bool fallback) {
    const auto s = raw(key);
    if (!s) return fallback;
    if (*s == "true") return true;
    if (*s == "false") return false;
    fail(key, "expected true or false", *s);
  }

  std::string get_string(const std::string& key, const std::string& fallback) { return raw(key).value_or(fallback); }

  template <typename Int>
  std::optional<std::vector<Int>> get_int_list(const std::string& key) {
    const auto s = raw(key);
    if (!s) return std::nullopt;
    std::vector<Int> out;
    for (const auto& item : split_list(*s)) {
      const auto v = parse_int<Int>(item);
      if (!v) fail(key, "expected a comma-separated list of integers", *s);
      out.push_back(*v);
    }
    return out;
  }

  std::optional<std::vector<double>> get_double_list(const std::string& key) {
    const auto s = raw(key);
    if (!s) return std::nullopt;
    std::vector<double> out;
    for (const auto& item : split_list(*s)) {
      const auto v = parse_double(item);
      if (!v) fail(key, "expected a comma-separated list of numbers", *s);
      out.push_back(*v);
    }
    return out;
  }

  // Runs `fn`, converting invalid_argument into a diagnostic for `key`.
  template <typename F>
  auto convert(const std::string& key, F&& fn) {
    try {
      return fn();
    } catch (const std::invalid_argument& e) {
      throw ConfigError("[" + name_ + "] " + key + ": " + e.what());
    }
  }

  void reject_unknown() const {
    if (tree_ == nullptr) return;
    for (const auto& [key, value] : *tree_) {
      if (!known_.count(key)) throw ConfigError("[" + name_ + "] unknown key '" + key + "'");
    }
  }

 private:
  const pt::ptree* tree_;
  std::string name_;
  std::set<std::string> known_;
};

pt::ptree read_tree(std::string_view text, const std::string& source) {
  std::istringstream in{std::string(text)};
  pt::ptree tree;
  try {
    pt::read_ini(in, tree);
  } catch (const pt::ini_parser_error& e) {
    throw ConfigError(source + ":" + std::to_string(e.line()) + ": " + e.message());
  }
  for (const auto& [key, value] : tree) {
    if (!value.data().empty()) throw ConfigError(source + ": key '" + key + "' appears outside any section");
  }
  return tree;
}

const pt::ptree* child(const pt::ptree& tree, const std::string& name) {
  auto c = tree.get_child_optional(pt::ptree::path_type(name, '\0'));
  return c ? &*c : nullptr;
}

NetworkSpec read_network(Section& sec) {
  NetworkSpec spec;
  spec.arch = sec.convert("arch", [&] { return parse_arch(sec.get_string("arch", to_string(spec.arch))); });
  spec.max_step = sec.get_int<int>("max_step", spec.max_step);
  spec.bn_mode = sec.convert("bn_mode", [&] { return parse_bn_mode(sec.get_string("bn_mode", to_string(spec.bn_mode))); });
  const auto widths = sec.get_int_list<Index>("widths");
  if (widths) {
    spec.widths = *widths;
  } else if (spec.arch == Arch::kDenoiserR3) {
    spec.widths = {64};
  } else if (spec.arch == Arch::kResNetR4) {
    spec.widths = {64, 128, 256, 512};
  }
  const bool denoise = spec.arch == Arch::kDenoiserR3;
  spec.in_channels = sec.get_int<Index>("in_channels", denoise ? 1 : 3);
  spec.image_size = sec.get_int<Index>("image_size", denoise ? 40 : 32);
  spec.num_classes = sec.get_int<Index>("num_classes", denoise ? 0 : (spec.arch == Arch::kResNetR4 ? 100 : 10));
  spec.bn_eps = sec.get_double("bn_eps", spec.bn_eps);
  spec.bn_momentum = sec.get_double("bn_momentum", spec.bn_momentum);
  spec.value_range = sec.get_double("value_range", spec.value_range);
  spec.expanded_step = sec.get_int<int>("expanded_step", spec.expanded_step);
  sec.convert("network", [&] {
    validate(spec);
    return 0;
  });
  return spec;
}

// Default step distribution: the max step for fixed runs; for multi-step
// regimes {2,3,4} with {0.2,0.3,0.5} at max_step 4, else 1..m weighted by s.
StepDistribution default_steps(Regime regime, int m) {
  if (regime == Regime::kFixed || m == 1) return StepDistribution::fixed(m);
  if (m == 4) return StepDistribution({2, 3, 4}, {0.2, 0.3, 0.5});
  std::vector<int> support;
  std::vector<double> probs;
  const double total = m * (m + 1) / 2.0;
  for (int s = 1; s <= m; ++s) {
    support.push_back(s);
    probs.push_back(s / total);
  }
  return StepDistribution(support, probs);
}

std::string join(const std::vector<std::string>& items) {
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? "," : "") + items[i];
  return out;
}

template <typename V, typename F>
std::string join_as(const std::vector<V>& items, F&& fmt) {
  std::vector<std::string> parts;
  for (const auto& v : items) parts.push_back(fmt(v));
  return join(parts);
}

}  // namespace

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, p);
}

bool operator==(const StepDistribution& a, const StepDistribution& b) {
  return a.support() == b.support() && a.probs() == b.probs();
}

bool operator==(const TrainConfig& a, const TrainConfig& b) {
  return a.regime == b.regime && a.lr == b.lr && a.shared_lr_scale == b.shared_lr_scale && a.momentum == b.momentum &&
         a.weight_decay == b.weight_decay && a.clip_max_norm == b.clip_max_norm && a.epochs == b.epochs &&
         a.batch_size == b.batch_size && a.max_iterations == b.max_iterations && a.steps == b.steps &&
         a.seed == b.seed && a.lr_decay_every == b.lr_decay_every && a.lr_decay_factor == b.lr_decay_factor &&
         a.sigma == b.sigma && a.patch_size == b.patch_size;
}

bool operator==(const ExperimentConfig& a, const ExperimentConfig& b) {
  return a.network == b.network && a.train == b.train && a.data == b.data && a.output == b.output &&
         a.precision == b.precision;
}

ExperimentConfig parse_config(std::string_view text, const std::string& source) {
  const pt::ptree tree = read_tree(text, source);
  for (const auto& [key, value] : tree) {
    if (key != "network" && key != "train" && key != "data" && key != "output") {
      throw ConfigError(source + ": unknown section [" + key + "]");
    }
  }
  ExperimentConfig cfg;

  Section net(child(tree, "network"), "network");
  cfg.network = read_network(net);
  net.reject_unknown();

  Section tr(child(tree, "train"), "train");
  TrainConfig& t = cfg.train;
  t.regime = tr.convert("regime", [&] { return parse_regime(tr.get_string("regime", to_string(t.regime))); });
  t.lr = tr.get_double("lr", t.lr);
  t.shared_lr_scale = tr.get_double("shared_lr_scale", t.shared_lr_scale);
  t.momentum = tr.get_double("momentum", t.momentum);
  t.weight_decay = tr.get_double("weight_decay", t.weight_decay);
  t.clip_max_norm = tr.get_double("clip_max_norm", t.clip_max_norm);
  t.epochs = tr.get_int<int>("epochs", t.epochs);
  t.batch_size = tr.get_int<Index>("batch_size", t.batch_size);
  t.max_iterations = tr.get_int<Index>("max_iterations", t.max_iterations);
  t.seed = tr.get_int<std::uint64_t>("seed", t.seed);
  t.lr_decay_every = tr.get_int<int>("lr_decay_every", t.lr_decay_every);
  t.lr_decay_factor = tr.get_double("lr_decay_factor", t.lr_decay_factor);
  const auto steps = tr.get_int_list<int>("steps");
  const auto probs = tr.get_double_list("step_probs");
  if (probs && !steps) throw ConfigError("[train] step_probs: given without steps");
  t.steps = tr.convert("steps", [&] {
    if (!steps) return default_steps(t.regime, cfg.network.max_step);
    std::vector<double> p = probs ? *probs : std::vector<double>(steps->size(), 1.0 / static_cast<double>(steps->size()));
    return StepDistribution(*steps, p);
  });
  if (t.steps.max_step() > cfg.network.max_step) {
    throw ConfigError("[train] steps: support exceeds [network] max_step " + std::to_string(cfg.network.max_step));
  }
  const std::string precision = tr.get_string("precision", "f32");
  if (precision == "f32") {
    cfg.precision = DType::kFloat32;
  } else if (precision == "f64") {
    cfg.precision = DType::kFloat64;
  } else {
    tr.fail("precision", "expected f32 or f64", precision);
  }
  tr.reject_unknown();

  Section da(child(tree, "data"), "data");
  DataConfig& d = cfg.data;
  const bool denoise = cfg.network.task() == Task::kDenoise;
  d.kind = da.convert("kind", [&] {
    return parse_data_kind(
        da.get_string("kind", to_string(denoise ? DataKind::kSyntheticDenoise : DataKind::kSyntheticClassification)));
  });
  d.train_files = split_list(da.get_string("train_files", ""));
  d.test_files = split_list(da.get_string("test_files", ""));
  d.train_samples = da.get_int<Index>("train_samples", denoise ? 32 : d.train_samples);
  d.test_samples = da.get_int<Index>("test_samples", denoise ? 8 : d.test_samples);
  d.pixel_noise = da.get_double("pixel_noise", d.pixel_noise);
  d.image_size = da.get_int<Index>("image_size", d.image_size);
  d.sigma = da.get_double("sigma", d.sigma);
  d.patch_size = da.get_int<Index>("patch_size", d.patch_size);
  d.seed = da.get_int<std::uint64_t>("seed", d.seed);
  da.reject_unknown();
  const bool file_kind = d.kind == DataKind::kCifar10 || d.kind == DataKind::kPgmDenoise;
  if (file_kind && d.train_files.empty()) throw ConfigError("[data] train_files: required for kind " +
                                                            std::string(to_string(d.kind)));
  if (file_kind && d.test_files.empty()) throw ConfigError("[data] test_files: required for kind " +
                                                           std::string(to_string(d.kind)));
  const bool denoise_kind = d.kind == DataKind::kSyntheticDenoise || d.kind == DataKind::kPgmDenoise;
  if (denoise_kind != denoise) {
    throw ConfigError("[data] kind: " + std::string(to_string(d.kind)) + " does not match network arch " +
                      to_string(cfg.network.arch));
  }
  if (d.train_samples < 1 || d.test_samples < 1) throw ConfigError("[data] sample counts must be positive");
  if (d.image_size < 0) throw ConfigError("[data] image_size: must be non-negative");
  t.sigma = d.sigma;
  t.patch_size = d.patch_size;

  Section out(child(tree, "output"), "output");
  cfg.output.dir = out.get_string("dir", cfg.output.dir);
  cfg.output.export_bn = out.get_bool("export_bn", cfg.output.export_bn);
  out.reject_unknown();

  tr.convert("train", [&] {
    validate(cfg.train);
    return 0;
  });
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str(), path.string());
}

std::string network_to_ini(const NetworkSpec& s) {
  std::ostringstream os;
  os << "[network]\n"
     << "arch=" << to_string(s.arch) << "\n"
     << "max_step=" << s.max_step << "\n"
     << "bn_mode=" << to_string(s.bn_mode) << "\n"
     << "widths=" << join_as(s.widths, [](Index w) { return std::to_string(w); }) << "\n"
     << "in_channels=" << s.in_channels << "\n"
     << "image_size=" << s.image_size << "\n"
     << "num_classes=" << s.num_classes << "\n"
     << "bn_eps=" << format_double(s.bn_eps) << "\n"
     << "bn_momentum=" << format_double(s.bn_momentum) << "\n"
     << "value_range=" << format_double(s.value_range) << "\n"
     << "expanded_step=" << s.expanded_step << "\n";
  return os.str();
}

NetworkSpec network_from_ini(std::string_view text) {
  const pt::ptree tree = read_tree(text, "<network>");
  for (const auto& [key, value] : tree) {
    if (key != "network") throw ConfigError("<network>: unexpected section [" + key + "]");
  }
  Section sec(child(tree, "network"), "network");
  NetworkSpec spec = read_network(sec);
  sec.reject_unknown();
  return spec;
}

std::string to_ini(const ExperimentConfig& c) {
  std::ostringstream os;
  os << network_to_ini(c.network) << "\n";
  const TrainConfig& t = c.train;
  os << "[train]\n"
     << "regime=" << to_string(t.regime) << "\n"
     << "lr=" << format_double(t.lr) << "\n"
     << "shared_lr_scale=" << format_double(t.shared_lr_scale) << "\n"
     << "momentum=" << format_double(t.momentum) << "\n"
     << "weight_decay=" << format_double(t.weight_decay) << "\n"
     << "clip_max_norm=" << format_double(t.clip_max_norm) << "\n"
     << "epochs=" << t.epochs << "\n"
     << "batch_size=" << t.batch_size << "\n"
     << "max_iterations=" << t.max_iterations << "\n"
     << "steps=" << join_as(t.steps.support(), [](int s) { return std::to_string(s); }) << "\n"
     << "step_probs=" << join_as(t.steps.probs(), [](double p) { return format_double(p); }) << "\n"
     << "seed=" << t.seed << "\n"
     << "lr_decay_every=" << t.lr_decay_every << "\n"
     << "lr_decay_factor=" << format_double(t.lr_decay_factor) << "\n"
     << "precision=" << (c.precision == DType::kFloat64 ? "f64" : "f32") << "\n\n";
  const DataConfig& d = c.data;
  os << "[data]\n"
     << "kind=" << to_string(d.kind) << "\n"
     << "train_files=" << join(d.train_files) << "\n"
     << "test_files=" << join(d.test_files) << "\n"
     << "train_samples=" << d.train_samples << "\n"
     << "test_samples=" << d.test_samples << "\n"
     << "pixel_noise=" << format_double(d.pixel_noise) << "\n"
     << "image_size=" << d.image_size << "\n"
     << "sigma=" << format_double(d.sigma) << "\n"
     << "patch_size=" << d.patch_size << "\n"
     << "seed=" << d.seed << "\n\n";
  os << "[output]\n"
     << "dir=" << c.output.dir << "\n"
     << "export_bn=" << (c.output.export_bn ? "true" : "false") << "\n";
  return os.str();
}

}  // namespace rcnet
