#include "rcnet/network.hpp"

#include <algorithm>
#include <stdexcept>

namespace rcnet {

const char* to_string(Arch arch) {
  switch (arch) {
    case Arch::kClassifierR2: return "r2_classifier";
    case Arch::kDenoiserR3: return "r3_denoiser";
    case Arch::kResNetR4: return "r4_classifier";
  }
  return "?";
}

Arch parse_arch(std::string_view text) {
  if (text == "r2_classifier") return Arch::kClassifierR2;
  if (text == "r3_denoiser") return Arch::kDenoiserR3;
  if (text == "r4_classifier") return Arch::kResNetR4;
  throw std::invalid_argument("unknown arch '" + std::string(text) +
                              "' (expected r2_classifier, r3_denoiser or r4_classifier)");
}

namespace {

void require(bool ok, const std::string& message) {
  if (!ok) throw std::invalid_argument("network spec: " + message);
}

std::size_t expected_widths(Arch arch) {
  switch (arch) {
    case Arch::kClassifierR2: return 2;
    case Arch::kDenoiserR3: return 1;
    case Arch::kResNetR4: return 4;
  }
  return 0;
}

}  // namespace

void validate(const NetworkSpec& spec) {
  require(spec.max_step >= 1, "max_step must be >= 1");
  require(spec.widths.size() == expected_widths(spec.arch),
          std::string(to_string(spec.arch)) + " needs " + std::to_string(expected_widths(spec.arch)) + " widths, got " +
              std::to_string(spec.widths.size()));
  for (Index w : spec.widths) require(w >= 1, "widths must be positive");
  require(spec.in_channels >= 1, "in_channels must be positive");
  require(spec.image_size >= 1, "image_size must be positive");
  require(spec.bn_eps > 0, "bn_eps must be positive");
  require(spec.bn_momentum > 0 && spec.bn_momentum <= 1, "bn_momentum must lie in (0, 1]");
  require(spec.expanded_step >= 0 && spec.expanded_step <= spec.max_step, "expanded_step must lie in [0, max_step]");
  require(!(spec.expanded() && spec.bn_mode == BnMode::kShared), "a shared-BN network cannot be expanded");
  switch (spec.arch) {
    case Arch::kClassifierR2:
      require(spec.widths[1] == 4 * spec.widths[0],
              "InvPool quadruples channels: width 2 must be 4 x " + std::to_string(spec.widths[0]) + ", got " +
                  std::to_string(spec.widths[1]));
      require(spec.image_size % 8 == 0, "r2_classifier image_size must be a multiple of 8");
      require(spec.num_classes >= 2, "num_classes must be >= 2");
      break;
    case Arch::kResNetR4:
      require(spec.image_size % 8 == 0, "r4_classifier image_size must be a multiple of 8");
      require(spec.num_classes >= 2, "num_classes must be >= 2");
      break;
    case Arch::kDenoiserR3:
      require(spec.value_range > 0, "value_range must be positive");
      break;
  }
}

NetworkSpec classifier_r2_spec(int max_step, BnMode mode, std::vector<Index> widths, Index in_channels,
                               Index image_size, Index num_classes) {
  NetworkSpec spec;
  spec.arch = Arch::kClassifierR2;
  spec.max_step = max_step;
  spec.bn_mode = mode;
  spec.widths = std::move(widths);
  spec.in_channels = in_channels;
  spec.image_size = image_size;
  spec.num_classes = num_classes;
  validate(spec);
  return spec;
}

NetworkSpec denoiser_r3_spec(int max_step, BnMode mode, Index width, Index image_channels, Index patch_size) {
  NetworkSpec spec;
  spec.arch = Arch::kDenoiserR3;
  spec.max_step = max_step;
  spec.bn_mode = mode;
  spec.widths = {width};
  spec.in_channels = image_channels;
  spec.image_size = patch_size;
  spec.num_classes = 0;
  validate(spec);
  return spec;
}

NetworkSpec r4_spec(int max_step, BnMode mode, std::vector<Index> widths, Index in_channels, Index image_size,
                    Index num_classes) {
  NetworkSpec spec;
  spec.arch = Arch::kResNetR4;
  spec.max_step = max_step;
  spec.bn_mode = mode;
  spec.widths = std::move(widths);
  spec.in_channels = in_channels;
  spec.image_size = image_size;
  spec.num_classes = num_classes;
  validate(spec);
  return spec;
}

std::vector<Stage> network_layout(const NetworkSpec& spec) {
  validate(spec);
  using K = Stage::Kind;
  // Per-step groups only matter when one network is run at several steps.
  const bool per_step = spec.bn_mode == BnMode::kDoubleIndependent && !spec.expanded();
  std::vector<Stage> out;
  auto cell = [&](int index, Index width, CellKind kind, bool pool) {
    Stage st{K::kCell, "cell" + std::to_string(index), width, width};
    st.cell_kind = kind;
    st.pool_mid = pool;
    out.push_back(st);
  };
  const auto& w = spec.widths;
  out.push_back(Stage{K::kStem, "stem", spec.in_channels, w[0]});
  switch (spec.arch) {
    case Arch::kClassifierR2: {
      cell(1, w[0], CellKind::kPreactResblock, true);
      out.push_back(Stage{K::kInvPool, "invpool", w[0], 4 * w[0]});
      cell(2, w[1], CellKind::kPreactResblock, true);
      Stage head{K::kClassifierHead, "head", w[1], spec.num_classes};
      head.per_step_bn = per_step;
      out.push_back(head);
      break;
    }
    case Arch::kDenoiserR3:
      for (int i = 1; i <= 3; ++i) cell(i, w[0], CellKind::kConvBnRelu, false);
      out.push_back(Stage{K::kDenoiseHead, "head", w[0], spec.in_channels});
      break;
    case Arch::kResNetR4: {
      Index prev = w[0];
      for (int i = 0; i < 4; ++i) {
        Stage t{K::kTransition, "trans" + std::to_string(i + 1), prev, w[static_cast<std::size_t>(i)]};
        t.stride = i == 0 ? 1 : 2;
        t.per_step_bn = per_step && i > 0;
        out.push_back(t);
        cell(i + 1, w[static_cast<std::size_t>(i)], CellKind::kPreactResblock, false);
        prev = w[static_cast<std::size_t>(i)];
      }
      Stage head{K::kClassifierHead, "head", w[3], spec.num_classes};
      head.per_step_bn = per_step;
      out.push_back(head);
      break;
    }
  }
  return out;
}

namespace {

template <typename T>
void copy_group(BnGroup<T>& dst, const BnGroup<T>& src) {
  dst.gamma.value = src.gamma.value;
  dst.beta.value = src.beta.value;
  dst.running_mean = src.running_mean;
  dst.running_var = src.running_var;
}

template <typename... Fs>
struct Overloaded : Fs... {
  using Fs::operator()...;
};
template <typename... Fs>
Overloaded(Fs...) -> Overloaded<Fs...>;

// Walks every parameter and BN group in canonical order.
template <typename T, typename OnParam, typename OnGroup>
void walk(std::vector<Module<T>>& modules, OnParam&& on_param, OnGroup&& on_group) {
  auto groups = [&](auto& list) {
    for (auto& grp : list) on_group(grp);
  };
  for (auto& module : modules) {
    std::visit(Overloaded{
                   [&](StemModule<T>& m) { on_param(m.stem.weight); },
                   [&](CellModule<T>& m) {
                     for (auto& p : m.cell.body.convs) on_param(p);
                     groups(m.cell.bank.groups());
                   },
                   [&](InvPoolModule&) {},
                   [&](TransitionModule<T>& m) {
                     on_param(m.conv1);
                     on_param(m.conv2);
                     if (m.shortcut) on_param(*m.shortcut);
                     groups(m.bank.groups());
                   },
                   [&](ExpandedCellModule<T>& m) {
                     for (std::size_t d = 0; d < m.bodies.size(); ++d) {
                       for (auto& p : m.bodies[d].convs) on_param(p);
                       groups(m.groups[d]);
                     }
                   },
                   [&](ClassifierHeadModule<T>& m) {
                     groups(m.bank.groups());
                     on_param(m.head.weight);
                     on_param(m.head.bias);
                   },
                   [&](DenoiseHeadModule<T>& m) { on_param(m.head.weight); },
               },
               module);
  }
}

template <typename T>
Var transition_forward(Graph<T>& g, TransitionModule<T>& t, Var x, int step, const ForwardContext& ctx) {
  const auto bn = t.bank.select(step);
  auto norm = [&](Var v, int slot) {
    return batchnorm2d(g, v, *bn[static_cast<std::size_t>(slot)], ctx.mode, ctx.update_running_stats, ctx.bn);
  };
  Var a = relu(g, norm(x, 0));
  if (t.stride == 2) a = avgpool2d(g, a);
  Var h = conv2d(g, a, g.parameter(t.conv1), std::nullopt, 1, 1);
  h = conv2d(g, relu(g, norm(h, 1)), g.parameter(t.conv2), std::nullopt, 1, 1);
  Var skip = t.shortcut ? conv2d(g, a, g.parameter(*t.shortcut), std::nullopt, 1, 0) : x;
  return add(g, skip, h);
}

}  // namespace

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t init_seed) : spec_(std::move(spec)) {
  const auto layout = network_layout(spec_);
  std::mt19937_64 rng(init_seed);
  const int m = spec_.max_step;
  const int s_exp = spec_.expanded_step;
  const BnMode cell_mode = spec_.bn_mode;
  modules_.reserve(layout.size());
  for (const Stage& st : layout) {
    switch (st.kind) {
      case Stage::Kind::kStem:
        modules_.emplace_back(StemModule<T>{Stem<T>(st.in_channels, st.out_channels, rng)});
        break;
      case Stage::Kind::kCell:
        if (s_exp == 0) {
          modules_.emplace_back(
              CellModule<T>{RcCell<T>(st.name, st.cell_kind, st.in_channels, cell_mode, m, st.pool_mid, rng)});
        } else {
          ExpandedCellModule<T> e;
          e.name = st.name;
          e.pool_mid = st.pool_mid;
          for (int j = 1; j <= s_exp; ++j) {
            const std::string prefix = st.name + ".depth" + std::to_string(j);
            e.bodies.emplace_back(st.cell_kind, st.in_channels, prefix, rng, /*shared=*/false);
            std::vector<BnGroup<T>> slots;
            if (cell_mode != BnMode::kNone) {
              for (int k = 0; k < bn_slots(st.cell_kind); ++k) {
                slots.emplace_back(st.in_channels, prefix + ".slot" + std::to_string(k));
              }
            }
            e.groups.push_back(std::move(slots));
          }
          modules_.emplace_back(std::move(e));
        }
        break;
      case Stage::Kind::kInvPool:
        modules_.emplace_back(InvPoolModule{});
        break;
      case Stage::Kind::kTransition: {
        TransitionModule<T> t;
        t.name = st.name;
        t.in_channels = st.in_channels;
        t.out_channels = st.out_channels;
        t.stride = st.stride;
        t.bank = UpstreamBnBank<T>(st.per_step_bn, m, 2, st.in_channels, st.name + ".bank");
        // The second BN sits at out_channels; rebuild slot 1 of every address at that width.
        for (std::size_t i = 1; i < t.bank.groups().size(); i += 2) {
          t.bank.groups()[i] = BnGroup<T>(st.out_channels, t.bank.groups()[i].name);
        }
        t.conv1 = Parameter<T>(st.name + ".conv1.weight",
                               he_normal<T>({st.out_channels, st.in_channels, 3, 3}, st.in_channels * 9, rng));
        t.conv2 = Parameter<T>(st.name + ".conv2.weight",
                               he_normal<T>({st.out_channels, st.out_channels, 3, 3}, st.out_channels * 9, rng));
        if (st.stride != 1 || st.in_channels != st.out_channels) {
          t.shortcut = Parameter<T>(st.name + ".shortcut.weight",
                                    he_normal<T>({st.out_channels, st.in_channels, 1, 1}, st.in_channels, rng));
        }
        modules_.emplace_back(std::move(t));
        break;
      }
      case Stage::Kind::kClassifierHead:
        modules_.emplace_back(
            ClassifierHeadModule<T>{ClassifierHead<T>(st.in_channels, st.out_channels, rng),
                                    UpstreamBnBank<T>(st.per_step_bn, m, 1, st.in_channels, "head.bank")});
        break;
      case Stage::Kind::kDenoiseHead:
        modules_.emplace_back(DenoiseHeadModule<T>{DenoiseHead<T>(st.in_channels, st.out_channels, rng)});
        break;
    }
  }
  if (spec_.expanded()) {
    support_ = {s_exp};
  } else if (spec_.bn_mode == BnMode::kDoubleIndependent) {
    for (int s = 1; s <= m; ++s) support_.push_back(s);
  } else {
    support_ = {m};
  }
}

template <typename T>
void Network<T>::set_support(std::vector<int> support) {
  std::sort(support.begin(), support.end());
  support.erase(std::unique(support.begin(), support.end()), support.end());
  if (support.empty()) throw std::invalid_argument("network support must not be empty");
  for (int s : support) {
    const bool ok = spec_.expanded() ? s == spec_.expanded_step : (s >= 1 && s <= spec_.max_step);
    if (!ok) throw std::invalid_argument("step " + std::to_string(s) + " cannot be supported by this network");
  }
  support_ = std::move(support);
}

template <typename T>
bool Network<T>::supports(int step) const {
  return std::find(support_.begin(), support_.end(), step) != support_.end();
}

template <typename T>
Var Network<T>::forward(Graph<T>& g, Var input, int step, const ForwardContext& ctx_in) {
  if (spec_.expanded() ? step != spec_.expanded_step : (step < 1 || step > spec_.max_step)) {
    throw std::out_of_range("forward: step " + std::to_string(step) + " is not runnable on this network");
  }
  ForwardContext ctx = ctx_in;
  ctx.bn = BnConfig{spec_.bn_eps, spec_.bn_momentum};
  const bool denoise = spec_.task() == Task::kDenoise;
  const T range = static_cast<T>(spec_.value_range);
  Var h = denoise ? scale(g, input, T{1} / range) : input;
  for (auto& module : modules_) {
    h = std::visit(Overloaded{
                       [&](StemModule<T>& m) { return m.stem.forward(g, h); },
                       [&](CellModule<T>& m) {
                         if (!observer_) return m.cell.unroll(g, h, step, ctx);
                         return m.cell.unroll(g, h, step, ctx,
                                              [&](int j, Var v) { observer_(m.cell.name, j, g.value(v)); });
                       },
                       [&](InvPoolModule&) { return invpool(g, h); },
                       [&](TransitionModule<T>& m) { return transition_forward(g, m, h, step, ctx); },
                       [&](ExpandedCellModule<T>& m) {
                         const int depth = static_cast<int>(m.bodies.size());
                         const int pool_after = m.pool_mid ? pool_position(depth) : 0;
                         Var v = h;
                         for (int j = 1; j <= depth; ++j) {
                           auto& slots = m.groups[static_cast<std::size_t>(j - 1)];
                           std::vector<BnGroup<T>*> ptrs;
                           for (auto& grp : slots) ptrs.push_back(&grp);
                           v = run_cell_body(g, m.bodies[static_cast<std::size_t>(j - 1)], v,
                                             std::span<BnGroup<T>* const>(ptrs), ctx);
                           if (observer_) observer_(m.name, j, g.value(v));
                           if (j == pool_after) v = avgpool2d(g, v);
                         }
                         return v;
                       },
                       [&](ClassifierHeadModule<T>& m) { return m.head.forward(g, h, m.bank.select(step)[0], ctx); },
                       [&](DenoiseHeadModule<T>& m) { return add(g, scale(g, m.head.forward(g, h), range), input); },
                   },
                   module);
  }
  return h;
}

template <typename T>
std::vector<Parameter<T>*> Network<T>::parameters() {
  std::vector<Parameter<T>*> out;
  walk<T>(
      modules_, [&](Parameter<T>& p) { out.push_back(&p); },
      [&](BnGroup<T>& grp) {
        out.push_back(&grp.gamma);
        out.push_back(&grp.beta);
      });
  return out;
}

template <typename T>
std::vector<BnGroup<T>*> Network<T>::bn_groups() {
  std::vector<BnGroup<T>*> out;
  walk<T>(modules_, [](Parameter<T>&) {}, [&](BnGroup<T>& grp) { out.push_back(&grp); });
  return out;
}

template <typename T>
std::vector<NamedTensor<T>> Network<T>::state(bool include_momentum) {
  std::vector<NamedTensor<T>> out;
  auto param = [&](Parameter<T>& p) {
    out.push_back({p.name, &p.value});
    if (include_momentum) out.push_back({p.name + ".momentum", &p.momentum});
  };
  walk<T>(modules_, param, [&](BnGroup<T>& grp) {
    param(grp.gamma);
    param(grp.beta);
    out.push_back({grp.name + ".running_mean", &grp.running_mean});
    out.push_back({grp.name + ".running_var", &grp.running_var});
  });
  return out;
}

template <typename T>
Index Network<T>::parameter_count() {
  Index total = 0;
  for (auto* p : parameters()) total += p->size();
  return total;
}

template <typename T>
Network<T> build_network(const NetworkSpec& spec, std::uint64_t init_seed) {
  return Network<T>(spec, init_seed);
}

template <typename T>
Network<T> expand_to_standard(Network<T>& rc, int step) {
  const NetworkSpec& src_spec = rc.spec();
  if (src_spec.expanded()) throw std::invalid_argument("expand_to_standard: network is already expanded");
  if (src_spec.bn_mode == BnMode::kShared) {
    throw std::invalid_argument("expand_to_standard: shared-BN networks cannot be expanded");
  }
  if (step < 1 || step > src_spec.max_step) {
    throw std::out_of_range("expand_to_standard: step " + std::to_string(step) + " outside [1, " +
                            std::to_string(src_spec.max_step) + "]");
  }
  NetworkSpec spec = src_spec;
  spec.expanded_step = step;
  Network<T> out(spec, 0);
  auto& dst_modules = out.modules();
  auto& src_modules = rc.modules();
  for (std::size_t i = 0; i < src_modules.size(); ++i) {
    auto& dst = dst_modules[i];
    std::visit(Overloaded{
                   [&](StemModule<T>& m) { std::get<StemModule<T>>(dst).stem.weight.value = m.stem.weight.value; },
                   [&](CellModule<T>& m) {
                     auto& e = std::get<ExpandedCellModule<T>>(dst);
                     for (int j = 1; j <= step; ++j) {
                       auto& body = e.bodies[static_cast<std::size_t>(j - 1)];
                       for (std::size_t k = 0; k < body.convs.size(); ++k) {
                         body.convs[k].value = m.cell.body.convs[k].value;
                       }
                       const auto groups = m.cell.bank.select(step, j);
                       auto& slots = e.groups[static_cast<std::size_t>(j - 1)];
                       for (std::size_t k = 0; k < groups.size(); ++k) copy_group(slots[k], *groups[k]);
                     }
                   },
                   [&](InvPoolModule&) {},
                   [&](TransitionModule<T>& m) {
                     auto& t = std::get<TransitionModule<T>>(dst);
                     t.conv1.value = m.conv1.value;
                     t.conv2.value = m.conv2.value;
                     if (m.shortcut) t.shortcut->value = m.shortcut->value;
                     const auto groups = m.bank.select(step);
                     for (std::size_t k = 0; k < groups.size(); ++k) copy_group(t.bank.groups()[k], *groups[k]);
                   },
                   [&](ExpandedCellModule<T>&) {},
                   [&](ClassifierHeadModule<T>& m) {
                     auto& h = std::get<ClassifierHeadModule<T>>(dst);
                     h.head.weight.value = m.head.weight.value;
                     h.head.bias.value = m.head.bias.value;
                     copy_group(h.bank.groups()[0], *m.bank.select(step)[0]);
                   },
                   [&](DenoiseHeadModule<T>& m) {
                     std::get<DenoiseHeadModule<T>>(dst).head.weight.value = m.head.weight.value;
                   },
               },
               src_modules[i]);
  }
  return out;
}

template class Network<float>;
template class Network<double>;
template Network<float> build_network<float>(const NetworkSpec&, std::uint64_t);
template Network<double> build_network<double>(const NetworkSpec&, std::uint64_t);
template Network<float> expand_to_standard<float>(Network<float>&, int);
template Network<double> expand_to_standard<double>(Network<double>&, int);

}  // namespace rcnet
