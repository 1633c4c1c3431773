#include "rcnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "rcnet/config.hpp"

namespace rcnet {

static_assert(std::endian::native == std::endian::little, "checkpoint format assumes a little-endian host");

namespace {

constexpr char kMagic[8] = {'R', 'C', 'N', 'E', 'T', 'C', 'K', 'P'};
constexpr std::string_view kSectionMarker = "[checkpoint]\n";

using Kind = CheckpointError::Kind;

class Writer {
 public:
  template <typename V>
  void put(const V& v) {
    const auto* p = reinterpret_cast<const char*>(&v);
    bytes_.insert(bytes_.end(), p, p + sizeof(V));
  }
  void put_bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const char*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  const std::vector<char>& bytes() const { return bytes_; }

 private:
  std::vector<char> bytes_;
};

class Reader {
 public:
  Reader(std::vector<char> bytes, std::string path) : bytes_(std::move(bytes)), path_(std::move(path)) {}

  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) {
      throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path_ + "' is truncated at byte offset " +
                                                      std::to_string(bytes_.size()) + " (needed " +
                                                      std::to_string(pos_ + n) + ")");
    }
  }
  template <typename V>
  V get() {
    need(sizeof(V));
    V v;
    std::memcpy(&v, bytes_.data() + pos_, sizeof(V));
    pos_ += sizeof(V);
    return v;
  }
  const char* take(std::size_t n) {
    need(n);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  bool at_end() const { return pos_ == bytes_.size(); }
  std::size_t pos() const { return pos_; }
  const std::string& path() const { return path_; }

 private:
  std::vector<char> bytes_;
  std::size_t pos_ = 0;
  std::string path_;
};

std::vector<char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(Kind::kIo, "cannot open checkpoint '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string support_to_text(const std::vector<int>& support) {
  std::string out;
  for (std::size_t i = 0; i < support.size(); ++i) out += (i ? "," : "") + std::to_string(support[i]);
  return out;
}

struct ParsedHeader {
  CheckpointInfo info;
  std::string rng_state;
};

// Reads magic, version and header; leaves the reader at the tensor table.
ParsedHeader read_header(Reader& r) {
  const std::string& path = r.path();
  if (std::memcmp(r.take(sizeof kMagic), kMagic, sizeof kMagic) != 0) {
    throw CheckpointError(Kind::kCorruptHeader, "'" + path + "' is not an rcnet checkpoint (bad magic)");
  }
  ParsedHeader h;
  h.info.version = r.get<std::uint32_t>();
  if (h.info.version != kCheckpointVersion) {
    throw CheckpointError(Kind::kVersionMismatch, "checkpoint '" + path + "' has format version " +
                                                       std::to_string(h.info.version) + ", this build reads version " +
                                                       std::to_string(kCheckpointVersion));
  }
  const auto len = r.get<std::uint64_t>();
  const std::string text(r.take(len), len);
  const auto split = text.find(kSectionMarker);
  if (split == std::string::npos) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path + "' header lacks a [checkpoint] section");
  }
  try {
    h.info.spec = network_from_ini(text.substr(0, split));
  } catch (const std::exception& e) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path + "' has an invalid network header: " + e.what());
  }
  std::map<std::string, std::string> fields;
  std::istringstream lines(text.substr(split + kSectionMarker.size()));
  for (std::string line; std::getline(lines, line);) {
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path + "' header line '" + line + "' is malformed");
    }
    fields[line.substr(0, eq)] = line.substr(eq + 1);
  }
  auto field = [&](const std::string& key) {
    auto it = fields.find(key);
    if (it == fields.end()) {
      throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path + "' header lacks '" + key + "'");
    }
    return it->second;
  };
  const std::string dtype = field("dtype");
  if (dtype == "f32") {
    h.info.dtype = DType::kFloat32;
  } else if (dtype == "f64") {
    h.info.dtype = DType::kFloat64;
  } else {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path + "' has unknown dtype '" + dtype + "'");
  }
  try {
    h.info.iteration = std::stoll(field("iteration"));
    std::stringstream ss(field("support"));
    for (std::string item; std::getline(ss, item, ',');) h.info.support.push_back(std::stoi(item));
  } catch (const std::logic_error&) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path + "' has malformed iteration/support fields");
  }
  h.rng_state = field("step_rng");
  return h;
}

}  // namespace

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  return read_header(r).info;
}

template <typename T>
void save_checkpoint(Network<T>& net, const TrainerState& state, const std::filesystem::path& path) {
  std::ostringstream header;
  std::ostringstream rng;
  rng << state.step_rng;
  header << network_to_ini(net.spec()) << kSectionMarker << "dtype=" << (dtype_of<T>() == DType::kFloat32 ? "f32" : "f64")
         << "\niteration=" << state.iteration << "\nsupport=" << support_to_text(net.support())
         << "\nstep_rng=" << rng.str() << "\n";
  const std::string text = header.str();

  Writer w;
  w.put_bytes(kMagic, sizeof kMagic);
  w.put(kCheckpointVersion);
  w.put(static_cast<std::uint64_t>(text.size()));
  w.put_bytes(text.data(), text.size());
  const auto tensors = net.state(/*include_momentum=*/true);
  w.put(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& nt : tensors) {
    w.put(static_cast<std::uint32_t>(nt.name.size()));
    w.put_bytes(nt.name.data(), nt.name.size());
    w.put(static_cast<std::uint8_t>(dtype_of<T>()));
    w.put(static_cast<std::uint32_t>(nt.tensor->rank()));
    for (Index e : nt.tensor->shape()) w.put(static_cast<std::uint64_t>(e));
    w.put_bytes(nt.tensor->data(), sizeof(T) * static_cast<std::size_t>(nt.tensor->size()));
  }

  // Write-then-rename so an interrupted save never leaves a torn file.
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(Kind::kIo, "cannot write checkpoint '" + tmp.string() + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError(Kind::kIo, "write failed for checkpoint '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

template <typename T>
void load_checkpoint_into(Network<T>& net, TrainerState* state, const std::filesystem::path& path) {
  Reader r(slurp(path), path.string());
  const ParsedHeader h = read_header(r);
  if (h.info.dtype != dtype_of<T>()) {
    throw CheckpointError(Kind::kPrecisionMismatch, "checkpoint '" + path.string() + "' stores " +
                                                         dtype_name(h.info.dtype) + " tensors, network is " +
                                                         dtype_name(dtype_of<T>()));
  }
  if (!(h.info.spec == net.spec())) {
    throw CheckpointError(Kind::kSpecMismatch, "checkpoint '" + path.string() +
                                                   "' was saved from a different network spec:\n" +
                                                   network_to_ini(h.info.spec) + "target network:\n" +
                                                   network_to_ini(net.spec()));
  }
  std::map<std::string, Tensor<T>*> slots;
  for (const auto& nt : net.state(true)) slots.emplace(nt.name, nt.tensor);
  // Stage into copies so a failed load leaves the network untouched.
  std::map<std::string, Tensor<T>> loaded;
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.get<std::uint32_t>();
    const std::string name(r.take(name_len), name_len);
    const auto dtype = static_cast<DType>(r.get<std::uint8_t>());
    const auto rank = r.get<std::uint32_t>();
    if (rank > 8) {
      throw CheckpointError(Kind::kCorruptHeader, "tensor '" + name + "' has implausible rank " + std::to_string(rank));
    }
    Shape shape(rank);
    for (auto& e : shape) e = static_cast<Index>(r.get<std::uint64_t>());
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw CheckpointError(Kind::kUnknownTensor, "checkpoint '" + path.string() + "' holds unknown tensor '" + name + "'");
    }
    if (dtype != dtype_of<T>()) {
      throw CheckpointError(Kind::kPrecisionMismatch, "tensor '" + name + "' has dtype code " +
                                                           std::to_string(static_cast<int>(dtype)));
    }
    if (shape != it->second->shape()) {
      throw CheckpointError(Kind::kShapeMismatch, "tensor '" + name + "' has shape " + to_string(shape) +
                                                       ", network expects " + to_string(it->second->shape()));
    }
    if (loaded.count(name)) {
      throw CheckpointError(Kind::kCorruptHeader, "tensor '" + name + "' appears twice");
    }
    Tensor<T> t(shape);
    std::memcpy(t.data(), r.take(sizeof(T) * static_cast<std::size_t>(t.size())),
                sizeof(T) * static_cast<std::size_t>(t.size()));
    loaded.emplace(name, std::move(t));
  }
  if (!r.at_end()) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path.string() + "' has trailing bytes at offset " +
                                                     std::to_string(r.pos()));
  }
  for (const auto& [name, slot] : slots) {
    if (!loaded.count(name)) {
      throw CheckpointError(Kind::kMissingTensor, "checkpoint '" + path.string() + "' lacks tensor '" + name + "'");
    }
  }
  TrainerState parsed;
  parsed.iteration = h.info.iteration;
  std::istringstream rng(h.rng_state);
  rng >> parsed.step_rng;
  if (!rng) throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path.string() + "' has a corrupt RNG state");
  try {
    net.set_support(h.info.support);
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(Kind::kCorruptHeader, "checkpoint '" + path.string() + "': " + e.what());
  }
  for (auto& [name, t] : loaded) *slots.at(name) = std::move(t);
  if (state != nullptr) *state = parsed;
}

template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path, TrainerState* state) {
  const CheckpointInfo info = read_checkpoint_info(path);
  Network<T> net(info.spec, 0);
  load_checkpoint_into(net, state, path);
  return net;
}

template void save_checkpoint<float>(Network<float>&, const TrainerState&, const std::filesystem::path&);
template void save_checkpoint<double>(Network<double>&, const TrainerState&, const std::filesystem::path&);
template void load_checkpoint_into<float>(Network<float>&, TrainerState*, const std::filesystem::path&);
template void load_checkpoint_into<double>(Network<double>&, TrainerState*, const std::filesystem::path&);
template Network<float> load_checkpoint<float>(const std::filesystem::path&, TrainerState*);
template Network<double> load_checkpoint<double>(const std::filesystem::path&, TrainerState*);

}  // namespace rcnet
