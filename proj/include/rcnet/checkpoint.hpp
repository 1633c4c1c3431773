#pragma once

// Binary checkpoint layout (little-endian):
//   8 bytes   magic "RCNETCKP"
//   uint32    format version
//   uint64    header length, then the header text (INI: [checkpoint] + [network])
//   uint32    tensor count, then per tensor:
//     uint32 name length, name bytes, uint8 dtype code, uint32 rank,
//     uint64 extents[rank], raw element data
// Tensor element width follows the network precision (f32 by default).

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcnet/network.hpp"
#include "rcnet/train.hpp"

namespace rcnet {

inline constexpr std::uint32_t kCheckpointVersion = 1;

class CheckpointError : public std::runtime_error {
 public:
  enum class Kind { kIo, kCorruptHeader, kVersionMismatch, kUnknownTensor, kShapeMismatch, kMissingTensor,
                    kSpecMismatch, kPrecisionMismatch };
  CheckpointError(Kind kind, const std::string& message) : std::runtime_error(message), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

// Header fields readable without knowing the precision.
struct CheckpointInfo {
  std::uint32_t version = 0;
  DType dtype = DType::kFloat32;
  NetworkSpec spec;
  std::vector<int> support;
  Index iteration = 0;
};

CheckpointInfo read_checkpoint_info(const std::filesystem::path& path);

template <typename T>
void save_checkpoint(Network<T>& net, const TrainerState& state, const std::filesystem::path& path);

// Loads into an existing network; its spec must match the file's.
template <typename T>
void load_checkpoint_into(Network<T>& net, TrainerState* state, const std::filesystem::path& path);

// Builds the network described by the file and loads it.
template <typename T>
Network<T> load_checkpoint(const std::filesystem::path& path, TrainerState* state = nullptr);

}  // namespace rcnet
