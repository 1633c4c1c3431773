#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "rcnet/network.hpp"
#include "rcnet/train.hpp"

namespace rcnet {

// Raised for malformed or inconsistent configuration; the message names the
// offending [section] key.
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class DataKind { kSyntheticClassification, kCifar10, kSyntheticDenoise, kPgmDenoise };

const char* to_string(DataKind kind);

struct DataConfig {
  DataKind kind = DataKind::kSyntheticClassification;
  std::vector<std::string> train_files;
  std::vector<std::string> test_files;
  // Synthetic generators.
  Index train_samples = 2000;
  Index test_samples = 500;
  double pixel_noise = 0.1;
  // Synthetic denoise image extent; 0 uses the network's image_size.
  Index image_size = 0;
  // Denoise noise level and training patch extent (0 = whole images).
  double sigma = 25.0;
  Index patch_size = 0;
  std::uint64_t seed = 7;
  bool operator==(const DataConfig&) const = default;
};

struct OutputConfig {
  std::string dir = "run";
  bool export_bn = false;
  bool operator==(const OutputConfig&) const = default;
};

struct ExperimentConfig {
  NetworkSpec network;
  TrainConfig train;
  DataConfig data;
  OutputConfig output;
  DType precision = DType::kFloat32;
};

bool operator==(const StepDistribution& a, const StepDistribution& b);
bool operator==(const TrainConfig& a, const TrainConfig& b);
bool operator==(const ExperimentConfig& a, const ExperimentConfig& b);

// Sections: [network] [train] [data] [output]. Unknown sections or keys,
// duplicates and unparsable values are rejected.
ExperimentConfig parse_config(std::string_view text, const std::string& source = "<config>");
ExperimentConfig load_config(const std::filesystem::path& path);

// Every field written out, defaults included; parse_config(to_ini(c)) == c.
std::string to_ini(const ExperimentConfig& cfg);

// The [network] section alone, as stored in checkpoint headers.
std::string network_to_ini(const NetworkSpec& spec);
NetworkSpec network_from_ini(std::string_view text);

// Shortest text that parses back to exactly `v`.
std::string format_double(double v);

}  // namespace rcnet
