#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "rcnet/network.hpp"
#include "rcnet/tensor.hpp"

namespace rcnet {

class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Images are stored single precision. Classification images are scaled to
// [0,1]; denoise images hold clean pixels on the 0..255 scale.
struct Dataset {
  Task task = Task::kClassify;
  std::string split = "train";
  Tensor<float> images;     // [N,C,H,W]
  std::vector<int> labels;  // classification only
  Index num_classes = 0;
  // Denoise evaluation sets carry a fixed noisy copy; training re-samples noise.
  Tensor<float> noisy;
  double sigma = 0;

  Index size() const { return images.empty() ? 0 : images.dim(0); }
  Index channels() const { return images.dim(1); }
  Index height() const { return images.dim(2); }
  Index width() const { return images.dim(3); }
};

using LabeledDataset = Dataset;

inline constexpr Index kCifarRecordBytes = 3073;

// CIFAR-10 binary shards: 1 label byte + 3072 channel-planar RGB bytes per record.
LabeledDataset load_cifar10(const std::vector<std::filesystem::path>& files, const std::string& split = "train");

// Oriented sinusoid textures, one orientation per class, with random phase,
// amplitude and frequency jitter plus pixel noise. Per-class pixel means are
// flat, so a linear model on raw pixels stays near chance.
LabeledDataset make_synthetic_classification(int num_classes, Index samples, Index image_size, std::uint64_t seed,
                                             Index channels = 3, double pixel_noise = 0.1);

// Clean grayscale-style textures on 0..255: blended sinusoids, a gradient and
// a few constant-intensity discs (sharp edges).
Tensor<float> make_synthetic_textures(Index count, Index image_size, std::uint64_t seed, Index channels = 1);

struct DenoisePair {
  Tensor<float> clean;
  Tensor<float> noisy;
  double sigma = 0;
};

// i.i.d. N(0, sigma^2) per pixel, no clipping.
DenoisePair add_gaussian_noise(const Tensor<float>& clean, double sigma, std::mt19937_64& rng);

inline constexpr double kPsnrCap = 99.0;

// 10 log10(max^2 / MSE); identical inputs report kPsnrCap.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_value = 255.0);

// Denoise evaluation split: clean images with one fixed noise draw.
Dataset make_denoise_set(Tensor<float> clean, double sigma, std::uint64_t seed, const std::string& split);

// 8-bit binary PGM (P5). Returns [1,1,H,W] on 0..255.
Tensor<float> read_pgm(const std::filesystem::path& path);
// Rounds and clips to 0..255; accepts [H,W], [1,H,W] or [1,1,H,W].
void write_pgm(const std::filesystem::path& path, const Tensor<float>& image);

// Raw tensor dump: "RCF4", uint32 rank, uint32 extents, little-endian f32 data.
Tensor<float> read_raw_tensor(const std::filesystem::path& path);
void write_raw_tensor(const std::filesystem::path& path, const Tensor<float>& t);

// Copies samples [indices] of `images` into a batch of precision T.
template <typename T>
Tensor<T> gather_batch(const Tensor<float>& images, std::span<const Index> indices);

template <typename T>
Tensor<T> cast(const Tensor<float>& t);
template <typename T>
Tensor<float> to_float(const Tensor<T>& t);

}  // namespace rcnet
