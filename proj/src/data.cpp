#include "rcnet/data.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>
#include <sstream>

namespace rcnet {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

namespace {

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

LabeledDataset load_cifar10(const std::vector<std::filesystem::path>& files, const std::string& split) {
  if (files.empty()) throw DataError("load_cifar10: no files given");
  std::vector<std::vector<unsigned char>> shards;
  Index total = 0;
  for (const auto& path : files) {
    auto bytes = read_file(path);
    const auto size = static_cast<Index>(bytes.size());
    if (size == 0 || size % kCifarRecordBytes != 0) {
      const Index complete = size / kCifarRecordBytes;
      throw DataError("load_cifar10: '" + path.string() + "' is truncated: " + std::to_string(size) +
                      " bytes, record " + std::to_string(complete) + " starting at byte offset " +
                      std::to_string(complete * kCifarRecordBytes) + " is incomplete");
    }
    total += size / kCifarRecordBytes;
    shards.push_back(std::move(bytes));
  }
  Dataset ds;
  ds.task = Task::kClassify;
  ds.split = split;
  ds.num_classes = 10;
  ds.images = Tensor<float>({total, 3, 32, 32});
  ds.labels.reserve(static_cast<std::size_t>(total));
  float* dst = ds.images.data();
  for (std::size_t f = 0; f < shards.size(); ++f) {
    const auto& bytes = shards[f];
    for (std::size_t off = 0; off < bytes.size(); off += kCifarRecordBytes) {
      const int label = bytes[off];
      if (label >= 10) {
        throw DataError("load_cifar10: '" + files[f].string() + "' label " + std::to_string(label) +
                        " out of range at byte offset " + std::to_string(off));
      }
      ds.labels.push_back(label);
      for (Index p = 0; p < kCifarRecordBytes - 1; ++p) *dst++ = static_cast<float>(bytes[off + 1 + p]) / 255.0f;
    }
  }
  return ds;
}

LabeledDataset make_synthetic_classification(int num_classes, Index samples, Index image_size, std::uint64_t seed,
                                             Index channels, double pixel_noise) {
  if (num_classes < 2 || samples < 1 || image_size < 1 || channels < 1) {
    throw std::invalid_argument("make_synthetic_classification: sizes must be positive and classes >= 2");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  Dataset ds;
  ds.task = Task::kClassify;
  ds.num_classes = num_classes;
  ds.images = Tensor<float>({samples, channels, image_size, image_size});
  ds.labels.resize(static_cast<std::size_t>(samples));
  const double pi = std::numbers::pi;
  const Index plane = image_size * image_size;
  for (Index i = 0; i < samples; ++i) {
    const int label = static_cast<int>(i % num_classes);
    ds.labels[static_cast<std::size_t>(i)] = label;
    const double theta = pi * label / num_classes + 0.08 * normal(rng);
    const double freq = 0.12 + 0.1 * unit(rng);  // cycles per pixel
    const double phase = 2 * pi * unit(rng);
    const double amp = 0.15 + 0.15 * unit(rng);
    const double kx = 2 * pi * freq * std::cos(theta);
    const double ky = 2 * pi * freq * std::sin(theta);
    for (Index c = 0; c < channels; ++c) {
      const double tint = 0.6 + 0.4 * unit(rng);
      const double offset = 0.5 + 0.1 * (unit(rng) - 0.5);
      float* img = ds.images.data() + (i * channels + c) * plane;
      for (Index y = 0; y < image_size; ++y) {
        for (Index x = 0; x < image_size; ++x) {
          const double v = offset + amp * tint * std::sin(kx * x + ky * y + phase) + pixel_noise * normal(rng);
          img[y * image_size + x] = static_cast<float>(v);
        }
      }
    }
  }
  // Interleaved labels would leak order into unshuffled batches; permute once.
  std::vector<Index> perm(static_cast<std::size_t>(samples));
  for (Index i = 0; i < samples; ++i) perm[static_cast<std::size_t>(i)] = i;
  std::shuffle(perm.begin(), perm.end(), rng);
  Dataset out = ds;
  const Index sample_size = channels * plane;
  for (Index i = 0; i < samples; ++i) {
    const Index src = perm[static_cast<std::size_t>(i)];
    std::copy_n(ds.images.data() + src * sample_size, sample_size, out.images.data() + i * sample_size);
    out.labels[static_cast<std::size_t>(i)] = ds.labels[static_cast<std::size_t>(src)];
  }
  return out;
}

Tensor<float> make_synthetic_textures(Index count, Index image_size, std::uint64_t seed, Index channels) {
  if (count < 1 || image_size < 1 || channels < 1) {
    throw std::invalid_argument("make_synthetic_textures: sizes must be positive");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double pi = std::numbers::pi;
  Tensor<float> out({count, channels, image_size, image_size});
  const Index plane = image_size * image_size;
  for (Index i = 0; i < count; ++i) {
    struct Wave {
      double kx, ky, phase, amp;
    };
    std::vector<Wave> waves(3);
    for (auto& w : waves) {
      const double theta = pi * unit(rng);
      const double freq = 0.02 + 0.08 * unit(rng);
      w = {2 * pi * freq * std::cos(theta), 2 * pi * freq * std::sin(theta), 2 * pi * unit(rng), 20 + 25 * unit(rng)};
    }
    struct Disc {
      double cx, cy, r, level;
    };
    std::vector<Disc> discs(3);
    for (auto& d : discs) {
      d = {image_size * unit(rng), image_size * unit(rng), image_size * (0.1 + 0.2 * unit(rng)), 40 + 175 * unit(rng)};
    }
    const double gx = 60 * (unit(rng) - 0.5) / image_size;
    const double gy = 60 * (unit(rng) - 0.5) / image_size;
    for (Index c = 0; c < channels; ++c) {
      float* img = out.data() + (i * channels + c) * plane;
      for (Index y = 0; y < image_size; ++y) {
        for (Index x = 0; x < image_size; ++x) {
          double v = 128 + gx * x + gy * y;
          for (const auto& w : waves) v += w.amp * std::sin(w.kx * x + w.ky * y + w.phase);
          for (const auto& d : discs) {
            if ((x - d.cx) * (x - d.cx) + (y - d.cy) * (y - d.cy) < d.r * d.r) v = 0.3 * v + 0.7 * d.level;
          }
          img[y * image_size + x] = static_cast<float>(std::clamp(v, 0.0, 255.0));
        }
      }
    }
  }
  return out;
}

DenoisePair add_gaussian_noise(const Tensor<float>& clean, double sigma, std::mt19937_64& rng) {
  if (!(sigma > 0)) throw std::invalid_argument("add_gaussian_noise: sigma must be positive");
  std::normal_distribution<double> noise(0.0, sigma);
  DenoisePair pair{clean, clean, sigma};
  for (float& v : pair.noisy.values()) v = static_cast<float>(v + noise(rng));
  return pair;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b, double max_value) {
  check_same_shape(a.shape(), b.shape(), "psnr");
  if (a.empty()) throw std::invalid_argument("psnr: empty tensors");
  double sse = 0;
  for (Index i = 0; i < a.size(); ++i) {
    const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
    sse += d * d;
  }
  if (sse == 0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(max_value * max_value / (sse / static_cast<double>(a.size()))));
}

Dataset make_denoise_set(Tensor<float> clean, double sigma, std::uint64_t seed, const std::string& split) {
  std::mt19937_64 rng(seed);
  Dataset ds;
  ds.task = Task::kDenoise;
  ds.split = split;
  ds.sigma = sigma;
  ds.noisy = add_gaussian_noise(clean, sigma, rng).noisy;
  ds.images = std::move(clean);
  return ds;
}

namespace {

// Skips whitespace and '#' comments between PGM header fields.
Index pgm_field(const std::vector<unsigned char>& bytes, std::size_t& pos, const std::string& path) {
  while (pos < bytes.size()) {
    if (bytes[pos] == '#') {
      while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
    } else if (std::isspace(bytes[pos])) {
      ++pos;
    } else {
      break;
    }
  }
  Index value = 0;
  bool any = false;
  while (pos < bytes.size() && std::isdigit(bytes[pos])) {
    value = value * 10 + (bytes[pos++] - '0');
    any = true;
  }
  if (!any) throw DataError("read_pgm: malformed header in '" + path + "' at byte offset " + std::to_string(pos));
  return value;
}

}  // namespace

Tensor<float> read_pgm(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') {
    throw DataError("read_pgm: '" + path.string() + "' is not a binary PGM (P5)");
  }
  std::size_t pos = 2;
  const Index w = pgm_field(bytes, pos, path.string());
  const Index h = pgm_field(bytes, pos, path.string());
  const Index maxval = pgm_field(bytes, pos, path.string());
  if (w < 1 || h < 1 || maxval < 1 || maxval > 255) {
    throw DataError("read_pgm: '" + path.string() + "' must be 8-bit with positive extents");
  }
  ++pos;  // single whitespace before the raster
  if (bytes.size() < pos + static_cast<std::size_t>(w * h)) {
    throw DataError("read_pgm: '" + path.string() + "' raster truncated at byte offset " + std::to_string(bytes.size()));
  }
  Tensor<float> out({1, 1, h, w});
  const double scale = 255.0 / static_cast<double>(maxval);
  for (Index i = 0; i < w * h; ++i) out[i] = static_cast<float>(bytes[pos + static_cast<std::size_t>(i)] * scale);
  return out;
}

void write_pgm(const std::filesystem::path& path, const Tensor<float>& image) {
  const auto& s = image.shape();
  const bool ok = (s.size() == 2) || (s.size() == 3 && s[0] == 1) || (s.size() == 4 && s[0] == 1 && s[1] == 1);
  if (!ok) throw DataError("write_pgm: expected a single-channel image, got " + to_string(s));
  const Index h = s[s.size() - 2];
  const Index w = s[s.size() - 1];
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_pgm: cannot open '" + path.string() + "'");
  out << "P5\n" << w << ' ' << h << "\n255\n";
  std::vector<unsigned char> raster(static_cast<std::size_t>(w * h));
  for (Index i = 0; i < w * h; ++i) {
    raster[static_cast<std::size_t>(i)] =
        static_cast<unsigned char>(std::lround(std::clamp(static_cast<double>(image[i]), 0.0, 255.0)));
  }
  out.write(reinterpret_cast<const char*>(raster.data()), static_cast<std::streamsize>(raster.size()));
  if (!out) throw DataError("write_pgm: write failed for '" + path.string() + "'");
}

Tensor<float> read_raw_tensor(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  auto need = [&](std::size_t end) {
    if (bytes.size() < end) {
      throw DataError("read_raw_tensor: '" + path.string() + "' truncated at byte offset " +
                      std::to_string(bytes.size()));
    }
  };
  need(8);
  if (std::memcmp(bytes.data(), "RCF4", 4) != 0) throw DataError("read_raw_tensor: bad magic in '" + path.string() + "'");
  std::uint32_t rank = 0;
  std::memcpy(&rank, bytes.data() + 4, 4);
  if (rank < 1 || rank > 8) throw DataError("read_raw_tensor: implausible rank " + std::to_string(rank));
  need(8 + 4 * rank);
  Shape shape(rank);
  for (std::uint32_t i = 0; i < rank; ++i) {
    std::uint32_t e = 0;
    std::memcpy(&e, bytes.data() + 8 + 4 * i, 4);
    if (e == 0) throw DataError("read_raw_tensor: zero extent in '" + path.string() + "'");
    shape[i] = e;
  }
  const std::size_t offset = 8 + 4 * rank;
  Tensor<float> t(shape);
  need(offset + 4 * static_cast<std::size_t>(t.size()));
  if (bytes.size() != offset + 4 * static_cast<std::size_t>(t.size())) {
    throw DataError("read_raw_tensor: trailing bytes in '" + path.string() + "'");
  }
  std::memcpy(t.data(), bytes.data() + offset, 4 * static_cast<std::size_t>(t.size()));
  return t;
}

void write_raw_tensor(const std::filesystem::path& path, const Tensor<float>& t) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("write_raw_tensor: cannot open '" + path.string() + "'");
  out.write("RCF4", 4);
  const auto rank = static_cast<std::uint32_t>(t.rank());
  out.write(reinterpret_cast<const char*>(&rank), 4);
  for (Index e : t.shape()) {
    const auto e32 = static_cast<std::uint32_t>(e);
    out.write(reinterpret_cast<const char*>(&e32), 4);
  }
  out.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(4 * t.size()));
  if (!out) throw DataError("write_raw_tensor: write failed for '" + path.string() + "'");
}

template <typename T>
Tensor<T> gather_batch(const Tensor<float>& images, std::span<const Index> indices) {
  Shape shape = images.shape();
  const Index sample = images.size() / shape[0];
  shape[0] = static_cast<Index>(indices.size());
  Tensor<T> out(shape);
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const float* src = images.data() + indices[b] * sample;
    T* dst = out.data() + static_cast<Index>(b) * sample;
    for (Index i = 0; i < sample; ++i) dst[i] = static_cast<T>(src[i]);
  }
  return out;
}

template <typename T>
Tensor<T> cast(const Tensor<float>& t) {
  Tensor<T> out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = static_cast<T>(t[i]);
  return out;
}

template <typename T>
Tensor<float> to_float(const Tensor<T>& t) {
  Tensor<float> out(t.shape());
  for (Index i = 0; i < t.size(); ++i) out[i] = static_cast<float>(t[i]);
  return out;
}

template double psnr<float>(const Tensor<float>&, const Tensor<float>&, double);
template double psnr<double>(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> gather_batch<float>(const Tensor<float>&, std::span<const Index>);
template Tensor<double> gather_batch<double>(const Tensor<float>&, std::span<const Index>);
template Tensor<float> cast<float>(const Tensor<float>&);
template Tensor<double> cast<double>(const Tensor<float>&);
template Tensor<float> to_float<float>(const Tensor<float>&);
template Tensor<float> to_float<double>(const Tensor<double>&);

}  // namespace rcnet
