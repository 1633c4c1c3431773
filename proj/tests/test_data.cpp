#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "rcnet/data.hpp"
#include "test_util.hpp"

using namespace rcnet;
namespace fs = std::filesystem;

namespace {

// Record i: label i % 10, channel c pixel p = (i + 3c + p) % 256.
fs::path write_cifar_fixture(const fs::path& dir, int records, const std::string& name = "data_batch.bin") {
  const fs::path path = dir / name;
  std::ofstream out(path, std::ios::binary);
  for (int i = 0; i < records; ++i) {
    out.put(static_cast<char>(i % 10));
    for (int c = 0; c < 3; ++c)
      for (int p = 0; p < 1024; ++p) out.put(static_cast<char>((i + 3 * c + p) % 256));
  }
  return path;
}

}  // namespace

TEST(Cifar, SingleRecord) {
  const auto dir = rcnet::testing::temp_dir("cifar1");
  const Dataset d = load_cifar10({write_cifar_fixture(dir, 1)});
  EXPECT_EQ(d.images.shape(), (Shape{1, 3, 32, 32}));
  EXPECT_EQ(d.labels, (std::vector<int>{0}));
  EXPECT_EQ(d.num_classes, 10);
}

TEST(Cifar, LabelsPlanesAndScaling) {
  const auto dir = rcnet::testing::temp_dir("cifar2");
  const Dataset d = load_cifar10({write_cifar_fixture(dir, 12), write_cifar_fixture(dir, 3, "b2.bin")}, "test");
  ASSERT_EQ(d.size(), 15);
  EXPECT_EQ(d.split, "test");
  EXPECT_EQ(d.labels[9], 9);
  EXPECT_EQ(d.labels[12], 0);
  for (int i : {0, 5, 11}) {
    for (int c = 0; c < 3; ++c) {
      for (int p : {0, 1, 31, 32, 1023}) {
        const float expected = static_cast<float>((i + 3 * c + p) % 256) / 255.f;
        EXPECT_EQ(d.images.at({i, c, p / 32, p % 32}), expected);
      }
    }
  }
  for (float v : d.images.values()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 1.f);
  }
}

TEST(Cifar, TruncatedFileReportsOffset) {
  const auto dir = rcnet::testing::temp_dir("cifar3");
  const auto path = write_cifar_fixture(dir, 2);
  fs::resize_file(path, 3073 + 100);
  try {
    load_cifar10({path});
    FAIL();
  } catch (const DataError& e) {
    EXPECT_NE(std::string(e.what()).find("3073"), std::string::npos) << e.what();
  }
  EXPECT_THROW(load_cifar10({dir / "missing.bin"}), DataError);
}

TEST(Cifar, RejectsBadLabel) {
  const auto dir = rcnet::testing::temp_dir("cifar4");
  const auto path = write_cifar_fixture(dir, 1);
  std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
  f.put(static_cast<char>(10));
  f.close();
  EXPECT_THROW(load_cifar10({path}), DataError);
}

TEST(Synthetic, DeterministicAndShaped) {
  const Dataset a = make_synthetic_classification(3, 2000, 16, 5);
  const Dataset b = make_synthetic_classification(3, 2000, 16, 5);
  const Dataset c = make_synthetic_classification(3, 2000, 16, 6);
  EXPECT_EQ(a.images.shape(), (Shape{2000, 3, 16, 16}));
  EXPECT_TRUE(bit_equal(a.images, b.images));
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_FALSE(bit_equal(a.images, c.images));
  std::vector<int> counts(3);
  for (int l : a.labels) {
    ASSERT_GE(l, 0);
    ASSERT_LT(l, 3);
    ++counts[static_cast<std::size_t>(l)];
  }
  for (int n : counts) EXPECT_NEAR(n, 667, 1);
}

TEST(Synthetic, TexturesInRange) {
  const Tensor<float> t = make_synthetic_textures(4, 32, 1);
  EXPECT_EQ(t.shape(), (Shape{4, 1, 32, 32}));
  for (float v : t.values()) {
    EXPECT_GE(v, 0.f);
    EXPECT_LE(v, 255.f);
  }
  EXPECT_TRUE(bit_equal(t, make_synthetic_textures(4, 32, 1)));
}

TEST(Noise, StatisticsAtSigma25And50) {
  Tensor<float> clean({1, 1, 256, 256}, 128.f);
  std::mt19937_64 rng(1);
  for (double sigma : {25.0, 50.0}) {
    const DenoisePair pair = add_gaussian_noise(clean, sigma, rng);
    double sum = 0, sq = 0;
    for (Index i = 0; i < clean.size(); ++i) {
      const double d = pair.noisy[i] - clean[i];
      sum += d;
      sq += d * d;
    }
    const double n = static_cast<double>(clean.size());
    const double mean = sum / n;
    const double sd = std::sqrt(sq / n - mean * mean);
    EXPECT_LT(std::abs(mean), 0.5);
    EXPECT_NEAR(sd, sigma, sigma * 0.04);
    if (sigma == 25.0) EXPECT_NEAR(psnr(pair.noisy, clean), 20 * std::log10(255.0 / 25.0), 0.3);
  }
  EXPECT_THROW(add_gaussian_noise(clean, 0.0, rng), std::invalid_argument);
}

TEST(Noise, NotClippedAndSeedDeterministic) {
  Tensor<float> clean({1, 1, 64, 64}, 250.f);
  std::mt19937_64 a(3), b(3);
  const auto pa = add_gaussian_noise(clean, 25.0, a);
  const auto pb = add_gaussian_noise(clean, 25.0, b);
  EXPECT_TRUE(bit_equal(pa.noisy, pb.noisy));
  float hi = 0;
  for (float v : pa.noisy.values()) hi = std::max(hi, v);
  EXPECT_GT(hi, 255.f);
}

TEST(Psnr, ClosedFormAndCap) {
  Tensor<double> a({1, 1, 4, 4}, 100.0);
  Tensor<double> b = a;
  for (double& v : b.values()) v += 1.0;
  EXPECT_NEAR(psnr(a, b), 20 * std::log10(255.0), 1e-12);
  EXPECT_NEAR(psnr(a, b), 48.1308, 1e-4);
  EXPECT_EQ(psnr(a, a), kPsnrCap);
}

TEST(Pgm, RoundTripAndClipping) {
  const auto dir = rcnet::testing::temp_dir("pgm");
  Tensor<float> img({1, 1, 3, 5});
  for (Index i = 0; i < img.size(); ++i) img[i] = static_cast<float>(i * 20);
  img[0] = -7.f;
  img[1] = 300.f;
  img[2] = 12.6f;
  write_pgm(dir / "a.pgm", img);
  const Tensor<float> back = read_pgm(dir / "a.pgm");
  EXPECT_EQ(back.shape(), (Shape{1, 1, 3, 5}));
  EXPECT_EQ(back[0], 0.f);
  EXPECT_EQ(back[1], 255.f);
  EXPECT_EQ(back[2], 13.f);
  EXPECT_EQ(back[14], 255.f);
  EXPECT_EQ(back[5], 100.f);
}

TEST(Pgm, HeaderCommentsAndErrors) {
  const auto dir = rcnet::testing::temp_dir("pgm2");
  {
    std::ofstream out(dir / "c.pgm", std::ios::binary);
    out << "P5\n# made by hand\n2 1\n255\n" << '\x05' << '\xff';
  }
  const Tensor<float> t = read_pgm(dir / "c.pgm");
  EXPECT_EQ(t.shape(), (Shape{1, 1, 1, 2}));
  EXPECT_EQ(t[1], 255.f);
  {
    std::ofstream out(dir / "bad.pgm", std::ios::binary);
    out << "P2\n2 1\n255\n5 6\n";
  }
  EXPECT_THROW(read_pgm(dir / "bad.pgm"), DataError);
  {
    std::ofstream out(dir / "short.pgm", std::ios::binary);
    out << "P5\n4 4\n255\n" << '\x01';
  }
  EXPECT_THROW(read_pgm(dir / "short.pgm"), DataError);
  EXPECT_THROW(write_pgm(dir / "x.pgm", Tensor<float>({1, 3, 2, 2})), DataError);
}

TEST(RawTensor, RoundTripAndErrors) {
  const auto dir = rcnet::testing::temp_dir("raw");
  const auto t = rcnet::testing::random_tensor<float>({2, 3, 4}, 1);
  write_raw_tensor(dir / "t.f32", t);
  EXPECT_TRUE(bit_equal(read_raw_tensor(dir / "t.f32"), t));
  EXPECT_EQ(fs::file_size(dir / "t.f32"), 4 + 4 + 3 * 4 + 24 * 4u);
  fs::resize_file(dir / "t.f32", 30);
  EXPECT_THROW(read_raw_tensor(dir / "t.f32"), DataError);
}

TEST(DenoiseSet, FixedNoiseDraw) {
  const Tensor<float> clean = make_synthetic_textures(3, 16, 2);
  const Dataset a = make_denoise_set(clean, 25.0, 9, "test");
  const Dataset b = make_denoise_set(clean, 25.0, 9, "test");
  EXPECT_EQ(a.task, Task::kDenoise);
  EXPECT_TRUE(bit_equal(a.noisy, b.noisy));
  EXPECT_EQ(a.noisy.shape(), clean.shape());
  EXPECT_EQ(a.sigma, 25.0);
}

TEST(GatherBatch, CopiesSelectedSamples) {
  const auto imgs = rcnet::testing::random_tensor<float>({5, 2, 2, 2}, 1);
  const std::vector<Index> idx{4, 1};
  const Tensor<double> b = gather_batch<double>(imgs, idx);
  EXPECT_EQ(b.shape(), (Shape{2, 2, 2, 2}));
  EXPECT_EQ(b[0], static_cast<double>(imgs[4 * 8]));
  EXPECT_EQ(b[8], static_cast<double>(imgs[1 * 8]));
}
