#include <gtest/gtest.h>

#include <algorithm>
#include <cfloat>
#include <filesystem>
#include <fstream>
#include <random>
#include <set>

#include "hxbcos/data.hpp"
#include "hxbcos/image_io.hpp"
#include "oracles.hpp"

using namespace hxb;
namespace fs = std::filesystem;

namespace {

std::vector<double> vec(std::span<const double> s) { return {s.begin(), s.end()}; }

Tensor rgb_image(std::size_t h, std::size_t w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return Tensor({3, h, w}, oracle::random_vec(3 * h * w, rng, 0.0, 1.0));
}

void write_pgm(const fs::path& p, std::size_t w, std::size_t h, std::uint8_t v) {
  std::ofstream f(p, std::ios::binary);
  f << "P5\n# grey\n" << w << " " << h << "\n255\n";
  for (std::size_t i = 0; i < w * h; ++i) f.put(static_cast<char>(v));
}

class TempDir : public ::testing::Test {
 protected:
  void SetUp() override {
    dir_ = fs::temp_directory_path() /
           (std::string("hxb_data_") + ::testing::UnitTest::GetInstance()->current_test_info()->name());
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  void TearDown() override { fs::remove_all(dir_); }
  fs::path dir_;
};

}  // namespace

TEST(Encode, Examples) {
  Tensor red({3, 1, 1}, {1, 0, 0});
  EXPECT_EQ(vec(encode_six_channel(red).data()), (std::vector<double>{1, 0, 0, 0, 1, 1}));
  Tensor grey({3, 1, 1}, {0.5, 0.5, 0.5});
  const Tensor g6 = encode_six_channel(grey);
  for (double v : g6.data()) EXPECT_EQ(v, 0.5);
  EXPECT_THROW(encode_six_channel(Tensor({3, 1, 1}, {1.5, 0, 0})), std::invalid_argument);
  EXPECT_THROW(encode_six_channel(Tensor({3, 1, 1}, {-0.1, 0, 0})), std::invalid_argument);
  EXPECT_THROW(encode_six_channel(Tensor({4, 1, 1})), std::invalid_argument);
}

TEST(Encode, ComplementIdentityAndRecovery) {
  Tensor rgb = rgb_image(16, 16, 1);
  auto e = vec(encode_six_channel(rgb).data());
  const std::size_t hw = 256;
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t p = 0; p < hw; ++p) {
      const double x = e[c * hw + p], xc = e[(c + 3) * hw + p];
      EXPECT_EQ(x, rgb.data()[c * hw + p]);
      EXPECT_LE(std::abs(x + xc - 1.0), DBL_EPSILON);
      EXPECT_LE(std::abs((1.0 - xc) - x), DBL_EPSILON);
    }
}

TEST(Encode, QuaternionPadding) {
  Tensor six = encode_six_channel(rgb_image(4, 5, 2));
  Tensor eight = pad_quaternion(six);
  EXPECT_EQ(eight.shape(), (Shape{8, 4, 5}));
  auto a = vec(six.data()), b = vec(eight.data());
  EXPECT_TRUE(std::equal(a.begin(), a.end(), b.begin()));
  for (std::size_t i = a.size(); i < b.size(); ++i) EXPECT_EQ(b[i], 0.0);
  EXPECT_EQ(encode_input(rgb_image(4, 5, 2), 8).shape(), (Shape{8, 4, 5}));
  EXPECT_THROW(encode_input(rgb_image(4, 5, 2), 7), std::invalid_argument);
}

TEST(Images, FlipIsInvolution) {
  Tensor img = rgb_image(5, 7, 3);
  EXPECT_EQ(vec(hflip(hflip(img)).data()), vec(img.data()));
  EXPECT_EQ(hflip(img).at({1, 2, 0}), img.at({1, 2, 6}));
}

TEST(Images, ResizeIdentityAndConstant) {
  Tensor img = rgb_image(6, 6, 4);
  EXPECT_EQ(vec(resize_bilinear(img, 6, 6).data()), vec(img.data()));
  Tensor c({3, 4, 4}, 0.25);
  const Tensor r = resize_bilinear(c, 9, 7);
  for (double v : r.data()) EXPECT_NEAR(v, 0.25, 1e-15);
  // 2x downsampling with half-pixel centers averages 2x2 blocks
  Tensor ramp({1, 2, 2}, {0, 1, 2, 3});
  EXPECT_NEAR(resize_bilinear(ramp, 1, 1).item(), 1.5, 1e-15);
}

TEST(Images, ResizeCenterCrop) {
  Tensor img = rgb_image(10, 20, 5);
  Tensor out = resize_center_crop(img, 8);
  EXPECT_EQ(out.shape(), (Shape{3, 8, 8}));
  EXPECT_EQ(crop(img, 2, 3, 4, 5).shape(), (Shape{3, 4, 5}));
  EXPECT_EQ(crop(img, 2, 3, 4, 5).at({0, 0, 0}), img.at({0, 2, 3}));
  EXPECT_THROW(crop(img, 8, 0, 4, 4), std::invalid_argument);
}

TEST(Augment, FullCropNoFlipEqualsResize) {
  Sample s{rgb_image(12, 12, 6), 2, "x", BoundingBox{2, 3, 6, 9}};
  Rng rng(0);
  Sample a = augment(s, rng, 8, AugmentOptions{1.0, 1.0, 0.0});
  EXPECT_EQ(a.label, 2u);
  EXPECT_EQ(vec(a.image.data()), vec(resize_bilinear(s.image, 8, 8).data()));
}

TEST(Augment, ForcedFlipTwiceRestores) {
  Sample s{rgb_image(8, 8, 7), 1, "x", std::nullopt};
  Rng r1(0), r2(0);
  Sample once = augment(s, r1, 8, AugmentOptions{1.0, 1.0, 1.0});
  EXPECT_EQ(vec(hflip(once.image).data()), vec(s.image.data()));
  Sample twice = augment(once, r2, 8, AugmentOptions{1.0, 1.0, 1.0});
  EXPECT_EQ(vec(twice.image.data()), vec(s.image.data()));
}

TEST(Augment, RangeLabelAndBox) {
  auto m = synth_shapes(3, 32, 1);
  for (std::size_t i = 0; i < m.samples.size(); ++i) {
    Rng rng = sample_rng(9, i, 0);
    Sample a = augment(m.samples[i], rng, 32);
    EXPECT_EQ(a.label, m.samples[i].label);
    EXPECT_EQ(a.image.shape(), (Shape{3, 32, 32}));
    for (double v : a.image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    ASSERT_TRUE(a.box.has_value());
    EXPECT_LE(a.box->x1, 32u);
    EXPECT_LE(a.box->y1, 32u);
    EXPECT_LE(a.box->x0, a.box->x1);
  }
}

TEST(Augment, SampleRngStreamsDiffer) {
  Rng a = sample_rng(1, 0, 0), b = sample_rng(1, 1, 0), c = sample_rng(1, 0, 1), d = sample_rng(1, 0, 0);
  const auto va = a(), vb = b(), vc = c(), vd = d();
  EXPECT_NE(va, vb);
  EXPECT_NE(va, vc);
  EXPECT_EQ(va, vd);
}

TEST(Synth, DeterministicCountsAndBoxes) {
  auto a = synth_shapes(5, 32, 3), b = synth_shapes(5, 32, 3), c = synth_shapes(5, 32, 4);
  ASSERT_EQ(a.samples.size(), 20u);
  EXPECT_EQ(a.class_names, (std::vector<std::string>{"circle", "square", "triangle", "cross"}));
  std::vector<std::size_t> counts(4, 0);
  bool differs = false;
  for (std::size_t i = 0; i < a.samples.size(); ++i) {
    EXPECT_EQ(vec(a.samples[i].image.data()), vec(b.samples[i].image.data()));
    differs |= vec(a.samples[i].image.data()) != vec(c.samples[i].image.data());
    ++counts.at(a.samples[i].label);
    ASSERT_TRUE(a.samples[i].box.has_value());
    const auto& bx = *a.samples[i].box;
    EXPECT_LT(bx.x0, bx.x1);
    EXPECT_LT(bx.y0, bx.y1);
    EXPECT_LE(bx.x1, 32u);
    EXPECT_LE(bx.y1, 32u);
    for (double v : a.samples[i].image.data()) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  }
  EXPECT_TRUE(differs);
  for (auto n : counts) EXPECT_EQ(n, 5u);
  EXPECT_EQ(a.image_size(), 32u);
}

TEST(Split, StratifiedPartition) {
  auto m = synth_shapes(10, 32, 0);
  split_manifest(m, 0.2, 5);
  EXPECT_EQ(m.train.size(), 32u);
  EXPECT_EQ(m.test.size(), 8u);
  std::set<std::size_t> all(m.train.begin(), m.train.end());
  for (auto i : m.test) EXPECT_TRUE(all.insert(i).second);
  EXPECT_EQ(all.size(), 40u);
  std::vector<std::size_t> per(4, 0);
  for (auto i : m.test) ++per[m.samples[i].label];
  for (auto n : per) EXPECT_EQ(n, 2u);
  auto again = synth_shapes(10, 32, 0);
  split_manifest(again, 0.2, 5);
  EXPECT_EQ(again.test, m.test);
}

TEST(Encode, SamplesBatch) {
  auto m = synth_shapes(1, 32, 0);
  Tensor b = encode_samples(m, {0, 2}, 8);
  EXPECT_EQ(b.shape(), (Shape{2, 8, 32, 32}));
  Tensor one = encode_input(m.samples[2].image, 8);
  auto bd = vec(b.data()), od = vec(one.data());
  EXPECT_TRUE(std::equal(od.begin(), od.end(), bd.begin() + od.size()));
}

TEST_F(TempDir, PngRoundTripAndGreyReplication) {
  Tensor img = rgb_image(5, 4, 8);
  write_png_rgb(dir_ / "a.png", img);
  Tensor back = read_image(dir_ / "a.png");
  EXPECT_EQ(back.shape(), (Shape{3, 5, 4}));
  for (std::size_t i = 0; i < img.numel(); ++i) EXPECT_EQ(back.data()[i], to_byte(img.data()[i]) / 255.0);
  write_pgm(dir_ / "g.pgm", 3, 2, 51);
  Tensor g = read_image(dir_ / "g.pgm");
  EXPECT_EQ(g.shape(), (Shape{3, 2, 3}));
  for (double v : g.data()) EXPECT_DOUBLE_EQ(v, 0.2);
  write_ppm(dir_ / "c.ppm", img);
  Tensor c = read_image(dir_ / "c.ppm");
  EXPECT_EQ(vec(c.data()), vec(back.data()));
  Rgba8 r{2, 1, {255, 0, 0, 255, 0, 0, 255, 128}};
  write_png(dir_ / "r.png", r);
  Rgba8 rb = read_png_rgba(dir_ / "r.png");
  EXPECT_EQ(rb.pixels, r.pixels);
  EXPECT_EQ(to_byte(0.5), 128);
  EXPECT_EQ(to_byte(2.0), 255);
}

TEST_F(TempDir, ImageFolder) {
  for (const char* cls : {"b_cls", "a_cls"}) {
    fs::create_directories(dir_ / cls);
    for (int i = 2; i >= 0; --i) write_pgm(dir_ / cls / ("img" + std::to_string(i) + ".pgm"), 6, 4, 100);
  }
  {
    std::ofstream junk(dir_ / "a_cls" / "broken.png");
    junk << "not an image";
  }
  auto m = load_image_folder(dir_, 4);
  ASSERT_EQ(m.samples.size(), 6u);
  EXPECT_EQ(m.class_names, (std::vector<std::string>{"a_cls", "b_cls"}));
  EXPECT_EQ(m.samples[0].id, "a_cls/img0.pgm");
  EXPECT_EQ(m.samples[0].label, 0u);
  EXPECT_EQ(m.samples[5].label, 1u);
  EXPECT_EQ(m.samples[0].image.shape(), (Shape{3, 4, 4}));
  ASSERT_EQ(m.warnings.size(), 1u);
  EXPECT_NE(m.warnings[0].find("broken.png"), std::string::npos);

  write_index(m, dir_ / "index.tsv");
  auto r = load_index(dir_, dir_ / "index.tsv", 4);
  ASSERT_EQ(r.samples.size(), 6u);
  EXPECT_EQ(r.class_names, m.class_names);
  for (std::size_t i = 0; i < 6; ++i) EXPECT_EQ(r.samples[i].id, m.samples[i].id);

  fs::create_directories(dir_ / "c_empty");
  EXPECT_THROW(load_image_folder(dir_, 4), std::runtime_error);
}
