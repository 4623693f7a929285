#include <gtest/gtest.h>

#include "maskwatch/augment.hpp"
#include "test_util.hpp"

using namespace maskwatch;

namespace {

Image noise_image(int side, std::uint64_t seed) {
  Rng rng(seed);
  Image img(side, side);
  for (float& v : img.pixels()) v = static_cast<float>(index_below(rng, 256));
  return img;
}

double max_abs_diff(const Image& a, const Image& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.pixels().size(); ++i) d = std::max(d, std::abs(double(a.pixels()[i]) - b.pixels()[i]));
  return d;
}

}  // namespace

TEST(Augment, DisabledEqualsNormalized) {
  const Image img = noise_image(128, 1);
  const auto spec = AugmentationSpec::disabled();
  EXPECT_EQ(augment(img, spec, 9), normalize(img, spec.normalization));
}

TEST(Augment, NoOpParametersWithinTolerance) {
  const Image img = noise_image(128, 2);
  AugmentationSpec spec;
  spec.color_jitter = ColorJitter{0, 0, 0, 0};
  spec.rotation_degrees = 0.0;
  spec.resized_crop = ResizedCrop{{1.0, 1.0}, {1.0, 1.0}};
  spec.gaussian_blur.reset();
  spec.random_erasing = RandomErasing{0.0};
  EXPECT_LE(max_abs_diff(augment(img, spec, 3), normalize(img, spec.normalization)), 1e-6);
}

TEST(Augment, DeterministicInSeedAndShapePreserving) {
  const Image img = noise_image(128, 3);
  const AugmentationSpec spec;
  const Image a = augment(img, spec, 77), b = augment(img, spec, 77);
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.height(), 128);
  EXPECT_EQ(a.width(), 128);
  EXPECT_NE(a, augment(img, spec, 78));
}

TEST(Augment, SideMismatchThrows) { EXPECT_THROW(augment(Image(64, 64), AugmentationSpec{}, 0), InvalidInput); }

TEST(Augment, InvalidSpecRejected) {
  AugmentationSpec spec;
  spec.random_erasing = RandomErasing{1.5};
  EXPECT_THROW(validate(spec), ConfigError);
  spec = AugmentationSpec{};
  spec.resized_crop = ResizedCrop{{0.9, 0.5}, {1, 1}};
  EXPECT_THROW(validate(spec), ConfigError);
}

// Counter-clockwise quarter turn of [[a, b], [c, d]] is [[b, d], [a, c]].
TEST(Rotate, QuarterTurnPermutesPixels) {
  Image img(2, 2);
  const float a = 10, b = 20, c = 30, d = 40;
  for (int ch = 0; ch < 3; ++ch) {
    img.at(0, 0, ch) = a;
    img.at(0, 1, ch) = b;
    img.at(1, 0, ch) = c;
    img.at(1, 1, ch) = d;
  }
  const Image r = rotate(img, 90.0);
  for (int ch = 0; ch < 3; ++ch) {
    EXPECT_NEAR(r.at(0, 0, ch), b, 1e-4);
    EXPECT_NEAR(r.at(0, 1, ch), d, 1e-4);
    EXPECT_NEAR(r.at(1, 0, ch), a, 1e-4);
    EXPECT_NEAR(r.at(1, 1, ch), c, 1e-4);
  }
  const Image full = rotate(rotate(rotate(r, 90.0), 90.0), 90.0);
  EXPECT_LE(max_abs_diff(full, img), 1e-4);
}

TEST(Rotate, ZeroIsIdentity) {
  const Image img = noise_image(16, 4);
  EXPECT_LE(max_abs_diff(rotate(img, 0.0), img), 1e-5);
}

TEST(Blur, ConstantImageUnchanged) {
  const Image img = solid_image(12, 12, {0.3f, -0.2f, 0.9f});
  EXPECT_LE(max_abs_diff(gaussian_blur(img, 5, 1.3), img), 1e-6);
}

TEST(Normalize, MapsByteRange) {
  const Image out = normalize(solid_image(1, 1, {0, 127.5f, 255}), Normalization{});
  EXPECT_FLOAT_EQ(out.at(0, 0, 0), -1.0f);
  EXPECT_NEAR(out.at(0, 0, 1), 0.0f, 1e-6);
  EXPECT_FLOAT_EQ(out.at(0, 0, 2), 1.0f);
}
