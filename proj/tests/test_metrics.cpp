#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>

#include "dropwiper/error.hpp"
#include "dropwiper/metrics.hpp"

namespace fs = std::filesystem;
using namespace dropwiper;

namespace {

GrayImage random_gray(int h, int w, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  GrayImage g(h, w);
  for (double& v : g.data) v = u(rng);
  return g;
}

Mask mask_from(int h, int w, std::initializer_list<int> on) {
  Mask m(h, w);
  for (int i : on) m.data[i] = 1;
  return m;
}

// Direct windowed formula, two-pass moments per window.
double ssim_oracle(const GrayImage& a, const GrayImage& b) {
  const double c1 = 1e-4, c2 = 9e-4;
  long double total = 0.0L;
  int windows = 0;
  for (int r = 0; r + 8 <= a.height; ++r) {
    for (int c = 0; c + 8 <= a.width; ++c) {
      long double mx = 0, my = 0;
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
          mx += a.at(r + i, c + j);
          my += b.at(r + i, c + j);
        }
      }
      mx /= 64;
      my /= 64;
      long double vx = 0, vy = 0, cov = 0;
      for (int i = 0; i < 8; ++i) {
        for (int j = 0; j < 8; ++j) {
          const long double dx = a.at(r + i, c + j) - mx, dy = b.at(r + i, c + j) - my;
          vx += dx * dx;
          vy += dy * dy;
          cov += dx * dy;
        }
      }
      vx /= 64;
      vy /= 64;
      cov /= 64;
      total += ((2 * mx * my + c1) * (2 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
      ++windows;
    }
  }
  return static_cast<double>(total / windows);
}

}  // namespace

TEST(Psnr, IdenticalIsCapped) {
  const GrayImage g = random_gray(5, 5, 1);
  EXPECT_EQ(psnr(g, g), 100.0);
  const Image rgb(3, 3, 3, 0.4);
  EXPECT_EQ(psnr(rgb, rgb), kPsnrCap);
}

TEST(Psnr, ConstantOffsetTwentyDb) {
  const GrayImage a(4, 6, 0.3);
  const GrayImage b(4, 6, 0.4);
  EXPECT_NEAR(psnr(a, b), 20.0, 1e-9);
}

TEST(Psnr, TinyErrorStillCapped) {
  GrayImage a(1, 1, 0.5), b(1, 1, 0.5 + 1e-8);
  EXPECT_EQ(psnr(a, b), 100.0);
}

TEST(Psnr, BruteForceOracleAndSymmetry) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image a(7, 9, 3), b(7, 9, 3);
  for (double& v : a.data) v = u(rng);
  for (double& v : b.data) v = u(rng);
  long double sse = 0.0L;
  for (int r = 0; r < 7; ++r) {
    for (int c = 0; c < 9; ++c) {
      for (int ch = 0; ch < 3; ++ch) {
        const long double d = a.at(r, c, ch) - b.at(r, c, ch);
        sse += d * d;
      }
    }
  }
  const double expect = static_cast<double>(10.0L * std::log10(1.0L / (sse / (7 * 9 * 3))));
  EXPECT_NEAR(psnr(a, b), expect, 1e-9);
  EXPECT_EQ(psnr(a, b), psnr(b, a));
}

TEST(Psnr, ShapeMismatch) {
  try {
    psnr(GrayImage(2, 2), GrayImage(2, 3));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kShapeMismatch);
  }
  EXPECT_THROW(psnr(Image(2, 2, 3), Image(2, 2, 1)), Error);
}

TEST(Ssim, IdentityIsOne) {
  const GrayImage g = random_gray(12, 10, 3);
  EXPECT_NEAR(ssim(g, g), 1.0, 1e-12);
  EXPECT_NEAR(ssim(GrayImage(8, 8, 0.3), GrayImage(8, 8, 0.3)), 1.0, 1e-12);
}

TEST(Ssim, InvertedImageBelowOne) {
  const GrayImage a = random_gray(16, 16, 4);
  GrayImage b = a;
  for (double& v : b.data) v = 1.0 - v;
  EXPECT_LT(ssim(a, b), 1.0);
  EXPECT_LT(ssim(a, b), 0.0);
}

TEST(Ssim, BruteForceOracleAndSymmetry) {
  for (std::uint64_t s = 0; s < 5; ++s) {
    const GrayImage a = random_gray(14 + static_cast<int>(s), 11, 10 + s);
    GrayImage b = a;
    std::mt19937_64 rng(20 + s);
    std::normal_distribution<double> n(0.0, 0.1);
    for (double& v : b.data) v = clamp01(v + n(rng));
    EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-9);
    EXPECT_NEAR(ssim(a, b), ssim(b, a), 1e-12);
  }
}

TEST(Ssim, ExactlyEightByEightIsOneWindow) {
  const GrayImage a = random_gray(8, 8, 30);
  const GrayImage b = random_gray(8, 8, 31);
  EXPECT_NEAR(ssim(a, b), ssim_oracle(a, b), 1e-9);
}

TEST(Ssim, TooSmall) {
  try {
    ssim(GrayImage(7, 20), GrayImage(7, 20));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
  EXPECT_THROW(ssim(GrayImage(8, 8), GrayImage(8, 9)), Error);
}

TEST(MaskScore, PerfectMatch) {
  const Mask m = mask_from(3, 3, {0, 4, 5});
  const MaskScore s = mask_score(m, m);
  EXPECT_EQ(s.iou, 1.0);
  EXPECT_EQ(s.precision, 1.0);
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.true_positives, 3u);
}

TEST(MaskScore, Disjoint) {
  const MaskScore s = mask_score(mask_from(2, 2, {0}), mask_from(2, 2, {3}));
  EXPECT_EQ(s.iou, 0.0);
  EXPECT_EQ(s.precision, 0.0);
  EXPECT_EQ(s.recall, 0.0);
  EXPECT_EQ(s.false_positives, 1u);
  EXPECT_EQ(s.false_negatives, 1u);
}

TEST(MaskScore, SupersetOfEqualExtraArea) {
  const MaskScore s = mask_score(mask_from(2, 4, {0, 1, 2, 3}), mask_from(2, 4, {0, 1}));
  EXPECT_EQ(s.recall, 1.0);
  EXPECT_EQ(s.precision, 0.5);
  EXPECT_EQ(s.iou, 0.5);
}

TEST(MaskScore, EmptyConventions) {
  const MaskScore both = mask_score(Mask(3, 3), Mask(3, 3));
  EXPECT_EQ(both.iou, 1.0);
  EXPECT_EQ(both.precision, 1.0);
  EXPECT_EQ(both.recall, 1.0);

  const MaskScore no_pred = mask_score(Mask(3, 3), mask_from(3, 3, {2}));
  EXPECT_EQ(no_pred.precision, 1.0);
  EXPECT_EQ(no_pred.recall, 0.0);
  EXPECT_EQ(no_pred.iou, 0.0);

  const MaskScore no_truth = mask_score(mask_from(3, 3, {2}), Mask(3, 3));
  EXPECT_EQ(no_truth.recall, 1.0);
  EXPECT_EQ(no_truth.precision, 0.0);
  EXPECT_EQ(no_truth.iou, 0.0);
}

TEST(MaskScore, IouBoundedByPrecisionAndRecall) {
  std::mt19937_64 rng(40);
  for (int k = 0; k < 200; ++k) {
    Mask a(6, 6), b(6, 6);
    for (auto& v : a.data) v = rng() % 3 == 0;
    for (auto& v : b.data) v = rng() % 2 == 0;
    const MaskScore s = mask_score(a, b);
    if (s.true_positives + s.false_positives + s.false_negatives == 0) continue;
    EXPECT_LE(s.iou, s.precision);
    EXPECT_LE(s.iou, s.recall);
    const double tp = static_cast<double>(s.true_positives);
    EXPECT_DOUBLE_EQ(s.iou, tp / (tp + s.false_positives + s.false_negatives));
  }
  EXPECT_THROW(mask_score(Mask(2, 2), Mask(3, 2)), Error);
}

TEST(EvalCsv, Format) {
  std::vector<EvalRow> rows;
  rows.push_back({"a", 100.0, 1.0, MaskScore{}});
  rows.push_back({"b", 23.5, 0.75, std::nullopt});
  const std::string csv = format_eval_csv(rows);
  EXPECT_EQ(csv,
            "image_id,psnr,ssim,iou,precision,recall\n"
            "a,100.000000,1.000000,1.000000,1.000000,1.000000\n"
            "b,23.500000,0.750000,,,\n");
  const fs::path p = fs::temp_directory_path() / "dropwiper_test_metrics.csv";
  write_eval_csv(rows, p);
  std::ifstream in(p, std::ios::binary);
  EXPECT_EQ(std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()), csv);
  EXPECT_THROW(write_eval_csv(rows, "/nonexistent_dir/r.csv"), Error);
}
