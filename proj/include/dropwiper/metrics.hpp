#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dropwiper/image.hpp"

namespace dropwiper {

inline constexpr double kPsnrCap = 100.0;

/// 10·log10(1 / MSE) on [0,1] data, capped at 100 dB (identical inputs).
double psnr(const Image& a, const Image& b);
double psnr(const GrayImage& a, const GrayImage& b);

/// Mean SSIM over all 8×8 windows (stride 1, uniform weights),
/// C1 = 0.01², C2 = 0.03². Both images must be at least 8×8.
double ssim(const GrayImage& a, const GrayImage& b);

struct MaskScore {
  double iou = 1.0;
  double precision = 1.0;
  double recall = 1.0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t false_negatives = 0;
};

/// Empty denominators score 1 (two empty masks are a perfect match).
MaskScore mask_score(const Mask& pred, const Mask& truth);

struct EvalRow {
  std::string image_id;
  double psnr = 0.0;
  double ssim = 0.0;
  std::optional<MaskScore> mask;  // blank columns when no reference mask exists
};

/// CSV with header image_id,psnr,ssim,iou,precision,recall.
void write_eval_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path);
std::string format_eval_csv(const std::vector<EvalRow>& rows);

}  // namespace dropwiper
