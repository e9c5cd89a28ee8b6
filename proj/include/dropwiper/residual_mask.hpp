#pragma once

#include <optional>
#include <string_view>

#include "dropwiper/image.hpp"

namespace dropwiper {

// How the raindrop image A and the clean image B are differenced.
//   kSignedRgb:   clamp(A − B) per channel, then luma
//   kAbsRgb:      |A − B| per channel, then luma
//   kSignedGray:  clamp(gray(A) − gray(B))
//   kAbsGray:     |gray(A) − gray(B)|
enum class ResidualOption { kSignedRgb, kAbsRgb, kSignedGray, kAbsGray };

/// Accepts "a".."d" or the long names (signed-rgb, abs-rgb, signed-gray, abs-gray).
ResidualOption parse_residual_option(std::string_view s);
std::string_view to_string(ResidualOption o);

struct Preprocess {
  bool equalize = false;
  std::optional<PhotometricParams> distort;
};

GrayImage residual(const Image& rainy, const Image& clean, ResidualOption option);

/// threshold(residual(pre(rainy), pre(clean)), tau). Preprocessing, when
/// enabled, is applied identically to both inputs.
Mask residual_mask(const Image& rainy, const Image& clean, ResidualOption option, int tau,
                   const Preprocess& pre = {});

}  // namespace dropwiper
