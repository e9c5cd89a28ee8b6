#include "dropwiper/residual_mask.hpp"

#include <cmath>
#include <string>

#include "dropwiper/error.hpp"

namespace dropwiper {

ResidualOption parse_residual_option(std::string_view s) {
  if (s == "a" || s == "signed-rgb") return ResidualOption::kSignedRgb;
  if (s == "b" || s == "abs-rgb") return ResidualOption::kAbsRgb;
  if (s == "c" || s == "signed-gray") return ResidualOption::kSignedGray;
  if (s == "d" || s == "abs-gray") return ResidualOption::kAbsGray;
  throw Error(ErrorCode::kInvalidArgument, "unknown residual option '" + std::string(s) + "'");
}

std::string_view to_string(ResidualOption o) {
  switch (o) {
    case ResidualOption::kSignedRgb: return "a";
    case ResidualOption::kAbsRgb: return "b";
    case ResidualOption::kSignedGray: return "c";
    case ResidualOption::kAbsGray: return "d";
  }
  return "?";
}

GrayImage residual(const Image& rainy, const Image& clean, ResidualOption option) {
  if (rainy.height != clean.height || rainy.width != clean.width || rainy.channels != clean.channels) {
    throw Error(ErrorCode::kShapeMismatch, "residual: rainy and clean images differ in shape");
  }
  const bool absolute = option == ResidualOption::kAbsRgb || option == ResidualOption::kAbsGray;
  auto diff = [absolute](double a, double b) { return absolute ? std::abs(a - b) : clamp01(a - b); };

  if (option == ResidualOption::kSignedRgb || option == ResidualOption::kAbsRgb) {
    Image r(rainy.height, rainy.width, rainy.channels);
    for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = diff(rainy.data[i], clean.data[i]);
    return to_grayscale(r);
  }
  const GrayImage ga = to_grayscale(rainy);
  const GrayImage gb = to_grayscale(clean);
  GrayImage r(ga.height, ga.width);
  for (std::size_t i = 0; i < r.data.size(); ++i) r.data[i] = diff(ga.data[i], gb.data[i]);
  return r;
}

Mask residual_mask(const Image& rainy, const Image& clean, ResidualOption option, int tau,
                   const Preprocess& pre) {
  if (!pre.equalize && !pre.distort) return threshold(residual(rainy, clean, option), tau);
  auto prepare = [&pre](const Image& img) {
    Image out = pre.equalize ? histogram_equalize(img) : img;
    if (pre.distort) out = photometric_distort(out, *pre.distort);
    return out;
  };
  return threshold(residual(prepare(rainy), prepare(clean), option), tau);
}

}  // namespace dropwiper
