#pragma once

#include <cstdint>
#include <random>
#include <vector>

namespace dropwiper {

/// Row-major H×W×C intensity buffer in [0,1]. C is 1 or 3.
struct Image {
  int height = 0;
  int width = 0;
  int channels = 3;
  std::vector<double> data;

  Image() = default;
  Image(int h, int w, int c, double fill = 0.0);

  std::size_t pixel_count() const { return static_cast<std::size_t>(height) * width; }
  double& at(int r, int c, int ch) { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }
  double at(int r, int c, int ch) const { return data[(static_cast<std::size_t>(r) * width + c) * channels + ch]; }

  bool operator==(const Image&) const = default;
};

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> data;

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0);

  double& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  double at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }

  bool operator==(const GrayImage&) const = default;
};

/// Binary raindrop map: 1 = raindrop / missing, 0 = background / known.
/// On disk a 1 is written as byte 255.
struct Mask {
  int height = 0;
  int width = 0;
  std::vector<std::uint8_t> data;

  Mask() = default;
  Mask(int h, int w, std::uint8_t fill = 0);

  std::uint8_t& at(int r, int c) { return data[static_cast<std::size_t>(r) * width + c]; }
  std::uint8_t at(int r, int c) const { return data[static_cast<std::size_t>(r) * width + c]; }
  std::size_t count() const;

  bool operator==(const Mask&) const = default;
};

inline double clamp01(double v) { return v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v); }

/// 8-bit level of an intensity, round(255·v).
int to_level(double v);

GrayImage to_gray_image(const Image& img);  // requires channels == 1
Image to_image(const GrayImage& g);         // single-channel Image
Image gray_to_rgb(const GrayImage& g);

/// Rec.601 luma. A single-channel input is returned as-is.
GrayImage to_grayscale(const Image& img);

GrayImage histogram_equalize(const GrayImage& img);
/// Per-channel equalization.
Image histogram_equalize(const Image& img);

struct PhotometricParams {
  double brightness_delta = 0.0;
  double contrast_factor = 1.0;
};

/// out = clamp(factor·(in − 0.5) + 0.5 + delta). Rejects delta ∉ [−0.5, 0.5]
/// and factor ∉ [0.5, 1.5].
Image photometric_distort(const Image& img, double brightness_delta, double contrast_factor);
Image photometric_distort(const Image& img, const PhotometricParams& p);

/// Uniform draw over the admissible parameter box; deterministic per seed.
PhotometricParams sample_photometric_params(std::uint64_t seed, double max_delta = 0.1,
                                            double max_contrast_dev = 0.2);

Image center_crop(const Image& img, int out_h, int out_w);
GrayImage center_crop(const GrayImage& img, int out_h, int out_w);
Mask center_crop(const Mask& m, int out_h, int out_w);

/// 1 iff round(255·intensity) > tau.
Mask threshold(const GrayImage& img, int tau);

/// Quantizes to 8-bit levels, as a save/load cycle would.
Image quantize8(const Image& img);

}  // namespace dropwiper
