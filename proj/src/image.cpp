#include "dropwiper/image.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "dropwiper/error.hpp"

namespace dropwiper {

const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kFileNotFound: return "file_not_found";
    case ErrorCode::kUnsupportedFormat: return "unsupported_format";
    case ErrorCode::kUnsupportedBitDepth: return "unsupported_bit_depth";
    case ErrorCode::kCorruptHeader: return "corrupt_header";
    case ErrorCode::kUnwritablePath: return "unwritable_path";
    case ErrorCode::kShapeMismatch: return "shape_mismatch";
    case ErrorCode::kInvalidArgument: return "invalid_argument";
    case ErrorCode::kOutOfRange: return "out_of_range";
    case ErrorCode::kNonFinite: return "non_finite";
    case ErrorCode::kDivergence: return "divergence";
    case ErrorCode::kEmptyDataset: return "empty_dataset";
    case ErrorCode::kBadCheckpoint: return "bad_checkpoint";
  }
  return "unknown";
}

Image::Image(int h, int w, int c, double fill)
    : height(h), width(w), channels(c), data(static_cast<std::size_t>(h) * w * c, fill) {
  if (h < 0 || w < 0 || (c != 1 && c != 3)) {
    throw Error(ErrorCode::kInvalidArgument, "image dims must be non-negative with 1 or 3 channels");
  }
}

GrayImage::GrayImage(int h, int w, double fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

Mask::Mask(int h, int w, std::uint8_t fill)
    : height(h), width(w), data(static_cast<std::size_t>(h) * w, fill) {}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(data.begin(), data.end(), std::uint8_t{1}));
}

int to_level(double v) { return static_cast<int>(std::lround(255.0 * clamp01(v))); }

GrayImage to_gray_image(const Image& img) {
  if (img.channels != 1) {
    throw Error(ErrorCode::kInvalidArgument, "to_gray_image needs a single-channel image");
  }
  GrayImage g(img.height, img.width);
  g.data = img.data;
  return g;
}

Image to_image(const GrayImage& g) {
  Image img(g.height, g.width, 1);
  img.data = g.data;
  return img;
}

Image gray_to_rgb(const GrayImage& g) {
  Image img(g.height, g.width, 3);
  for (std::size_t i = 0; i < g.data.size(); ++i) {
    img.data[3 * i] = img.data[3 * i + 1] = img.data[3 * i + 2] = g.data[i];
  }
  return img;
}

GrayImage to_grayscale(const Image& img) {
  if (img.channels == 1) return to_gray_image(img);
  GrayImage g(img.height, img.width);
  for (std::size_t i = 0; i < img.pixel_count(); ++i) {
    const double* p = &img.data[3 * i];
    g.data[i] = clamp01(0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]);
  }
  return g;
}

namespace {

std::vector<double> equalize_levels(const std::vector<double>& in) {
  std::array<std::size_t, 256> hist{};
  for (double v : in) ++hist[to_level(v)];
  const std::size_t n = in.size();
  std::size_t cdf_min = 0;
  for (std::size_t h : hist) {
    if (h != 0) {
      cdf_min = h;
      break;
    }
  }
  // Single occupied bin: cdf_min == n and the remap is 0/0.
  if (cdf_min == n) return in;

  std::array<double, 256> lut{};
  std::size_t cdf = 0;
  for (int v = 0; v < 256; ++v) {
    cdf += hist[v];
    const double scaled = 255.0 * static_cast<double>(cdf - std::min(cdf, cdf_min)) /
                          static_cast<double>(n - cdf_min);
    lut[v] = std::round(scaled) / 255.0;
  }
  std::vector<double> out(in.size());
  for (std::size_t i = 0; i < in.size(); ++i) out[i] = lut[to_level(in[i])];
  return out;
}

}  // namespace

GrayImage histogram_equalize(const GrayImage& img) {
  if (img.data.empty()) throw Error(ErrorCode::kInvalidArgument, "histogram_equalize on empty image");
  GrayImage out(img.height, img.width);
  out.data = equalize_levels(img.data);
  return out;
}

Image histogram_equalize(const Image& img) {
  if (img.data.empty()) throw Error(ErrorCode::kInvalidArgument, "histogram_equalize on empty image");
  Image out = img;
  std::vector<double> plane(img.pixel_count());
  for (int ch = 0; ch < img.channels; ++ch) {
    for (std::size_t i = 0; i < plane.size(); ++i) plane[i] = img.data[i * img.channels + ch];
    const auto eq = equalize_levels(plane);
    for (std::size_t i = 0; i < plane.size(); ++i) out.data[i * img.channels + ch] = eq[i];
  }
  return out;
}

Image photometric_distort(const Image& img, double brightness_delta, double contrast_factor) {
  if (!(brightness_delta >= -0.5 && brightness_delta <= 0.5)) {
    throw Error(ErrorCode::kOutOfRange, "brightness_delta must lie in [-0.5, 0.5]");
  }
  if (!(contrast_factor >= 0.5 && contrast_factor <= 1.5)) {
    throw Error(ErrorCode::kOutOfRange, "contrast_factor must lie in [0.5, 1.5]");
  }
  Image out = img;
  if (brightness_delta == 0.0 && contrast_factor == 1.0) return out;
  for (double& v : out.data) v = clamp01(contrast_factor * (v - 0.5) + 0.5 + brightness_delta);
  return out;
}

Image photometric_distort(const Image& img, const PhotometricParams& p) {
  return photometric_distort(img, p.brightness_delta, p.contrast_factor);
}

PhotometricParams sample_photometric_params(std::uint64_t seed, double max_delta,
                                            double max_contrast_dev) {
  if (max_delta < 0.0 || max_delta > 0.5 || max_contrast_dev < 0.0 || max_contrast_dev > 0.5) {
    throw Error(ErrorCode::kOutOfRange, "photometric sampling bounds outside admissible box");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> delta(-max_delta, max_delta);
  std::uniform_real_distribution<double> contrast(1.0 - max_contrast_dev, 1.0 + max_contrast_dev);
  PhotometricParams p;
  p.brightness_delta = delta(rng);
  p.contrast_factor = contrast(rng);
  return p;
}

namespace {

void check_crop(int h, int w, int out_h, int out_w) {
  if (out_h <= 0 || out_w <= 0 || out_h > h || out_w > w) {
    throw Error(ErrorCode::kInvalidArgument,
                "crop " + std::to_string(out_h) + "x" + std::to_string(out_w) +
                    " does not fit image " + std::to_string(h) + "x" + std::to_string(w));
  }
}

template <typename T>
void crop_into(const std::vector<T>& src, int w, int stride, int top, int left, int out_h, int out_w,
               std::vector<T>& dst) {
  for (int r = 0; r < out_h; ++r) {
    const auto begin = src.begin() + (static_cast<std::ptrdiff_t>(top + r) * w + left) * stride;
    std::copy(begin, begin + static_cast<std::ptrdiff_t>(out_w) * stride,
              dst.begin() + static_cast<std::ptrdiff_t>(r) * out_w * stride);
  }
}

}  // namespace

Image center_crop(const Image& img, int out_h, int out_w) {
  check_crop(img.height, img.width, out_h, out_w);
  Image out(out_h, out_w, img.channels);
  crop_into(img.data, img.width, img.channels, (img.height - out_h) / 2, (img.width - out_w) / 2,
            out_h, out_w, out.data);
  return out;
}

GrayImage center_crop(const GrayImage& img, int out_h, int out_w) {
  check_crop(img.height, img.width, out_h, out_w);
  GrayImage out(out_h, out_w);
  crop_into(img.data, img.width, 1, (img.height - out_h) / 2, (img.width - out_w) / 2, out_h,
            out_w, out.data);
  return out;
}

Mask center_crop(const Mask& m, int out_h, int out_w) {
  check_crop(m.height, m.width, out_h, out_w);
  Mask out(out_h, out_w);
  crop_into(m.data, m.width, 1, (m.height - out_h) / 2, (m.width - out_w) / 2, out_h, out_w,
            out.data);
  return out;
}

Mask threshold(const GrayImage& img, int tau) {
  if (tau < 0 || tau > 255) throw Error(ErrorCode::kOutOfRange, "threshold tau must lie in [0, 255]");
  Mask m(img.height, img.width);
  for (std::size_t i = 0; i < img.data.size(); ++i) m.data[i] = to_level(img.data[i]) > tau ? 1 : 0;
  return m;
}

Image quantize8(const Image& img) {
  Image out = img;
  for (double& v : out.data) v = to_level(v) / 255.0;
  return out;
}

}  // namespace dropwiper
