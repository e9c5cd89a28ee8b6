#pragma once

#include <filesystem>

#include "dropwiper/image.hpp"

namespace dropwiper {

// Reads 8-bit PNG (gray or RGB) and binary PNM (P5/P6, maxval 255). The
// format is detected from the file's magic bytes, not its extension.
// Errors: kFileNotFound, kUnsupportedFormat, kUnsupportedBitDepth, kCorruptHeader.
Image load_image(const std::filesystem::path& path);

struct ImageInfo {
  int height = 0;
  int width = 0;
  int channels = 0;
};

// Header-only probe; same error contract as load_image.
ImageInfo probe_image(const std::filesystem::path& path);

// Reads a {0,255} single-channel file; any other byte value is rejected.
Mask load_mask(const std::filesystem::path& path);

// Writes PNG for ".png", otherwise binary PNM (P5 for one channel, P6 for three).
void save_image(const Image& img, const std::filesystem::path& path);
void save_image(const GrayImage& img, const std::filesystem::path& path);
void save_image(const Mask& mask, const std::filesystem::path& path);

}  // namespace dropwiper
