#pragma once

// Procedural stand-ins for the street and campus datasets, used by tests,
// the acceptance suite and `dropwiper make-fixture`.

#include <cstdint>
#include <filesystem>

#include "dropwiper/image.hpp"
#include "dropwiper/raindrop.hpp"

namespace dropwiper {

/// Sky gradient, building facades with window grids, road with lane marks.
Image street_scene(int height, int width, std::uint64_t seed);

/// Foliage, lawn and low buildings in a greener palette with finer texture.
Image campus_scene(int height, int width, std::uint64_t seed);

/// Photographed-drop look without refraction: the footprint shows a blurred,
/// brightened copy of what lies beneath it, and the whole frame carries a
/// slight exposure shift (as between two real exposures).
RenderResult render_soft_drops(const Image& clean, const RaindropField& field, std::uint64_t seed);

struct RaindropFixtureSpec {
  int train = 4;
  int val = 2;
  int test = 4;
  int height = 48;
  int width = 64;
  std::uint64_t seed = 0;
  bool write_masks = true;  // <stem>_mask.png alongside each pair
};

/// root/{train,val,test}/<stem>_rain.png + <stem>_clean.png pairs.
void write_raindrop_fixture(const std::filesystem::path& root, const RaindropFixtureSpec& spec);

/// root/leftImg8bit/<city>/<stem>_leftImg8bit.png with camera files at
/// root/camera/<city>/<stem>_camera.json for every image except every
/// third one, which is left without a camera file.
void write_cityscapes_fixture(const std::filesystem::path& root, int count, int height, int width,
                              std::uint64_t seed);

}  // namespace dropwiper
