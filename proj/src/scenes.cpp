#include "dropwiper/scenes.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <random>
#include <string>

#include <json.hpp>

#include "dropwiper/error.hpp"
#include "dropwiper/image_io.hpp"

namespace dropwiper {
namespace fs = std::filesystem;

namespace {

using Rgb = std::array<double, 3>;

void fill_rect(Image& img, int r0, int c0, int r1, int c1, const Rgb& color) {
  for (int r = std::max(0, r0); r < std::min(img.height, r1); ++r) {
    for (int c = std::max(0, c0); c < std::min(img.width, c1); ++c) {
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = color[ch];
    }
  }
}

void add_grain(Image& img, std::mt19937_64& rng, double amplitude) {
  std::uniform_real_distribution<double> noise(-amplitude, amplitude);
  for (double& v : img.data) v = clamp01(v + noise(rng));
}

}  // namespace

Image street_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(height, width, 3);
  const int horizon = static_cast<int>(height * (0.45 + 0.1 * u(rng)));
  for (int r = 0; r < horizon; ++r) {
    const double f = static_cast<double>(r) / std::max(1, horizon);
    fill_rect(img, r, 0, r + 1, width, {0.45 + 0.3 * f, 0.6 + 0.25 * f, 0.85 + 0.1 * f});
  }
  for (int r = horizon; r < height; ++r) {
    const double f = static_cast<double>(r - horizon) / std::max(1, height - horizon);
    fill_rect(img, r, 0, r + 1, width, {0.25 + 0.15 * f, 0.25 + 0.15 * f, 0.27 + 0.15 * f});
  }
  // Facades standing on the horizon line.
  int c = 0;
  while (c < width) {
    const int bw = std::max(4, static_cast<int>(width * (0.12 + 0.18 * u(rng))));
    const int bh = static_cast<int>(horizon * (0.35 + 0.6 * u(rng)));
    const Rgb wall{0.35 + 0.5 * u(rng), 0.3 + 0.4 * u(rng), 0.25 + 0.35 * u(rng)};
    fill_rect(img, horizon - bh, c, horizon, c + bw, wall);
    const Rgb window{0.1 + 0.2 * u(rng), 0.15 + 0.2 * u(rng), 0.25 + 0.3 * u(rng)};
    for (int wr = horizon - bh + 2; wr + 2 < horizon; wr += 5) {
      for (int wc = c + 1; wc + 2 < c + bw; wc += 4) fill_rect(img, wr, wc, wr + 2, wc + 2, window);
    }
    c += bw;
  }
  // Lane marks.
  const int lane_row = horizon + (height - horizon) * 2 / 3;
  for (int lc = static_cast<int>(u(rng) * 6); lc < width; lc += 10) {
    fill_rect(img, lane_row, lc, lane_row + 1 + height / 48, lc + 5, {0.92, 0.9, 0.8});
  }
  add_grain(img, rng, 0.02);
  return img;
}

Image campus_scene(int height, int width, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Image img(height, width, 3);
  const int horizon = static_cast<int>(height * (0.35 + 0.1 * u(rng)));
  fill_rect(img, 0, 0, horizon, width, {0.75 + 0.1 * u(rng), 0.8, 0.85});
  fill_rect(img, horizon, 0, height, width, {0.25, 0.5 + 0.15 * u(rng), 0.2});
  // Low brick buildings.
  for (int k = 0; k < 3; ++k) {
    const int c0 = static_cast<int>(u(rng) * width);
    const int bw = std::max(6, static_cast<int>(width * (0.2 + 0.2 * u(rng))));
    const int bh = std::max(3, static_cast<int>(horizon * (0.3 + 0.3 * u(rng))));
    fill_rect(img, horizon - bh, c0, horizon + 2, c0 + bw, {0.6 + 0.2 * u(rng), 0.3 + 0.1 * u(rng), 0.2});
  }
  // Tree crowns as blobs.
  const int trees = 4 + static_cast<int>(u(rng) * 4);
  for (int k = 0; k < trees; ++k) {
    const double cr = horizon * (0.5 + 0.6 * u(rng));
    const double cc = u(rng) * width;
    const double rad = std::max(2.0, height * (0.08 + 0.1 * u(rng)));
    const Rgb leaf{0.1 + 0.15 * u(rng), 0.35 + 0.25 * u(rng), 0.1 + 0.1 * u(rng)};
    for (int r = 0; r < height; ++r) {
      for (int cidx = 0; cidx < width; ++cidx) {
        const double d = std::hypot(r - cr, cidx - cc);
        if (d <= rad) {
          const double shade = 0.85 + 0.15 * std::sin(0.9 * r + 1.3 * cidx);
          for (int ch = 0; ch < 3; ++ch) img.at(r, cidx, ch) = clamp01(leaf[ch] * shade);
        }
      }
    }
  }
  add_grain(img, rng, 0.04);
  return img;
}

RenderResult render_soft_drops(const Image& clean, const RaindropField& field, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double gain = 1.0 + 0.04 * (u(rng) - 0.5);
  const double offset = 0.02 * (u(rng) - 0.5);
  RenderResult out{clean, Mask(clean.height, clean.width)};
  for (double& v : out.rainy.data) v = clamp01(gain * v + offset);
  constexpr int kBlur = 2;
  for (const auto& d : field.drops) {
    const int r0 = std::max(0, static_cast<int>(std::floor(d.row - d.radius_px)));
    const int r1 = std::min(clean.height - 1, static_cast<int>(std::ceil(d.row + d.radius_px)));
    const int c0 = std::max(0, static_cast<int>(std::floor(d.col - d.radius_px)));
    const int c1 = std::min(clean.width - 1, static_cast<int>(std::ceil(d.col + d.radius_px)));
    for (int r = r0; r <= r1; ++r) {
      for (int c = c0; c <= c1; ++c) {
        if (!in_footprint(r, c, d)) continue;
        out.mask.at(r, c) = 1;
        for (int ch = 0; ch < clean.channels; ++ch) {
          double sum = 0.0;
          int n = 0;
          for (int dr = -kBlur; dr <= kBlur; ++dr) {
            for (int dc = -kBlur; dc <= kBlur; ++dc) {
              const int rr = std::clamp(r + dr, 0, clean.height - 1);
              const int cc = std::clamp(c + dc, 0, clean.width - 1);
              sum += clean.at(rr, cc, ch);
              ++n;
            }
          }
          out.rainy.at(r, c, ch) = clamp01(sum / n + 0.35);
        }
      }
    }
  }
  return out;
}

void write_raindrop_fixture(const fs::path& root, const RaindropFixtureSpec& spec) {
  const std::array<std::pair<const char*, int>, 3> splits{{{"train", spec.train}, {"val", spec.val}, {"test", spec.test}}};
  DropFieldConfig drops;
  drops.count_min = 3;
  drops.count_max = 8;
  drops.radius_min_px = 2.0;
  drops.radius_max_px = std::max(2.0, std::min(spec.height, spec.width) / 10.0);
  const CameraParams camera = default_camera_for_width(spec.width);
  std::uint64_t index = 0;
  for (const auto& [split, count] : splits) {
    const fs::path dir = root / split;
    fs::create_directories(dir);
    for (int i = 0; i < count; ++i, ++index) {
      const std::uint64_t s = spec.seed * 1000003ULL + index;
      const Image clean = campus_scene(spec.height, spec.width, s);
      drops.seed = s;
      const auto field = sample_drop_field(drops, camera, spec.height, spec.width);
      const auto rendered = render_soft_drops(clean, field, s);
      char stem[32];
      std::snprintf(stem, sizeof(stem), "%04llu", static_cast<unsigned long long>(index));
      save_image(clean, dir / (std::string(stem) + "_clean.png"));
      save_image(rendered.rainy, dir / (std::string(stem) + "_rain.png"));
      if (spec.write_masks) save_image(rendered.mask, dir / (std::string(stem) + "_mask.png"));
    }
  }
}

void write_cityscapes_fixture(const fs::path& root, int count, int height, int width, std::uint64_t seed) {
  const fs::path images = root / "leftImg8bit" / "toyville";
  const fs::path cameras = root / "camera" / "toyville";
  fs::create_directories(images);
  fs::create_directories(cameras);
  for (int i = 0; i < count; ++i) {
    char stem[64];
    std::snprintf(stem, sizeof(stem), "toyville_%06d_000019", i);
    save_image(street_scene(height, width, seed * 7919ULL + static_cast<std::uint64_t>(i)),
               images / (std::string(stem) + "_leftImg8bit.png"));
    if (i % 3 == 2) continue;
    const double fx = 2262.52 * width / 2048.0;
    nlohmann::json cam{{"baseline", 0.209313},
                       {"extrinsic", {{"pitch", 0.038}, {"roll", 0.0}, {"x", 1.7}, {"y", 0.1}, {"yaw", -0.0195}, {"z", 1.18}}},
                       {"intrinsic", {{"fx", fx}, {"fy", fx}, {"u0", (width - 1) / 2.0}, {"v0", (height - 1) / 2.0}}}};
    std::ofstream(cameras / (std::string(stem) + "_camera.json")) << cam.dump(2);
  }
}

}  // namespace dropwiper
