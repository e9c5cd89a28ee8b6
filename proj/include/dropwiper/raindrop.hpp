#pragma once

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "dropwiper/image.hpp"

namespace dropwiper {

struct Vec3 {
  double x = 0.0, y = 0.0, z = 0.0;

  Vec3 operator+(const Vec3& o) const { return {x + o.x, y + o.y, z + o.z}; }
  Vec3 operator-(const Vec3& o) const { return {x - o.x, y - o.y, z - o.z}; }
  Vec3 operator*(double s) const { return {x * s, y * s, z * s}; }
  Vec3 operator-() const { return {-x, -y, -z}; }
  double dot(const Vec3& o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
  Vec3 normalized() const { return *this * (1.0 / norm()); }
};

/// Pinhole camera looking down +z through a glass pane. Image rows grow
/// along +y, columns along +x.
struct CameraParams {
  double focal_length_px = 2262.0;
  double glass_distance_m = 0.15;
  double glass_pitch_deg = 0.0;
  double background_distance_m = 10.0;
  // Vertical focal length and principal point; unset means fy = fx and the
  // principal point sits at the image center.
  std::optional<double> focal_length_y_px;
  std::optional<double> principal_col;
  std::optional<double> principal_row;

  void validate() const;
  bool operator==(const CameraParams&) const = default;
};

/// Default camera with the focal length scaled from the 2048-px reference
/// width to `width`, keeping the field of view fixed.
CameraParams default_camera_for_width(int width);

/// Parses the `intrinsic` block of a Cityscapes camera file (fx, fy, u0, v0).
/// Fields absent from the file keep the values of `fallback`; a missing file
/// returns `fallback` unchanged.
CameraParams load_cityscapes_camera(const std::filesystem::path& path,
                                    const CameraParams& fallback = {});

struct DropGeometry {
  double row = 0.0;
  double col = 0.0;
  double radius_px = 4.0;
  double height_ratio = 0.5;  // apex height / base radius, in (0, 1]
  double refractive_index = 1.33;

  bool operator==(const DropGeometry&) const = default;
};

struct RaindropField {
  std::vector<DropGeometry> drops;
  CameraParams camera;
  std::uint64_t rng_seed = 0;

  bool operator==(const RaindropField&) const = default;
};

struct DropFieldConfig {
  int count_min = 5;
  int count_max = 20;
  double radius_min_px = 3.0;
  double radius_max_px = 8.0;
  double height_ratio_min = 0.3;
  double height_ratio_max = 1.0;
  double refractive_index = 1.33;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Uniform count, centers, radii and heights; drops may overlap. Every
/// footprint lies inside a height×width image.
RaindropField sample_drop_field(const DropFieldConfig& cfg, const CameraParams& camera, int height,
                                int width);

std::string field_to_json(const RaindropField& field);
RaindropField field_from_json(const std::string& text);
std::string drop_config_to_json(const DropFieldConfig& cfg);
DropFieldConfig drop_config_from_json(const std::string& text);

/// Vector-form Snell refraction. The normal may face either side; it is
/// flipped to oppose the incident ray. nullopt on total internal reflection.
std::optional<Vec3> refract_ray(const Vec3& incident, const Vec3& normal, double n1, double n2);

struct SurfacePoint {
  double height = 0.0;
  Vec3 normal;  // drop-local frame: x along columns, y along rows, z toward the camera
};

/// Spherical-cap surface at offset (d_row, d_col) from the drop center;
/// nullopt outside the circular footprint.
std::optional<SurfacePoint> drop_surface(double d_row, double d_col, const DropGeometry& geom);

bool in_footprint(int row, int col, const DropGeometry& geom);

struct SourcePoint {
  double row = 0.0;
  double col = 0.0;
};

/// Background position (in source-image pixel coordinates) seen through the
/// drop at pixel (row, col). nullopt when the ray is lost to total internal
/// reflection or never reaches the background plane. Bounds are not checked.
std::optional<SourcePoint> trace_drop_pixel(int row, int col, const DropGeometry& geom,
                                            const CameraParams& camera, int height, int width);

struct RenderOptions {
  double attenuation = 0.9;
  double lost_ray_darkening = 0.5;
};

struct RenderResult {
  Image rainy;
  Mask mask;
};

RenderResult render_drops(const Image& clean, const RaindropField& field, const RenderOptions& opts = {});

double bilinear_sample(const Image& img, double row, double col, int channel);

}  // namespace dropwiper
