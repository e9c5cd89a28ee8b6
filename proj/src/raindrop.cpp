#include "dropwiper/raindrop.hpp"

#include <algorithm>
#include <fstream>
#include <numbers>
#include <random>

#include <json.hpp>

#include "dropwiper/error.hpp"

namespace dropwiper {

void CameraParams::validate() const {
  if (!(focal_length_px > 0.0)) throw Error(ErrorCode::kInvalidArgument, "focal_length_px must be > 0");
  if (focal_length_y_px && !(*focal_length_y_px > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "focal_length_y_px must be > 0");
  }
  if (!(glass_distance_m > 0.0)) throw Error(ErrorCode::kInvalidArgument, "glass_distance_m must be > 0");
  if (!(background_distance_m > glass_distance_m)) {
    throw Error(ErrorCode::kInvalidArgument, "background must lie beyond the glass");
  }
  if (!(glass_pitch_deg >= -45.0 && glass_pitch_deg <= 45.0)) {
    throw Error(ErrorCode::kOutOfRange, "glass_pitch_deg must lie in [-45, 45]");
  }
}

CameraParams default_camera_for_width(int width) {
  CameraParams cam;
  cam.focal_length_px = 2262.0 * static_cast<double>(width) / 2048.0;
  return cam;
}

CameraParams load_cityscapes_camera(const std::filesystem::path& path, const CameraParams& fallback) {
  if (!std::filesystem::exists(path)) return fallback;
  std::ifstream in(path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kCorruptHeader, path.string() + ": " + e.what());
  }
  CameraParams cam = fallback;
  if (j.contains("intrinsic")) {
    const auto& in_j = j["intrinsic"];
    if (in_j.contains("fx")) cam.focal_length_px = in_j["fx"].get<double>();
    if (in_j.contains("fy")) cam.focal_length_y_px = in_j["fy"].get<double>();
    if (in_j.contains("u0")) cam.principal_col = in_j["u0"].get<double>();
    if (in_j.contains("v0")) cam.principal_row = in_j["v0"].get<double>();
  }
  cam.validate();
  return cam;
}

void DropFieldConfig::validate() const {
  if (count_min < 0 || count_max > 200 || count_min > count_max) {
    throw Error(ErrorCode::kInvalidArgument, "drop count range must satisfy 0 <= min <= max <= 200");
  }
  if (!(radius_min_px >= 2.0) || radius_min_px > radius_max_px) {
    throw Error(ErrorCode::kInvalidArgument, "drop radius range must satisfy 2 <= min <= max");
  }
  if (!(height_ratio_min > 0.0) || height_ratio_max > 1.0 || height_ratio_min > height_ratio_max) {
    throw Error(ErrorCode::kInvalidArgument, "height ratio range must satisfy 0 < min <= max <= 1");
  }
  if (!(refractive_index > 0.0)) throw Error(ErrorCode::kInvalidArgument, "refractive index must be > 0");
}

RaindropField sample_drop_field(const DropFieldConfig& cfg, const CameraParams& camera, int height,
                                int width) {
  cfg.validate();
  camera.validate();
  if (cfg.count_max > 0 && 2.0 * std::ceil(cfg.radius_max_px) + 1.0 > std::min(height, width)) {
    throw Error(ErrorCode::kInvalidArgument, "largest drop does not fit inside the image");
  }
  RaindropField field;
  field.camera = camera;
  field.rng_seed = cfg.seed;
  std::mt19937_64 rng(cfg.seed);
  const int count = std::uniform_int_distribution<int>(cfg.count_min, cfg.count_max)(rng);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * unit(rng); };
  for (int i = 0; i < count; ++i) {
    DropGeometry d;
    d.radius_px = uniform(cfg.radius_min_px, cfg.radius_max_px);
    d.height_ratio = uniform(cfg.height_ratio_min, cfg.height_ratio_max);
    d.refractive_index = cfg.refractive_index;
    d.row = uniform(d.radius_px, height - 1 - d.radius_px);
    d.col = uniform(d.radius_px, width - 1 - d.radius_px);
    field.drops.push_back(d);
  }
  return field;
}

namespace {

nlohmann::json camera_json(const CameraParams& c) {
  nlohmann::json j = {{"focal_length_px", c.focal_length_px},
                      {"glass_distance_m", c.glass_distance_m},
                      {"glass_pitch_deg", c.glass_pitch_deg},
                      {"background_distance_m", c.background_distance_m}};
  if (c.focal_length_y_px) j["focal_length_y_px"] = *c.focal_length_y_px;
  if (c.principal_col) j["principal_col"] = *c.principal_col;
  if (c.principal_row) j["principal_row"] = *c.principal_row;
  return j;
}

CameraParams camera_from(const nlohmann::json& j) {
  CameraParams c;
  c.focal_length_px = j.value("focal_length_px", c.focal_length_px);
  c.glass_distance_m = j.value("glass_distance_m", c.glass_distance_m);
  c.glass_pitch_deg = j.value("glass_pitch_deg", c.glass_pitch_deg);
  c.background_distance_m = j.value("background_distance_m", c.background_distance_m);
  if (j.contains("focal_length_y_px")) c.focal_length_y_px = j["focal_length_y_px"].get<double>();
  if (j.contains("principal_col")) c.principal_col = j["principal_col"].get<double>();
  if (j.contains("principal_row")) c.principal_row = j["principal_row"].get<double>();
  return c;
}

}  // namespace

std::string field_to_json(const RaindropField& field) {
  nlohmann::json drops = nlohmann::json::array();
  for (const auto& d : field.drops) {
    drops.push_back({{"row", d.row},
                     {"col", d.col},
                     {"radius_px", d.radius_px},
                     {"height_ratio", d.height_ratio},
                     {"refractive_index", d.refractive_index}});
  }
  return nlohmann::json{{"camera", camera_json(field.camera)}, {"rng_seed", field.rng_seed}, {"drops", drops}}
      .dump(2);
}

RaindropField field_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    RaindropField f;
    f.camera = camera_from(j.at("camera"));
    f.rng_seed = j.value("rng_seed", std::uint64_t{0});
    for (const auto& d : j.at("drops")) {
      f.drops.push_back({d.at("row").get<double>(), d.at("col").get<double>(),
                         d.at("radius_px").get<double>(), d.at("height_ratio").get<double>(),
                         d.value("refractive_index", 1.33)});
    }
    return f;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("raindrop field json: ") + e.what());
  }
}

std::string drop_config_to_json(const DropFieldConfig& c) {
  return nlohmann::json{{"count_range", {c.count_min, c.count_max}},
                        {"radius_range_px", {c.radius_min_px, c.radius_max_px}},
                        {"height_ratio_range", {c.height_ratio_min, c.height_ratio_max}},
                        {"refractive_index", c.refractive_index},
                        {"seed", c.seed}}
      .dump(2);
}

DropFieldConfig drop_config_from_json(const std::string& text) {
  try {
    const auto j = nlohmann::json::parse(text);
    DropFieldConfig c;
    if (j.contains("count_range")) {
      c.count_min = j["count_range"].at(0).get<int>();
      c.count_max = j["count_range"].at(1).get<int>();
    }
    if (j.contains("radius_range_px")) {
      c.radius_min_px = j["radius_range_px"].at(0).get<double>();
      c.radius_max_px = j["radius_range_px"].at(1).get<double>();
    }
    if (j.contains("height_ratio_range")) {
      c.height_ratio_min = j["height_ratio_range"].at(0).get<double>();
      c.height_ratio_max = j["height_ratio_range"].at(1).get<double>();
    }
    c.refractive_index = j.value("refractive_index", c.refractive_index);
    c.seed = j.value("seed", c.seed);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("drop config json: ") + e.what());
  }
}

std::optional<Vec3> refract_ray(const Vec3& incident, const Vec3& normal, double n1, double n2) {
  if (!(n1 > 0.0 && n2 > 0.0)) throw Error(ErrorCode::kInvalidArgument, "refractive indices must be > 0");
  Vec3 n = normal;
  double cos_i = -incident.dot(n);
  if (cos_i < 0.0) {
    n = -n;
    cos_i = -cos_i;
  }
  const double eta = n1 / n2;
  const double k = 1.0 - eta * eta * (1.0 - cos_i * cos_i);
  if (k < 0.0) return std::nullopt;
  return (incident * eta + n * (eta * cos_i - std::sqrt(k))).normalized();
}

std::optional<SurfacePoint> drop_surface(double d_row, double d_col, const DropGeometry& geom) {
  const double a = geom.radius_px;
  const double rho2 = d_row * d_row + d_col * d_col;
  if (rho2 > a * a) return std::nullopt;
  const double h = geom.height_ratio * a;
  const double sphere_r = (a * a + h * h) / (2.0 * h);
  const double center_z = h - sphere_r;
  const double z = center_z + std::sqrt(std::max(0.0, sphere_r * sphere_r - rho2));
  SurfacePoint p;
  // Exact zero at the rim; the sqrt above can leave a rounding residue.
  p.height = rho2 == a * a ? 0.0 : z;
  p.normal = Vec3{d_col, d_row, z - center_z}.normalized();
  return p;
}

bool in_footprint(int row, int col, const DropGeometry& geom) {
  const double dr = row - geom.row;
  const double dc = col - geom.col;
  return dr * dr + dc * dc <= geom.radius_px * geom.radius_px;
}

std::optional<SourcePoint> trace_drop_pixel(int row, int col, const DropGeometry& geom,
                                            const CameraParams& camera, int height, int width) {
  const auto surf = drop_surface(row - geom.row, col - geom.col, geom);
  if (!surf) return std::nullopt;
  const double fx = camera.focal_length_px;
  const double fy = camera.focal_length_y_px.value_or(fx);
  const double u0 = camera.principal_col.value_or((width - 1) / 2.0);
  const double v0 = camera.principal_row.value_or((height - 1) / 2.0);

  const Vec3 dir = Vec3{(col - u0) / fx, (row - v0) / fy, 1.0}.normalized();
  const double pitch = camera.glass_pitch_deg * std::numbers::pi / 180.0;
  const Vec3 ex{1.0, 0.0, 0.0};
  const Vec3 ey{0.0, std::cos(pitch), std::sin(pitch)};
  const Vec3 ez{0.0, std::sin(pitch), -std::cos(pitch)};  // glass normal, toward the camera

  const Vec3 glass_origin{0.0, 0.0, camera.glass_distance_m};
  const double denom = dir.dot(ez);
  if (denom >= 0.0) return std::nullopt;
  const Vec3 hit = dir * (glass_origin.dot(ez) / denom);

  const Vec3& ln = surf->normal;
  const Vec3 normal = ex * ln.x + ey * ln.y + ez * ln.z;
  const auto refracted = refract_ray(dir, normal, 1.0, geom.refractive_index);
  if (!refracted || refracted->z <= 0.0) return std::nullopt;

  const double s = (camera.background_distance_m - hit.z) / refracted->z;
  const Vec3 bg = hit + *refracted * s;
  return SourcePoint{v0 + fy * bg.y / bg.z, u0 + fx * bg.x / bg.z};
}

double bilinear_sample(const Image& img, double row, double col, int channel) {
  const int r0 = std::clamp(static_cast<int>(std::floor(row)), 0, img.height - 1);
  const int c0 = std::clamp(static_cast<int>(std::floor(col)), 0, img.width - 1);
  const int r1 = std::min(r0 + 1, img.height - 1);
  const int c1 = std::min(c0 + 1, img.width - 1);
  const double fr = std::clamp(row - r0, 0.0, 1.0);
  const double fc = std::clamp(col - c0, 0.0, 1.0);
  const double top = img.at(r0, c0, channel) * (1.0 - fc) + img.at(r0, c1, channel) * fc;
  const double bot = img.at(r1, c0, channel) * (1.0 - fc) + img.at(r1, c1, channel) * fc;
  return top * (1.0 - fr) + bot * fr;
}

RenderResult render_drops(const Image& clean, const RaindropField& field, const RenderOptions& opts) {
  field.camera.validate();
  RenderResult out{clean, Mask(clean.height, clean.width)};
  if (field.drops.empty()) return out;

  for (int r = 0; r < clean.height; ++r) {
    for (int c = 0; c < clean.width; ++c) {
      // Where drops overlap, the surface nearest the camera wins.
      const DropGeometry* owner = nullptr;
      double best_height = -1.0;
      for (const auto& d : field.drops) {
        const auto surf = drop_surface(r - d.row, c - d.col, d);
        if (surf && surf->height > best_height) {
          best_height = surf->height;
          owner = &d;
        }
      }
      if (!owner) continue;
      out.mask.at(r, c) = 1;
      const auto src = trace_drop_pixel(r, c, *owner, field.camera, clean.height, clean.width);
      const bool in_bounds = src && src->row >= 0.0 && src->row <= clean.height - 1 &&
                             src->col >= 0.0 && src->col <= clean.width - 1;
      for (int ch = 0; ch < clean.channels; ++ch) {
        out.rainy.at(r, c, ch) = in_bounds
                                     ? clamp01(opts.attenuation * bilinear_sample(clean, src->row, src->col, ch))
                                     : clamp01(opts.lost_ray_darkening * clean.at(r, c, ch));
      }
    }
  }
  return out;
}

}  // namespace dropwiper
