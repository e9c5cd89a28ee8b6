#include "dropwiper/pipeline.hpp"

#include <openssl/evp.h>

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <mutex>
#include <set>
#include <thread>

#include "dropwiper/error.hpp"
#include "dropwiper/image_io.hpp"

namespace dropwiper {
namespace fs = std::filesystem;
using nlohmann::json;

MaskMethod parse_mask_method(const std::string& s) {
  if (s == "residual") return MaskMethod::kResidual;
  if (s == "detector") return MaskMethod::kDetector;
  if (s == "full") return MaskMethod::kFull;
  throw Error(ErrorCode::kInvalidArgument, "unknown mask method '" + s + "' (residual, detector, full)");
}

std::string to_string(MaskMethod m) {
  switch (m) {
    case MaskMethod::kResidual: return "residual";
    case MaskMethod::kDetector: return "detector";
    case MaskMethod::kFull: return "full";
  }
  return "?";
}

void PipelineConfig::apply_toy_profile() {
  toy = true;
  diffusion_steps = 200;
  scale_betas = true;
  patch_size = 32;
  grayscale = true;
  detector_training.epochs = 20;
  detector_training.batch_size = 4;
}

NoiseSchedule PipelineConfig::schedule() const {
  return scale_betas ? make_scaled_schedule(diffusion_steps) : make_schedule(diffusion_steps, beta_start, beta_end);
}

// ---------------------------------------------------------------------------
// Config (de)serialization

namespace {

json distort_json(const std::optional<PhotometricParams>& p) {
  if (!p) return nullptr;
  return {{"brightness_delta", p->brightness_delta}, {"contrast_factor", p->contrast_factor}};
}

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where) {
  if (!j.is_object()) throw Error(ErrorCode::kInvalidArgument, where + ": expected an object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& [key, _] : j.items()) {
    if (!ok.count(key)) throw Error(ErrorCode::kInvalidArgument, where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

void read_path_if(const json& j, const char* key, fs::path& out) {
  if (j.contains(key)) out = j.at(key).get<std::string>();
}

}  // namespace

json config_to_json(const PipelineConfig& cfg) {
  const auto& dt = cfg.detector_training;
  const auto& nt = cfg.denoiser_training;
  return {
      {"raindrop_root", cfg.raindrop_root.string()},
      {"cityscapes_root", cfg.cityscapes_root.string()},
      {"output_dir", cfg.output_dir.string()},
      {"mask",
       {{"method", to_string(cfg.mask_method)},
        {"residual_option", std::string(to_string(cfg.residual_option))},
        {"tau", cfg.residual_tau},
        {"equalize", cfg.equalize},
        {"distort", distort_json(cfg.distort)},
        {"detector_checkpoint", cfg.detector_checkpoint.string()}}},
      {"diffusion",
       {{"steps", cfg.diffusion_steps},
        {"beta_start", cfg.beta_start},
        {"beta_end", cfg.beta_end},
        {"scale_betas", cfg.scale_betas},
        {"checkpoint", cfg.denoiser_checkpoint.string()},
        {"patch_size", cfg.patch_size},
        {"grayscale", cfg.grayscale},
        {"swap_mask_roles", cfg.swap_mask_roles}}},
      {"synthesis", json::parse(drop_config_to_json(cfg.synthesis))},
      {"detector_training",
       {{"epochs", dt.epochs},
        {"batch_size", dt.batch_size},
        {"learning_rate", dt.learning_rate},
        {"weight_decay", dt.weight_decay},
        {"lr_step_size", dt.lr_step_size},
        {"lr_gamma", dt.lr_gamma}}},
      {"denoiser_training",
       {{"steps", nt.steps},
        {"learning_rate", nt.learning_rate},
        {"weight_decay", nt.weight_decay},
        {"batch_size", nt.batch_size},
        {"hidden", cfg.denoiser_hidden}}},
      {"seed", cfg.seed},
      {"jobs", cfg.jobs},
      {"toy", cfg.toy},
  };
}

void apply_config_json(PipelineConfig& cfg, const json& j) {
  check_keys(j, {"raindrop_root", "cityscapes_root", "output_dir", "mask", "diffusion", "synthesis",
                 "detector_training", "denoiser_training", "seed", "jobs", "toy"},
             "config");
  try {
    // The toy profile goes first so explicit keys can still override it.
    if (j.value("toy", false)) cfg.apply_toy_profile();
    read_path_if(j, "raindrop_root", cfg.raindrop_root);
    read_path_if(j, "cityscapes_root", cfg.cityscapes_root);
    read_path_if(j, "output_dir", cfg.output_dir);
    if (j.contains("mask")) {
      const json& m = j["mask"];
      check_keys(m, {"method", "residual_option", "tau", "equalize", "distort", "detector_checkpoint"}, "mask");
      if (m.contains("method")) cfg.mask_method = parse_mask_method(m["method"].get<std::string>());
      if (m.contains("residual_option")) {
        cfg.residual_option = parse_residual_option(m["residual_option"].get<std::string>());
      }
      read_if(m, "tau", cfg.residual_tau);
      read_if(m, "equalize", cfg.equalize);
      if (m.contains("distort")) {
        if (m["distort"].is_null()) {
          cfg.distort.reset();
        } else {
          check_keys(m["distort"], {"brightness_delta", "contrast_factor"}, "mask.distort");
          PhotometricParams p;
          read_if(m["distort"], "brightness_delta", p.brightness_delta);
          read_if(m["distort"], "contrast_factor", p.contrast_factor);
          cfg.distort = p;
        }
      }
      read_path_if(m, "detector_checkpoint", cfg.detector_checkpoint);
    }
    if (j.contains("diffusion")) {
      const json& d = j["diffusion"];
      check_keys(d, {"steps", "beta_start", "beta_end", "scale_betas", "checkpoint", "patch_size", "grayscale",
                     "swap_mask_roles"},
                 "diffusion");
      read_if(d, "steps", cfg.diffusion_steps);
      read_if(d, "beta_start", cfg.beta_start);
      read_if(d, "beta_end", cfg.beta_end);
      read_if(d, "scale_betas", cfg.scale_betas);
      read_path_if(d, "checkpoint", cfg.denoiser_checkpoint);
      read_if(d, "patch_size", cfg.patch_size);
      read_if(d, "grayscale", cfg.grayscale);
      read_if(d, "swap_mask_roles", cfg.swap_mask_roles);
    }
    if (j.contains("synthesis")) {
      const std::uint64_t keep_seed = cfg.synthesis.seed;
      json merged = json::parse(drop_config_to_json(cfg.synthesis));
      merged.update(j["synthesis"]);
      cfg.synthesis = drop_config_from_json(merged.dump());
      if (!j["synthesis"].contains("seed")) cfg.synthesis.seed = keep_seed;
    }
    if (j.contains("detector_training")) {
      const json& t = j["detector_training"];
      check_keys(t, {"epochs", "batch_size", "learning_rate", "weight_decay", "lr_step_size", "lr_gamma"},
                 "detector_training");
      auto& dt = cfg.detector_training;
      read_if(t, "epochs", dt.epochs);
      read_if(t, "batch_size", dt.batch_size);
      read_if(t, "learning_rate", dt.learning_rate);
      read_if(t, "weight_decay", dt.weight_decay);
      read_if(t, "lr_step_size", dt.lr_step_size);
      read_if(t, "lr_gamma", dt.lr_gamma);
    }
    if (j.contains("denoiser_training")) {
      const json& t = j["denoiser_training"];
      check_keys(t, {"steps", "learning_rate", "weight_decay", "batch_size", "hidden"}, "denoiser_training");
      auto& nt = cfg.denoiser_training;
      read_if(t, "steps", nt.steps);
      read_if(t, "learning_rate", nt.learning_rate);
      read_if(t, "weight_decay", nt.weight_decay);
      read_if(t, "batch_size", nt.batch_size);
      read_if(t, "hidden", cfg.denoiser_hidden);
    }
    read_if(j, "seed", cfg.seed);
    read_if(j, "jobs", cfg.jobs);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, std::string("config: ") + e.what());
  }
}

PipelineConfig load_pipeline_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kFileNotFound, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kInvalidArgument, path.string() + ": " + e.what());
  }
  PipelineConfig cfg;
  apply_config_json(cfg, j);
  return cfg;
}

// ---------------------------------------------------------------------------
// Ingestion

const char* to_string(Split s) {
  switch (s) {
    case Split::kTrain: return "train";
    case Split::kVal: return "val";
    case Split::kTest: return "test";
  }
  return "?";
}

std::vector<const RaindropPair*> RaindropDataset::split(Split s) const {
  std::vector<const RaindropPair*> out;
  for (const auto& p : pairs) {
    if (p.split == s) out.push_back(&p);
  }
  return out;
}

namespace {

bool is_image_ext(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".ppm" || ext == ".pgm";
}

bool strip_suffix(std::string& s, const std::string& suffix) {
  if (s.size() <= suffix.size() || s.compare(s.size() - suffix.size(), suffix.size(), suffix) != 0) return false;
  s.resize(s.size() - suffix.size());
  return true;
}

struct StemFiles {
  std::optional<fs::path> rain, clean, mask;
};

}  // namespace

RaindropDataset ingest_raindrop_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::kFileNotFound, "raindrop root not found: " + root.string());
  RaindropDataset ds;
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    const fs::path dir = root / to_string(split);
    std::map<std::string, StemFiles> by_stem;
    if (fs::is_directory(dir)) {
      for (const auto& entry : fs::directory_iterator(dir)) {
        if (!entry.is_regular_file() || !is_image_ext(entry.path())) continue;
        std::string stem = entry.path().stem().string();
        if (strip_suffix(stem, "_rain")) {
          by_stem[stem].rain = entry.path();
        } else if (strip_suffix(stem, "_clean")) {
          by_stem[stem].clean = entry.path();
        } else if (strip_suffix(stem, "_mask")) {
          by_stem[stem].mask = entry.path();
        }
      }
    }
    std::size_t n = 0;
    for (const auto& [stem, files] : by_stem) {
      const std::string where = std::string(to_string(split)) + "/" + stem;
      if (!files.rain || !files.clean) {
        if (files.rain || files.clean) {
          ++ds.skipped;
          ds.warnings.push_back(where + ": unpaired, skipped");
        }
        continue;
      }
      try {
        const ImageInfo a = probe_image(*files.rain);
        const ImageInfo b = probe_image(*files.clean);
        if (a.height != b.height || a.width != b.width) {
          ++ds.skipped;
          ds.warnings.push_back(where + ": rain/clean dimensions differ, skipped");
          continue;
        }
        RaindropPair pair{split, stem, *files.rain, *files.clean, std::nullopt};
        if (files.mask) {
          const ImageInfo m = probe_image(*files.mask);
          if (m.height == a.height && m.width == a.width) {
            pair.mask = files.mask;
          } else {
            ds.warnings.push_back(where + ": mask dimensions differ, mask ignored");
          }
        }
        ds.pairs.push_back(std::move(pair));
        ++n;
      } catch (const Error& e) {
        ++ds.skipped;
        ds.warnings.push_back(where + ": " + e.what());
      }
    }
    ds.counts[split] = n;
  }
  for (Split split : {Split::kTrain, Split::kVal, Split::kTest}) {
    if (ds.counts[split] == 0) {
      throw Error(ErrorCode::kEmptyDataset,
                  "raindrop dataset " + root.string() + ": split '" + to_string(split) + "' has no pairs");
    }
  }
  return ds;
}

CityscapesDataset ingest_cityscapes(const fs::path& root) {
  if (!fs::is_directory(root)) throw Error(ErrorCode::kFileNotFound, "cityscapes root not found: " + root.string());
  std::vector<fs::path> files;
  for (const auto& entry : fs::recursive_directory_iterator(root)) {
    if (!entry.is_regular_file() || !is_image_ext(entry.path())) continue;
    const fs::path rel = fs::relative(entry.path(), root);
    if (!rel.empty() && *rel.begin() == "camera") continue;
    files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  CityscapesDataset ds;
  for (const auto& file : files) {
    ImageInfo info;
    try {
      info = probe_image(file);
    } catch (const Error& e) {
      ++ds.skipped;
      ds.warnings.push_back(std::string(e.what()) + ", skipped");
      continue;
    }
    std::string prefix = file.stem().string();
    strip_suffix(prefix, "_leftImg8bit");
    const std::string cam_name = prefix + "_camera.json";
    fs::path cam = file.parent_path() / cam_name;
    if (!fs::exists(cam)) {
      fs::path rel = fs::relative(file.parent_path(), root);
      fs::path mirrored = root / "camera";
      auto it = rel.begin();
      if (it != rel.end() && *it == "leftImg8bit") ++it;
      for (; it != rel.end(); ++it) {
        if (*it != ".") mirrored /= *it;
      }
      cam = mirrored / cam_name;
    }
    CityscapesItem item{file, prefix, default_camera_for_width(info.width), false};
    if (fs::exists(cam)) {
      try {
        item.camera = load_cityscapes_camera(cam, item.camera);
        item.camera_from_file = true;
      } catch (const Error& e) {
        ds.warnings.push_back(cam.string() + ": " + e.what() + ", default camera used");
      }
    }
    ds.items.push_back(std::move(item));
  }
  if (ds.items.empty()) throw Error(ErrorCode::kEmptyDataset, "no readable images under " + root.string());
  return ds;
}

// ---------------------------------------------------------------------------
// Stages

SynthesisReport synthesize_dataset(const fs::path& cityscapes_root, const fs::path& out, const DropFieldConfig& drops,
                                   std::uint64_t seed, std::optional<int> crop_h, std::optional<int> crop_w) {
  drops.validate();
  const CityscapesDataset ds = ingest_cityscapes(cityscapes_root);
  fs::create_directories(out);
  SynthesisReport report;
  report.skipped = ds.skipped;
  for (std::size_t i = 0; i < ds.items.size(); ++i) {
    const auto& item = ds.items[i];
    Image clean;
    try {
      clean = load_image(item.image);
    } catch (const Error& e) {
      ++report.skipped;
      continue;
    }
    if (clean.channels == 1) clean = gray_to_rgb(to_gray_image(clean));
    CameraParams camera = item.camera;
    if (crop_h || crop_w) {
      const int h = crop_h.value_or(clean.height);
      const int w = crop_w.value_or(clean.width);
      const int top = (clean.height - h) / 2;
      const int left = (clean.width - w) / 2;
      clean = center_crop(clean, h, w);
      if (camera.principal_row) *camera.principal_row -= top;
      if (camera.principal_col) *camera.principal_col -= left;
    }
    DropFieldConfig dc = drops;
    dc.seed = chain_seed(seed, i);
    const RaindropField field = sample_drop_field(dc, camera, clean.height, clean.width);
    const RenderResult rendered = render_drops(clean, field);
    save_image(clean, out / (item.stem + "_clean.png"));
    save_image(rendered.rainy, out / (item.stem + "_rain.png"));
    save_image(rendered.mask, out / (item.stem + "_mask.png"));
    std::ofstream(out / (item.stem + "_field.json")) << field_to_json(field);
    ++report.written;
  }
  return report;
}

std::vector<DetectorSample> load_detector_samples(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw Error(ErrorCode::kFileNotFound, "no such directory: " + dir.string());
  std::vector<fs::path> rains;
  for (const auto& entry : fs::directory_iterator(dir)) {
    std::string stem = entry.path().stem().string();
    if (entry.is_regular_file() && is_image_ext(entry.path()) && strip_suffix(stem, "_rain")) {
      rains.push_back(entry.path());
    }
  }
  std::sort(rains.begin(), rains.end());
  std::vector<DetectorSample> out;
  for (const auto& rain : rains) {
    std::string stem = rain.stem().string();
    strip_suffix(stem, "_rain");
    const fs::path mask = rain.parent_path() / (stem + "_mask" + rain.extension().string());
    if (!fs::exists(mask)) continue;
    Image img = load_image(rain);
    if (img.channels == 1) img = gray_to_rgb(to_gray_image(img));
    out.push_back({std::move(img), load_mask(mask)});
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyDataset, "no <stem>_rain/<stem>_mask pairs in " + dir.string());
  return out;
}

namespace {

Image prepare_patch(const Image& img, int patch, bool grayscale) {
  Image out = center_crop(img, patch, patch);
  if (grayscale && out.channels == 3) out = to_image(to_grayscale(out));
  return out;
}

}  // namespace

std::vector<Tensor> load_denoiser_dataset(const RaindropDataset& ds, int patch, bool grayscale) {
  std::vector<Tensor> out;
  for (const RaindropPair* p : ds.split(Split::kTrain)) {
    const Image img = prepare_patch(load_image(p->clean), patch, grayscale);
    out.push_back(img.channels == 1 ? image_to_tensor(to_gray_image(img)) : image_to_tensor(img));
  }
  if (out.empty()) throw Error(ErrorCode::kEmptyDataset, "no training images for the denoiser");
  return out;
}

std::shared_ptr<AnalyticGaussianDenoiser> fit_analytic_denoiser(const std::vector<Tensor>& data,
                                                               const NoiseSchedule& sched) {
  if (data.empty()) throw Error(ErrorCode::kEmptyDataset, "cannot fit a denoiser to no data");
  const std::size_t dim = data.front().size();
  Tensor mu(dim, 0.0);
  for (const auto& x : data) {
    if (x.size() != dim) throw Error(ErrorCode::kShapeMismatch, "denoiser data of mixed sizes");
    for (std::size_t i = 0; i < dim; ++i) mu[i] += x[i];
  }
  for (double& v : mu) v /= static_cast<double>(data.size());
  double ss = 0.0;
  for (const auto& x : data) {
    for (std::size_t i = 0; i < dim; ++i) ss += (x[i] - mu[i]) * (x[i] - mu[i]);
  }
  const double denom = static_cast<double>(dim) * static_cast<double>(std::max<std::size_t>(1, data.size() - 1));
  // A single image (or identical images) would give σ0 = 0; keep a floor so
  // the posterior stays well defined.
  const double sigma = std::max(std::sqrt(ss / denom), 0.05);
  return analytic_gaussian_denoiser(std::move(mu), sigma, sched);
}

std::shared_ptr<AnalyticGaussianDenoiser> fit_known_pixel_denoiser(const Image& input, const Mask& mask,
                                                                  const NoiseSchedule& sched) {
  if (input.height != mask.height || input.width != mask.width) {
    throw Error(ErrorCode::kShapeMismatch, "image and mask sizes differ");
  }
  const Tensor x = input.channels == 1 ? image_to_tensor(to_gray_image(input)) : image_to_tensor(input);
  double sum = 0.0, sq = 0.0;
  std::size_t n = 0;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p]) continue;
    for (int ch = 0; ch < input.channels; ++ch) {
      const double v = x[p * input.channels + ch];
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  double mean = 0.0, sd = 0.5;
  if (n > 0) {
    mean = sum / n;
    sd = std::sqrt(std::max(0.0, sq / n - mean * mean));
  }
  return analytic_gaussian_denoiser(Tensor(x.size(), mean), std::max(sd, 0.05), sched);
}

Image inpaint_image(const Image& input, const Mask& mask, const Denoiser& den, const NoiseSchedule& sched,
                    std::uint64_t seed, bool swap_mask_roles) {
  if (input.height != mask.height || input.width != mask.width) {
    throw Error(ErrorCode::kShapeMismatch, "image and mask sizes differ");
  }
  const int c = input.channels;
  const Tensor x0 = c == 1 ? image_to_tensor(to_gray_image(input)) : image_to_tensor(input);
  Tensor m(x0.size());
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    for (int ch = 0; ch < c; ++ch) m[p * c + ch] = mask.data[p] ? 1.0 : 0.0;
  }
  Rng rng(seed);
  const Tensor x = inpaint_sample(x0, m, den, sched, rng, InpaintOptions{swap_mask_roles});
  Image out = tensor_to_image(x, input.height, input.width, c);
  // The known region passes through the [−1,1] mapping and back; copy it
  // from the input so it is preserved exactly.
  const std::uint8_t known = swap_mask_roles ? 1 : 0;
  for (std::size_t p = 0; p < mask.data.size(); ++p) {
    if (mask.data[p] != known) continue;
    for (int ch = 0; ch < c; ++ch) out.data[p * c + ch] = input.data[p * c + ch];
  }
  return out;
}

Mask compute_mask(const PipelineConfig& cfg, const Image& rainy, const Image& clean, DetectorNet* detector) {
  switch (cfg.mask_method) {
    case MaskMethod::kResidual:
      return residual_mask(rainy, clean, cfg.residual_option, cfg.residual_tau, Preprocess{cfg.equalize, cfg.distort});
    case MaskMethod::kDetector: {
      if (!detector) throw Error(ErrorCode::kInvalidArgument, "detector mask requested without a detector");
      const Image rgb = rainy.channels == 1 ? gray_to_rgb(to_gray_image(rainy)) : rainy;
      return binarize(detector_forward(*detector, rgb));
    }
    case MaskMethod::kFull:
      return Mask(rainy.height, rainy.width, 1);
  }
  throw Error(ErrorCode::kInvalidArgument, "bad mask method");
}

std::string sha256_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kFileNotFound, "cannot open " + path.string());
  const std::vector<char> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  unsigned char digest[EVP_MAX_MD_SIZE];
  unsigned int len = 0;
  if (!EVP_Digest(bytes.data(), bytes.size(), digest, &len, EVP_sha256(), nullptr)) {
    throw Error(ErrorCode::kInvalidArgument, "sha256 failed for " + path.string());
  }
  std::string hex;
  char buf[3];
  for (unsigned int i = 0; i < len; ++i) {
    std::snprintf(buf, sizeof(buf), "%02x", digest[i]);
    hex += buf;
  }
  return hex;
}

// ---------------------------------------------------------------------------
// End to end

namespace {

void validate_pipeline_config(const PipelineConfig& cfg) {
  if (cfg.raindrop_root.empty() || !fs::is_directory(cfg.raindrop_root)) {
    throw Error(ErrorCode::kFileNotFound, "raindrop_root does not exist: " + cfg.raindrop_root.string());
  }
  if (cfg.mask_method == MaskMethod::kDetector) {
    if (!fs::is_regular_file(cfg.detector_checkpoint)) {
      throw Error(ErrorCode::kFileNotFound, "detector checkpoint not found: " + cfg.detector_checkpoint.string());
    }
    if (cfg.patch_size % 8 != 0) {
      throw Error(ErrorCode::kInvalidArgument, "detector masks need a patch size divisible by 8");
    }
  }
  if (!cfg.denoiser_checkpoint.empty() && !fs::is_regular_file(cfg.denoiser_checkpoint)) {
    throw Error(ErrorCode::kFileNotFound, "denoiser checkpoint not found: " + cfg.denoiser_checkpoint.string());
  }
  if (cfg.residual_tau < 0 || cfg.residual_tau > 255) {
    throw Error(ErrorCode::kOutOfRange, "residual tau must lie in [0, 255]");
  }
  if (cfg.patch_size < 8) throw Error(ErrorCode::kOutOfRange, "patch size must be at least 8");
  if (cfg.jobs < 1) throw Error(ErrorCode::kOutOfRange, "jobs must be at least 1");
}

struct ImageResult {
  EvalRow row;
  std::optional<std::string> error;
};

}  // namespace

PipelineReport run_pipeline(const PipelineConfig& cfg) {
  validate_pipeline_config(cfg);
  const NoiseSchedule sched = cfg.schedule();
  const RaindropDataset ds = ingest_raindrop_dataset(cfg.raindrop_root);

  std::shared_ptr<const Denoiser> denoiser;
  std::string denoiser_kind;
  if (!cfg.denoiser_checkpoint.empty()) {
    auto mlp = std::make_shared<MlpDenoiser>(MlpDenoiser::load(cfg.denoiser_checkpoint));
    const int channels = cfg.grayscale ? 1 : 3;
    if (mlp->config().input_dim != cfg.patch_size * cfg.patch_size * channels) {
      throw Error(ErrorCode::kShapeMismatch, "denoiser checkpoint input size does not match the patch");
    }
    if (mlp->config().steps != cfg.diffusion_steps) {
      throw Error(ErrorCode::kShapeMismatch, "denoiser checkpoint was trained for a different T");
    }
    denoiser = mlp;
    denoiser_kind = "mlp";
  } else {
    denoiser = fit_analytic_denoiser(load_denoiser_dataset(ds, cfg.patch_size, cfg.grayscale), sched);
    denoiser_kind = "analytic_gaussian";
  }

  std::optional<DetectorNet> detector;
  if (cfg.mask_method == MaskMethod::kDetector) detector.emplace(DetectorNet::load(cfg.detector_checkpoint));
  std::mutex detector_mutex;

  const fs::path masks_dir = cfg.output_dir / "masks";
  const fs::path recon_dir = cfg.output_dir / "recon";
  fs::create_directories(masks_dir);
  fs::create_directories(recon_dir);

  const auto tests = ds.split(Split::kTest);
  std::vector<ImageResult> results(tests.size());

  auto process = [&](std::size_t i) {
    const RaindropPair& pair = *tests[i];
    ImageResult& res = results[i];
    res.row.image_id = pair.stem;
    try {
      const Image rainy = load_image(pair.rainy);
      const Image clean = load_image(pair.clean);
      if (rainy.channels != clean.channels) throw Error(ErrorCode::kShapeMismatch, "rain/clean channel counts differ");
      const int p = cfg.patch_size;
      Mask mask;
      if (cfg.mask_method == MaskMethod::kDetector) {
        // The detector needs sides divisible by 8, which the patch guarantees.
        const Image crop = center_crop(rainy, p, p);
        std::lock_guard lock(detector_mutex);
        mask = compute_mask(cfg, crop, crop, &*detector);
      } else {
        mask = center_crop(compute_mask(cfg, rainy, clean, nullptr), p, p);
      }
      const Image input = prepare_patch(rainy, p, cfg.grayscale);
      const Image truth = quantize8(prepare_patch(clean, p, cfg.grayscale));
      const Image recon = inpaint_image(input, mask, *denoiser, sched, chain_seed(cfg.seed, i), cfg.swap_mask_roles);
      save_image(mask, masks_dir / (pair.stem + ".png"));
      save_image(recon, recon_dir / (pair.stem + ".png"));
      // Scores compare 8-bit images on both sides, as written to disk.
      const Image stored = quantize8(recon);
      res.row.psnr = psnr(stored, truth);
      res.row.ssim = ssim(to_grayscale(stored), to_grayscale(truth));
      if (pair.mask) res.row.mask = mask_score(mask, center_crop(load_mask(*pair.mask), p, p));
    } catch (const std::exception& e) {
      res.error = pair.stem + ": " + e.what();
    }
  };

  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.jobs), tests.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < tests.size(); ++i) process(i);
  } else {
    std::atomic<std::size_t> next{0};
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&] {
        for (std::size_t i = next++; i < tests.size(); i = next++) process(i);
      });
    }
    for (auto& t : pool) t.join();
  }

  PipelineReport report;
  report.skipped_at_ingest = ds.skipped;
  for (auto& r : results) {
    if (r.error) {
      ++report.failed;
      report.errors.push_back(*r.error);
    } else {
      ++report.processed;
      report.rows.push_back(std::move(r.row));
    }
  }
  report.csv = format_eval_csv(report.rows);
  const fs::path csv_path = cfg.output_dir / "report.csv";
  {
    std::ofstream out(csv_path, std::ios::binary);
    if (!out) throw Error(ErrorCode::kUnwritablePath, "cannot write " + csv_path.string());
    out << report.csv;
  }

  json checkpoints = json::object();
  if (detector) {
    checkpoints["detector"] = {{"path", cfg.detector_checkpoint.string()},
                               {"sha256", sha256_file(cfg.detector_checkpoint)}};
  }
  if (!cfg.denoiser_checkpoint.empty()) {
    checkpoints["denoiser"] = {{"path", cfg.denoiser_checkpoint.string()},
                               {"sha256", sha256_file(cfg.denoiser_checkpoint)}};
  }
  json manifest{
      {"config", config_to_json(cfg)},
      {"seed", cfg.seed},
      {"denoiser", denoiser_kind},
      {"checkpoints", checkpoints},
      {"counts",
       {{"train", ds.counts.at(Split::kTrain)},
        {"val", ds.counts.at(Split::kVal)},
        {"test", ds.counts.at(Split::kTest)},
        {"skipped_at_ingest", report.skipped_at_ingest},
        {"processed", report.processed},
        {"failed", report.failed}}},
      {"ingest_warnings", ds.warnings},
      {"errors", report.errors},
      {"report_sha256", sha256_file(csv_path)},
  };
  std::ofstream(cfg.output_dir / "manifest.json") << manifest.dump(2) << '\n';
  return report;
}

}  // namespace dropwiper
