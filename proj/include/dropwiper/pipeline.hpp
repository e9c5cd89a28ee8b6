#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dropwiper/detector.hpp"
#include "dropwiper/diffusion.hpp"
#include "dropwiper/metrics.hpp"
#include "dropwiper/raindrop.hpp"
#include "dropwiper/residual_mask.hpp"

namespace dropwiper {

inline constexpr std::uint64_t kDefaultSeed = 20230;

enum class MaskMethod {
  kResidual,
  kDetector,
  kFull,  // every pixel missing; diagnostic only
};

MaskMethod parse_mask_method(const std::string& s);
std::string to_string(MaskMethod m);

struct PipelineConfig {
  std::filesystem::path raindrop_root;
  std::filesystem::path cityscapes_root;
  std::filesystem::path output_dir = "dropwiper_out";

  MaskMethod mask_method = MaskMethod::kResidual;
  ResidualOption residual_option = ResidualOption::kAbsGray;
  int residual_tau = 30;
  bool equalize = false;
  std::optional<PhotometricParams> distort;
  std::filesystem::path detector_checkpoint;

  // Diffusion settings. An empty denoiser checkpoint selects the analytic
  // Gaussian denoiser fitted to the train split.
  int diffusion_steps = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  bool scale_betas = false;  // make_scaled_schedule instead of the raw range
  std::filesystem::path denoiser_checkpoint;
  int patch_size = 128;
  bool grayscale = false;
  bool swap_mask_roles = false;

  DropFieldConfig synthesis;
  TrainConfig detector_training;
  DenoiserTrainConfig denoiser_training{2000, 1e-4, 0.0, 16, kDefaultSeed};
  std::vector<int> denoiser_hidden = {256, 256};

  std::uint64_t seed = kDefaultSeed;
  int jobs = 1;
  bool toy = false;

  /// Desk-scale profile: T = 200 with the 1000/T-scaled linear schedule,
  /// 32×32 grayscale patches, 20 detector epochs at batch 4.
  void apply_toy_profile();
  NoiseSchedule schedule() const;
};

nlohmann::json config_to_json(const PipelineConfig& cfg);
/// Overlays the keys present in `j` onto `cfg`; unknown keys are rejected.
void apply_config_json(PipelineConfig& cfg, const nlohmann::json& j);
PipelineConfig load_pipeline_config(const std::filesystem::path& path);

// ---------------------------------------------------------------------------
// Dataset ingestion

enum class Split { kTrain, kVal, kTest };
const char* to_string(Split s);

struct RaindropPair {
  Split split = Split::kTrain;
  std::string stem;
  std::filesystem::path rainy;
  std::filesystem::path clean;
  std::optional<std::filesystem::path> mask;  // <stem>_mask.*, when present
};

struct RaindropDataset {
  std::vector<RaindropPair> pairs;
  std::map<Split, std::size_t> counts;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;

  std::vector<const RaindropPair*> split(Split s) const;
};

/// root/{train,val,test}/ with <stem>_rain.<ext> and <stem>_clean.<ext>
/// paired by stem (ext: png, ppm, pgm). Unpaired files and pairs whose
/// dimensions differ are skipped and counted; a missing or empty split throws.
RaindropDataset ingest_raindrop_dataset(const std::filesystem::path& root);

struct CityscapesItem {
  std::filesystem::path image;
  std::string stem;
  CameraParams camera;
  bool camera_from_file = false;
};

struct CityscapesDataset {
  std::vector<CityscapesItem> items;
  std::size_t skipped = 0;
  std::vector<std::string> warnings;
};

/// Every PNG/PNM image under root (excluding root/camera). The camera file
/// for <prefix>_leftImg8bit.png is <prefix>_camera.json, looked up next to
/// the image and then under the mirrored path in root/camera/. Images without
/// one get default_camera_for_width(image width).
CityscapesDataset ingest_cityscapes(const std::filesystem::path& root);

// ---------------------------------------------------------------------------
// Stages

struct SynthesisReport {
  std::size_t written = 0;
  std::size_t skipped = 0;
};

/// Renders refraction drops onto every Cityscapes image (optionally
/// center-cropped first) and writes <stem>_rain.png, <stem>_clean.png,
/// <stem>_mask.png and <stem>_field.json into `out`.
SynthesisReport synthesize_dataset(const std::filesystem::path& cityscapes_root, const std::filesystem::path& out,
                                   const DropFieldConfig& drops, std::uint64_t seed, std::optional<int> crop_h,
                                   std::optional<int> crop_w);

/// <stem>_rain + <stem>_mask pairs from a synthesize_dataset directory.
std::vector<DetectorSample> load_detector_samples(const std::filesystem::path& dir);

/// Train-split clean images, center-cropped to the patch (grayscale if
/// requested), mapped to the diffusion range.
std::vector<Tensor> load_denoiser_dataset(const RaindropDataset& ds, int patch, bool grayscale);

/// Per-pixel mean and pooled standard deviation of a tensor set.
std::shared_ptr<AnalyticGaussianDenoiser> fit_analytic_denoiser(const std::vector<Tensor>& data,
                                                               const NoiseSchedule& sched);

/// Constant mean and standard deviation of the known (m = 0) pixels; used
/// when neither a checkpoint nor a training set is available.
std::shared_ptr<AnalyticGaussianDenoiser> fit_known_pixel_denoiser(const Image& input, const Mask& mask,
                                                                  const NoiseSchedule& sched);

/// Inpaints `input` where mask = 1 and copies every m = 0 pixel from
/// `input` unchanged, so the known region is preserved bit for bit.
Image inpaint_image(const Image& input, const Mask& mask, const Denoiser& den, const NoiseSchedule& sched,
                    std::uint64_t seed, bool swap_mask_roles = false);

/// Mask for one pair under the configured method. `detector` is required for
/// MaskMethod::kDetector and ignored otherwise.
Mask compute_mask(const PipelineConfig& cfg, const Image& rainy, const Image& clean, DetectorNet* detector);

struct PipelineReport {
  std::vector<EvalRow> rows;  // input order, successful images only
  std::size_t processed = 0;
  std::size_t failed = 0;
  std::size_t skipped_at_ingest = 0;
  std::vector<std::string> errors;
  std::string csv;
};

/// mask → crop → inpaint → metrics for every test pair; writes masks/,
/// recon/, report.csv and manifest.json under cfg.output_dir.
PipelineReport run_pipeline(const PipelineConfig& cfg);

/// Lowercase hex SHA-256 of a file's bytes.
std::string sha256_file(const std::filesystem::path& path);

}  // namespace dropwiper
