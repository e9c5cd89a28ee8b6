// dropwiper: raindrop mask generation and diffusion inpainting.

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "dropwiper/detector.hpp"
#include "dropwiper/diffusion.hpp"
#include "dropwiper/error.hpp"
#include "dropwiper/image_io.hpp"
#include "dropwiper/metrics.hpp"
#include "dropwiper/pipeline.hpp"
#include "dropwiper/scenes.hpp"

namespace fs = std::filesystem;
using namespace dropwiper;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
  bool toy = false;
};

void add_common(CLI::App* cmd, Common& c, bool with_out = true) {
  cmd->add_option("--config", c.config, "JSON config file")->check(CLI::ExistingFile);
  cmd->add_option("--seed", c.seed, "Root seed");
  if (with_out) cmd->add_option("--out", c.out, "Output path");
  cmd->add_flag("--toy", c.toy, "Desk-scale profile (T=200, 32x32 gray patches)");
}

PipelineConfig resolve(const Common& c) {
  PipelineConfig cfg;
  if (!c.config.empty()) cfg = load_pipeline_config(c.config);
  if (c.toy) cfg.apply_toy_profile();
  if (c.seed) {
    cfg.seed = *c.seed;
    cfg.synthesis.seed = *c.seed;
    cfg.detector_training.seed = *c.seed;
    cfg.denoiser_training.seed = *c.seed;
  }
  if (!c.out.empty()) cfg.output_dir = c.out;
  return cfg;
}

void print_warnings(const std::vector<std::string>& w) {
  for (const auto& line : w) std::cerr << "warning: " << line << '\n';
}

Image load_rgb(const fs::path& p) {
  Image img = load_image(p);
  return img.channels == 1 ? gray_to_rgb(to_gray_image(img)) : img;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"DropWiper: raindrop masks and diffusion inpainting"};
  app.require_subcommand(1);

  // make-fixture
  Common fx;
  std::string fx_kind = "raindrop";
  RaindropFixtureSpec fx_spec;
  int fx_count = 6;
  auto* make_fixture = app.add_subcommand("make-fixture", "Write a procedural dataset");
  add_common(make_fixture, fx);
  make_fixture->add_option("--kind", fx_kind, "raindrop or cityscapes")
      ->check(CLI::IsMember({"raindrop", "cityscapes"}));
  make_fixture->add_option("--train", fx_spec.train);
  make_fixture->add_option("--val", fx_spec.val);
  make_fixture->add_option("--test", fx_spec.test);
  make_fixture->add_option("--count", fx_count, "Image count (cityscapes)");
  make_fixture->add_option("--height", fx_spec.height);
  make_fixture->add_option("--width", fx_spec.width);

  // synthesize
  Common syn;
  std::string syn_root;
  std::optional<int> syn_crop_h, syn_crop_w;
  std::optional<int> syn_count_min, syn_count_max;
  std::optional<double> syn_radius_min, syn_radius_max;
  auto* synthesize = app.add_subcommand("synthesize", "Render refraction drops onto Cityscapes images");
  add_common(synthesize, syn);
  synthesize->add_option("--cityscapes-root", syn_root);
  synthesize->add_option("--crop-height", syn_crop_h);
  synthesize->add_option("--crop-width", syn_crop_w);
  synthesize->add_option("--count-min", syn_count_min);
  synthesize->add_option("--count-max", syn_count_max);
  synthesize->add_option("--radius-min", syn_radius_min);
  synthesize->add_option("--radius-max", syn_radius_max);

  // mask
  Common mk;
  std::string mk_rain, mk_clean, mk_method, mk_option, mk_ckpt;
  std::optional<int> mk_tau;
  bool mk_equalize = false;
  auto* mask = app.add_subcommand("mask", "Residual or detector raindrop mask for one image");
  add_common(mask, mk);
  mask->add_option("--rain", mk_rain)->required()->check(CLI::ExistingFile);
  mask->add_option("--clean", mk_clean, "Clean image (residual method)");
  mask->add_option("--method", mk_method, "residual, detector or full");
  mask->add_option("--option", mk_option, "Residual option a-d");
  mask->add_option("--tau", mk_tau, "Residual threshold in levels");
  mask->add_flag("--equalize", mk_equalize, "Histogram-equalize both inputs");
  mask->add_option("--checkpoint", mk_ckpt, "Detector checkpoint");

  // train-detector
  Common td;
  std::string td_data, td_val;
  std::optional<int> td_epochs, td_batch;
  std::optional<double> td_lr;
  bool td_mini = false;
  auto* train_det = app.add_subcommand("train-detector", "Train the raindrop detector");
  add_common(train_det, td);
  train_det->add_option("--data", td_data, "synthesize output directory")->required();
  train_det->add_option("--val-data", td_val, "Validation directory (default: none)");
  train_det->add_option("--epochs", td_epochs);
  train_det->add_option("--batch-size", td_batch);
  train_det->add_option("--lr", td_lr);
  train_det->add_flag("--miniature", td_mini, "Tiny channel plan");

  // train-denoiser
  Common tn;
  std::string tn_root;
  std::optional<int> tn_steps;
  auto* train_den = app.add_subcommand("train-denoiser", "Train the MLP noise predictor on clean train patches");
  add_common(train_den, tn);
  train_den->add_option("--raindrop-root", tn_root);
  train_den->add_option("--steps", tn_steps, "Optimizer steps");

  // inpaint
  Common ip;
  std::string ip_input, ip_mask, ip_ckpt;
  auto* inpaint = app.add_subcommand("inpaint", "Fill the masked pixels of one image");
  add_common(inpaint, ip);
  inpaint->add_option("--input", ip_input)->required()->check(CLI::ExistingFile);
  inpaint->add_option("--mask", ip_mask)->required()->check(CLI::ExistingFile);
  inpaint->add_option("--checkpoint", ip_ckpt, "Denoiser checkpoint (default: fit to the known pixels)");

  // eval
  Common ev;
  std::string ev_pred, ev_truth, ev_pred_mask, ev_truth_mask;
  auto* eval = app.add_subcommand("eval", "PSNR/SSIM (and mask IoU) between images or directories");
  add_common(eval, ev);
  eval->add_option("--pred", ev_pred)->required();
  eval->add_option("--truth", ev_truth)->required();
  eval->add_option("--pred-mask", ev_pred_mask);
  eval->add_option("--truth-mask", ev_truth_mask);

  // pipeline
  Common pl;
  std::string pl_root, pl_method, pl_option, pl_det, pl_den;
  std::optional<int> pl_tau, pl_jobs;
  auto* pipeline = app.add_subcommand("pipeline", "Mask, crop, inpaint and score every test pair");
  add_common(pipeline, pl);
  pipeline->add_option("--raindrop-root", pl_root);
  pipeline->add_option("--method", pl_method, "residual, detector or full");
  pipeline->add_option("--option", pl_option, "Residual option a-d");
  pipeline->add_option("--tau", pl_tau);
  pipeline->add_option("--detector", pl_det, "Detector checkpoint");
  pipeline->add_option("--denoiser", pl_den, "Denoiser checkpoint");
  pipeline->add_option("--jobs", pl_jobs);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*make_fixture) {
      const PipelineConfig cfg = resolve(fx);
      if (fx.out.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required");
      if (fx_kind == "raindrop") {
        fx_spec.seed = cfg.seed;
        write_raindrop_fixture(fx.out, fx_spec);
      } else {
        write_cityscapes_fixture(fx.out, fx_count, fx_spec.height, fx_spec.width, cfg.seed);
      }
      std::cout << "wrote " << fx_kind << " fixture to " << fx.out << '\n';
    } else if (*synthesize) {
      PipelineConfig cfg = resolve(syn);
      if (!syn_root.empty()) cfg.cityscapes_root = syn_root;
      if (syn_count_min) cfg.synthesis.count_min = *syn_count_min;
      if (syn_count_max) cfg.synthesis.count_max = *syn_count_max;
      if (syn_radius_min) cfg.synthesis.radius_min_px = *syn_radius_min;
      if (syn_radius_max) cfg.synthesis.radius_max_px = *syn_radius_max;
      const auto rep =
          synthesize_dataset(cfg.cityscapes_root, cfg.output_dir, cfg.synthesis, cfg.seed, syn_crop_h, syn_crop_w);
      std::cout << "synthesized " << rep.written << " images, skipped " << rep.skipped << '\n';
    } else if (*mask) {
      PipelineConfig cfg = resolve(mk);
      if (!mk_method.empty()) cfg.mask_method = parse_mask_method(mk_method);
      if (!mk_option.empty()) cfg.residual_option = parse_residual_option(mk_option);
      if (mk_tau) cfg.residual_tau = *mk_tau;
      if (mk_equalize) cfg.equalize = true;
      if (!mk_ckpt.empty()) cfg.detector_checkpoint = mk_ckpt;
      if (mk.out.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required");
      const Image rainy = load_image(mk_rain);
      Mask m;
      if (cfg.mask_method == MaskMethod::kResidual) {
        if (mk_clean.empty()) throw Error(ErrorCode::kInvalidArgument, "residual masks need --clean");
        m = compute_mask(cfg, rainy, load_image(mk_clean), nullptr);
      } else if (cfg.mask_method == MaskMethod::kDetector) {
        DetectorNet net = DetectorNet::load(cfg.detector_checkpoint);
        m = compute_mask(cfg, load_rgb(mk_rain), rainy, &net);
      } else {
        m = compute_mask(cfg, rainy, rainy, nullptr);
      }
      save_image(m, mk.out);
      std::cout << "mask pixels: " << m.count() << " of " << m.data.size() << '\n';
    } else if (*train_det) {
      PipelineConfig cfg = resolve(td);
      if (td_epochs) cfg.detector_training.epochs = *td_epochs;
      if (td_batch) cfg.detector_training.batch_size = *td_batch;
      if (td_lr) cfg.detector_training.learning_rate = *td_lr;
      const auto train = load_detector_samples(td_data);
      const auto val = td_val.empty() ? std::vector<DetectorSample>{} : load_detector_samples(td_val);
      DetectorNet net = build_detector(cfg.seed, td_mini ? DetectorConfig::miniature() : DetectorConfig{});
      std::cout << "detector parameters: " << net.parameter_count() << '\n';
      const auto res = train_detector(net, train, val, cfg.detector_training);
      fs::create_directories(cfg.output_dir);
      net.save(cfg.output_dir / "detector.dwdn");
      write_epoch_csv(res.log, cfg.output_dir / "epochs.csv");
      for (const auto& e : res.log) {
        if (std::isnan(e.val_loss)) {
          std::printf("epoch %d  train %.6f\n", e.epoch, e.train_loss);
        } else {
          std::printf("epoch %d  train %.6f  val %.6f\n", e.epoch, e.train_loss, e.val_loss);
        }
      }
    } else if (*train_den) {
      PipelineConfig cfg = resolve(tn);
      if (!tn_root.empty()) cfg.raindrop_root = tn_root;
      if (tn_steps) cfg.denoiser_training.steps = *tn_steps;
      const auto ds = ingest_raindrop_dataset(cfg.raindrop_root);
      print_warnings(ds.warnings);
      const auto data = load_denoiser_dataset(ds, cfg.patch_size, cfg.grayscale);
      MlpConfig arch{static_cast<int>(data.front().size()), cfg.denoiser_hidden, cfg.diffusion_steps};
      const auto trained = train_denoiser(data, arch, cfg.denoiser_training, cfg.schedule());
      fs::create_directories(cfg.output_dir);
      trained.model->save(cfg.output_dir / "denoiser.dwdn");
      write_loss_csv(trained.loss_curve, cfg.output_dir / "loss.csv");
      std::printf("final loss %.6f over %zu steps\n", trained.loss_curve.back(), trained.loss_curve.size());
    } else if (*inpaint) {
      PipelineConfig cfg = resolve(ip);
      if (!ip_ckpt.empty()) cfg.denoiser_checkpoint = ip_ckpt;
      if (ip.out.empty()) throw Error(ErrorCode::kInvalidArgument, "--out is required");
      Image input = load_image(ip_input);
      if (cfg.grayscale && input.channels == 3) input = to_image(to_grayscale(input));
      const Mask m = load_mask(ip_mask);
      const NoiseSchedule sched = cfg.schedule();
      std::shared_ptr<const Denoiser> den;
      if (!cfg.denoiser_checkpoint.empty()) {
        den = std::make_shared<MlpDenoiser>(MlpDenoiser::load(cfg.denoiser_checkpoint));
      } else {
        den = fit_known_pixel_denoiser(input, m, sched);
      }
      save_image(inpaint_image(input, m, *den, sched, cfg.seed, cfg.swap_mask_roles), ip.out);
    } else if (*eval) {
      std::vector<EvalRow> rows;
      auto score = [&](const fs::path& pred, const fs::path& truth, const std::string& id,
                       const std::optional<fs::path>& pm, const std::optional<fs::path>& tm) {
        const Image a = load_image(pred);
        const Image b = load_image(truth);
        EvalRow row{id, psnr(a, b), ssim(to_grayscale(a), to_grayscale(b)), std::nullopt};
        if (pm && tm) row.mask = mask_score(load_mask(*pm), load_mask(*tm));
        rows.push_back(row);
      };
      if (fs::is_directory(ev_pred)) {
        std::vector<fs::path> files;
        for (const auto& e : fs::directory_iterator(ev_pred)) files.push_back(e.path());
        std::sort(files.begin(), files.end());
        for (const auto& f : files) {
          const fs::path truth = fs::path(ev_truth) / f.filename();
          if (!fs::exists(truth)) {
            std::cerr << "warning: no reference for " << f.filename() << ", skipped\n";
            continue;
          }
          std::optional<fs::path> pm, tm;
          if (!ev_pred_mask.empty() && !ev_truth_mask.empty()) {
            pm = fs::path(ev_pred_mask) / f.filename();
            tm = fs::path(ev_truth_mask) / f.filename();
            if (!fs::exists(*pm) || !fs::exists(*tm)) pm.reset(), tm.reset();
          }
          score(f, truth, f.stem().string(), pm, tm);
        }
      } else {
        std::optional<fs::path> pm, tm;
        if (!ev_pred_mask.empty() && !ev_truth_mask.empty()) pm = ev_pred_mask, tm = ev_truth_mask;
        score(ev_pred, ev_truth, fs::path(ev_pred).stem().string(), pm, tm);
      }
      if (ev.out.empty()) {
        std::cout << format_eval_csv(rows);
      } else {
        write_eval_csv(rows, ev.out);
      }
    } else if (*pipeline) {
      PipelineConfig cfg = resolve(pl);
      if (!pl_root.empty()) cfg.raindrop_root = pl_root;
      if (!pl_method.empty()) cfg.mask_method = parse_mask_method(pl_method);
      if (!pl_option.empty()) cfg.residual_option = parse_residual_option(pl_option);
      if (pl_tau) cfg.residual_tau = *pl_tau;
      if (!pl_det.empty()) cfg.detector_checkpoint = pl_det;
      if (!pl_den.empty()) cfg.denoiser_checkpoint = pl_den;
      if (pl_jobs) cfg.jobs = *pl_jobs;
      const PipelineReport rep = run_pipeline(cfg);
      for (const auto& e : rep.errors) std::cerr << "error: " << e << '\n';
      std::cout << "processed " << rep.processed << ", failed " << rep.failed << ", skipped at ingest "
                << rep.skipped_at_ingest << "; report at " << (cfg.output_dir / "report.csv").string() << '\n';
      if (rep.processed == 0 && rep.failed > 0) return 3;
    }
  } catch (const Error& e) {
    std::cerr << "error [" << to_string(e.code()) << "]: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
