#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "dropwiper/error.hpp"
#include "dropwiper/image_io.hpp"
#include "dropwiper/metrics.hpp"
#include "dropwiper/pipeline.hpp"
#include "dropwiper/raindrop.hpp"
#include "dropwiper/residual_mask.hpp"
#include "dropwiper/scenes.hpp"

namespace py = pybind11;
using namespace dropwiper;

namespace {

using F64 = py::array_t<double, py::array::c_style | py::array::forcecast>;
using U8 = py::array_t<std::uint8_t, py::array::c_style | py::array::forcecast>;

// (H, W) arrays become single-channel images, (H, W, C) keep C.
Image image_from(const F64& a) {
  if (a.ndim() != 2 && a.ndim() != 3) throw Error(ErrorCode::kInvalidArgument, "image must be HxW or HxWxC");
  const int c = a.ndim() == 3 ? static_cast<int>(a.shape(2)) : 1;
  if (c != 1 && c != 3) throw Error(ErrorCode::kInvalidArgument, "image must have 1 or 3 channels");
  Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), c);
  std::memcpy(img.data.data(), a.data(), img.data.size() * sizeof(double));
  return img;
}

F64 image_to(const Image& img) {
  F64 out({img.height, img.width, img.channels});
  std::memcpy(out.mutable_data(), img.data.data(), img.data.size() * sizeof(double));
  return out;
}

Mask mask_from(const U8& a) {
  if (a.ndim() != 2) throw Error(ErrorCode::kInvalidArgument, "mask must be HxW");
  Mask m(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)));
  for (std::size_t i = 0; i < m.data.size(); ++i) {
    if (a.data()[i] > 1) throw Error(ErrorCode::kInvalidArgument, "mask values must be 0 or 1");
    m.data[i] = a.data()[i];
  }
  return m;
}

U8 mask_to(const Mask& m) {
  U8 out({m.height, m.width});
  std::memcpy(out.mutable_data(), m.data.data(), m.data.size());
  return out;
}

py::dict score_dict(const MaskScore& s) {
  py::dict d;
  d["iou"] = s.iou;
  d["precision"] = s.precision;
  d["recall"] = s.recall;
  d["true_positives"] = s.true_positives;
  d["false_positives"] = s.false_positives;
  d["false_negatives"] = s.false_negatives;
  return d;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Raindrop masking, refraction synthesis and diffusion inpainting";

  static py::exception<Error> error(m, "DropwiperError", PyExc_RuntimeError);
  py::register_exception_translator([](std::exception_ptr p) {
    try {
      if (p) std::rethrow_exception(p);
    } catch (const Error& e) {
      py::object value = py::reinterpret_borrow<py::object>(error.ptr())(py::str(e.what()));
      value.attr("code") = to_string(e.code());
      PyErr_SetObject(error.ptr(), value.ptr());
    }
  });

  m.attr("DEFAULT_SEED") = kDefaultSeed;
  m.attr("PSNR_CAP") = kPsnrCap;

  m.def("load_image", [](const std::filesystem::path& p) { return image_to(load_image(p)); }, py::arg("path"),
        "HxWxC float64 array in [0, 1].");
  m.def("load_mask", [](const std::filesystem::path& p) { return mask_to(load_mask(p)); }, py::arg("path"));
  m.def(
      "save_image", [](const F64& a, const std::filesystem::path& p) { save_image(image_from(a), p); },
      py::arg("image"), py::arg("path"));
  m.def(
      "save_mask", [](const U8& a, const std::filesystem::path& p) { save_image(mask_from(a), p); }, py::arg("mask"),
      py::arg("path"));

  m.def(
      "residual_mask",
      [](const F64& rainy, const F64& clean, const std::string& option, int tau, bool equalize) {
        Preprocess pre;
        pre.equalize = equalize;
        return mask_to(residual_mask(image_from(rainy), image_from(clean), parse_residual_option(option), tau, pre));
      },
      py::arg("rainy"), py::arg("clean"), py::arg("option") = "abs-gray", py::arg("tau") = 30,
      py::arg("equalize") = false);

  m.def(
      "psnr", [](const F64& a, const F64& b) { return psnr(image_from(a), image_from(b)); }, py::arg("a"),
      py::arg("b"));
  m.def(
      "ssim", [](const F64& a, const F64& b) { return ssim(to_grayscale(image_from(a)), to_grayscale(image_from(b))); },
      py::arg("a"), py::arg("b"), "Mean 8x8-window SSIM on luma.");
  m.def(
      "mask_score", [](const U8& pred, const U8& truth) { return score_dict(mask_score(mask_from(pred), mask_from(truth))); },
      py::arg("pred"), py::arg("truth"));

  m.def(
      "render_drops",
      [](const F64& clean, std::uint64_t seed, int count_min, int count_max, double radius_min, double radius_max,
         std::optional<double> focal_length_px) {
        const Image img = image_from(clean);
        DropFieldConfig cfg;
        cfg.seed = seed;
        cfg.count_min = count_min;
        cfg.count_max = count_max;
        cfg.radius_min_px = radius_min;
        cfg.radius_max_px = radius_max;
        CameraParams cam = default_camera_for_width(img.width);
        if (focal_length_px) cam.focal_length_px = *focal_length_px;
        const RaindropField field = sample_drop_field(cfg, cam, img.height, img.width);
        const RenderResult r = render_drops(img, field);
        return py::make_tuple(image_to(r.rainy), mask_to(r.mask), field_to_json(field));
      },
      py::arg("clean"), py::arg("seed") = 0, py::arg("count_min") = 5, py::arg("count_max") = 20,
      py::arg("radius_min") = 3.0, py::arg("radius_max") = 8.0, py::arg("focal_length_px") = py::none(),
      "Returns (rainy, mask, field_json).");

  m.def(
      "inpaint",
      [](const F64& input, const U8& mask, int steps, std::uint64_t seed) {
        const Image img = image_from(input);
        const Mask mk = mask_from(mask);
        const NoiseSchedule sched = make_scaled_schedule(steps);
        const auto den = fit_known_pixel_denoiser(img, mk, sched);
        Image out;
        {
          py::gil_scoped_release release;
          out = inpaint_image(img, mk, *den, sched, seed);
        }
        return image_to(out);
      },
      py::arg("image"), py::arg("mask"), py::arg("steps") = 200, py::arg("seed") = kDefaultSeed,
      "Fills mask = 1 pixels with a Gaussian denoiser fitted to the known pixels.");

  m.def(
      "write_raindrop_fixture",
      [](const std::filesystem::path& root, int train, int val, int test, int height, int width, std::uint64_t seed) {
        RaindropFixtureSpec spec;
        spec.train = train;
        spec.val = val;
        spec.test = test;
        spec.height = height;
        spec.width = width;
        spec.seed = seed;
        write_raindrop_fixture(root, spec);
      },
      py::arg("root"), py::arg("train") = 4, py::arg("val") = 2, py::arg("test") = 4, py::arg("height") = 48,
      py::arg("width") = 64, py::arg("seed") = 0);

  m.def(
      "default_config", [](bool toy) {
        PipelineConfig cfg;
        if (toy) cfg.apply_toy_profile();
        return config_to_json(cfg).dump();
      },
      py::arg("toy") = false, "Pipeline configuration as a JSON string.");

  m.def(
      "run_pipeline",
      [](const std::string& config_json) {
        PipelineConfig cfg;
        apply_config_json(cfg, nlohmann::json::parse(config_json));
        PipelineReport rep;
        {
          py::gil_scoped_release release;
          rep = run_pipeline(cfg);
        }
        py::dict d;
        d["processed"] = rep.processed;
        d["failed"] = rep.failed;
        d["skipped_at_ingest"] = rep.skipped_at_ingest;
        d["errors"] = rep.errors;
        d["csv"] = rep.csv;
        return d;
      },
      py::arg("config_json"));

  m.def("sha256_file", &sha256_file, py::arg("path"));
}
