// Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any FAIL.
//
//   acceptance [path/to/dropwiper-cli] [--only N]
//
// RAINDROP_ROOT, when set, points criterion 4's monotonicity sweep at a real
// Raindrop dataset; otherwise procedural pairs stand in.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "dropwiper/detector.hpp"
#include "dropwiper/diffusion.hpp"
#include "dropwiper/image_io.hpp"
#include "dropwiper/metrics.hpp"
#include "dropwiper/pipeline.hpp"
#include "dropwiper/raindrop.hpp"
#include "dropwiper/residual_mask.hpp"
#include "dropwiper/scenes.hpp"

namespace fs = std::filesystem;
using namespace dropwiper;

namespace {

// Tolerances and budgets.
constexpr double kC1MeanTol = 0.05;
constexpr double kC1VarRelTol = 0.10;
constexpr double kC1Seconds = 120.0;
constexpr double kC2Tol = 0.03;
constexpr double kC2Seconds = 60.0;
constexpr double kC5SnellTol = 1e-9;
constexpr double kC6RelTol = 1e-3;
constexpr double kC6Eps = 1e-3;
constexpr double kC6MinEps = 1e-7;
constexpr double kC6GradFloor = 1e-6;  // |g| below this is compared absolutely
constexpr double kC6Seconds = 180.0;
constexpr double kC7Seconds = 600.0;
constexpr std::size_t kReferenceParams = 493000;

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

std::pair<double, double> moments(const std::vector<double>& v) {
  double mean = 0.0;
  for (double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double var = 0.0;
  for (double x : v) var += (x - mean) * (x - mean);
  return {mean, var / static_cast<double>(v.size() - 1)};
}

fs::path scratch_dir(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("dropwiper_acceptance_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// ---------------------------------------------------------------------------

Outcome criterion1() {
  const auto t0 = std::chrono::steady_clock::now();
  const NoiseSchedule sched = make_scaled_schedule(200);
  constexpr std::size_t kChains = 10000;
  // Every coordinate of the vector is an independent scalar chain.
  const auto den = analytic_gaussian_denoiser(Tensor(kChains, 3.0), 0.5, sched);
  Rng rng(chain_seed(101, 0));
  const Tensor x = sample_unconditional(kChains, *den, sched, rng);
  const auto [mean, var] = moments(x);
  const double secs = seconds_since(t0);
  const bool ok = std::abs(mean - 3.0) <= kC1MeanTol && std::abs(var - 0.25) <= kC1VarRelTol * 0.25 &&
                  secs < kC1Seconds;
  return {ok, fmt("mean %.4f (3±%.2f), var %.4f (0.25±%.0f%%), %.1fs", mean, kC1MeanTol, var, kC1VarRelTol * 100,
                  secs)};
}

Outcome criterion2() {
  const auto t0 = std::chrono::steady_clock::now();
  constexpr int kT = 1000;
  constexpr std::size_t kTrials = 100000;
  const NoiseSchedule sched = make_schedule(kT);
  std::vector<double> x0(kTrials);
  {
    Rng rng(202);
    std::normal_distribution<double> data(1.0, 0.5);
    for (double& v : x0) v = data(rng);
  }
  bool ok = true;
  std::string detail;
  for (int t : {1, kT / 2, kT}) {
    Rng composed_rng(chain_seed(203, t));
    Tensor x = x0;
    for (int s = 1; s <= t; ++s) x = forward_step(x, s, sched, composed_rng);
    Rng direct_rng(chain_seed(204, t));
    const Tensor y = forward_sample(x0, t, sched, direct_rng);
    const auto [mc, vc] = moments(x);
    const auto [md, vd] = moments(y);
    // Means are compared on the scale of the spread, since the mean at t = T
    // is close to zero.
    const double mean_err = std::abs(mc - md) / std::sqrt(vd);
    const double var_err = std::abs(vc - vd) / vd;
    ok = ok && mean_err <= kC2Tol && var_err <= kC2Tol;
    detail += fmt("t=%d Δmean/sd %.4f Δvar %.2f%%; ", t, mean_err, var_err * 100);
  }
  const double secs = seconds_since(t0);
  ok = ok && secs < kC2Seconds;
  return {ok, detail + fmt("%.1fs", secs)};
}

Outcome criterion3() {
  const NoiseSchedule sched = make_scaled_schedule(200);
  std::mt19937_64 meta(303);
  std::uniform_int_distribution<int> level(0, 255);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  int exact = 0, zero_mask_exact = 0, zero_mask_runs = 0;
  for (int trial = 0; trial < 100; ++trial) {
    const int h = 8 + static_cast<int>(meta() % 17);
    const int w = 8 + static_cast<int>(meta() % 17);
    const int channels = trial % 3 == 0 ? 3 : 1;
    Image img(h, w, channels);
    for (double& v : img.data) v = level(meta) / 255.0;
    const bool zero_mask = trial % 10 == 0;
    const double density = u(meta);
    Mask m(h, w);
    if (!zero_mask) {
      for (auto& b : m.data) b = u(meta) < density ? 1 : 0;
    }
    const std::uint64_t seed = meta();
    const auto den = fit_known_pixel_denoiser(img, m, sched);

    // Tensor-level sampler.
    const Tensor x0 = channels == 1 ? image_to_tensor(to_gray_image(img)) : image_to_tensor(img);
    Tensor mt(x0.size());
    for (std::size_t p = 0; p < m.data.size(); ++p) {
      for (int c = 0; c < channels; ++c) mt[p * channels + c] = m.data[p];
    }
    Rng rng(seed);
    const Tensor xs = inpaint_sample(x0, mt, *den, sched, rng);
    bool ok = true;
    for (std::size_t i = 0; i < x0.size(); ++i) {
      if (mt[i] == 0.0 && xs[i] != x0[i]) ok = false;
    }
    // Image-level entry point used by the pipeline.
    const Image out = inpaint_image(img, m, *den, sched, seed);
    for (std::size_t p = 0; p < m.data.size(); ++p) {
      for (int c = 0; c < channels; ++c) {
        if (!m.data[p] && out.data[p * channels + c] != img.data[p * channels + c]) ok = false;
      }
    }
    exact += ok;
    if (zero_mask) {
      ++zero_mask_runs;
      zero_mask_exact += (xs == x0 && out == img);
    }
  }
  return {exact == 100 && zero_mask_exact == zero_mask_runs,
          fmt("%d/100 triples bit-exact on known pixels; m≡0 identity %d/%d", exact, zero_mask_exact,
              zero_mask_runs)};
}

std::vector<std::pair<Image, Image>> monotonicity_pairs(std::string& source) {
  std::vector<std::pair<Image, Image>> pairs;
  if (const char* root = std::getenv("RAINDROP_ROOT"); root && *root) {
    const RaindropDataset ds = ingest_raindrop_dataset(root);
    for (const auto& p : ds.pairs) {
      if (pairs.size() == 50) break;
      pairs.emplace_back(load_image(p.rainy), load_image(p.clean));
    }
    source = "Raindrop pairs from RAINDROP_ROOT";
    return pairs;
  }
  DropFieldConfig drops;
  drops.count_min = 3;
  drops.count_max = 8;
  drops.radius_min_px = 2.0;
  drops.radius_max_px = 6.0;
  for (int i = 0; i < 50; ++i) {
    const Image clean = campus_scene(48, 64, 4000 + i);
    drops.seed = 4000 + i;
    const auto field = sample_drop_field(drops, default_camera_for_width(64), 48, 64);
    pairs.emplace_back(render_soft_drops(clean, field, 4000 + i).rainy, clean);
  }
  source = "procedural stand-in pairs (no RAINDROP_ROOT)";
  return pairs;
}

Outcome criterion4() {
  const ResidualOption options[] = {ResidualOption::kSignedRgb, ResidualOption::kAbsRgb,
                                    ResidualOption::kSignedGray, ResidualOption::kAbsGray};
  // Exactness: clean in [0.1, 0.5] plus a +0.5 disk.
  std::mt19937_64 rng(404);
  std::uniform_real_distribution<double> base(0.1, 0.5);
  int disk_ok = 0, disk_runs = 0;
  for (int k = 0; k < 10; ++k) {
    Image clean(40, 56, 3);
    for (double& v : clean.data) v = base(rng);
    Image rainy = clean;
    Mask disk(40, 56);
    const double cr = 10 + rng() % 20, cc = 10 + rng() % 36, rad = 3 + rng() % 7;
    for (int r = 0; r < 40; ++r) {
      for (int c = 0; c < 56; ++c) {
        if (std::hypot(r - cr, c - cc) > rad) continue;
        disk.at(r, c) = 1;
        for (int ch = 0; ch < 3; ++ch) rainy.at(r, c, ch) += 0.5;
      }
    }
    for (ResidualOption o : options) {
      ++disk_runs;
      disk_ok += mask_score(residual_mask(rainy, clean, o, 80), disk).iou == 1.0;
    }
  }
  std::string source;
  const auto pairs = monotonicity_pairs(source);
  const int taus[] = {30, 80, 120, 200};
  int mono_ok = 0, mono_runs = 0;
  for (const auto& [rainy, clean] : pairs) {
    for (ResidualOption o : options) {
      ++mono_runs;
      bool ok = true;
      Mask prev = residual_mask(rainy, clean, o, taus[0]);
      for (int i = 1; i < 4; ++i) {
        const Mask next = residual_mask(rainy, clean, o, taus[i]);
        for (std::size_t p = 0; p < next.data.size(); ++p) {
          if (next.data[p] && !prev.data[p]) ok = false;
        }
        prev = next;
      }
      mono_ok += ok;
    }
  }
  return {disk_ok == disk_runs && mono_ok == mono_runs && pairs.size() == 50,
          fmt("disk IoU=1 in %d/%d (pair, option) runs; tau subset chain holds %d/%d on %zu %s", disk_ok, disk_runs,
              mono_ok, mono_runs, pairs.size(), source.c_str())};
}

double cross2(const SourcePoint& o, const SourcePoint& a, const SourcePoint& b) {
  return (a.col - o.col) * (b.row - o.row) - (a.row - o.row) * (b.col - o.col);
}

double hull_area(std::vector<SourcePoint> pts) {
  std::sort(pts.begin(), pts.end(), [](const auto& a, const auto& b) {
    return a.col < b.col || (a.col == b.col && a.row < b.row);
  });
  if (pts.size() < 3) return 0.0;
  std::vector<SourcePoint> hull(2 * pts.size());
  std::size_t k = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  for (std::size_t i = pts.size() - 1, lo = k + 1; i-- > 0;) {
    while (k >= lo && cross2(hull[k - 2], hull[k - 1], pts[i]) <= 0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k - 1);
  double area = 0.0;
  for (std::size_t i = 0; i < hull.size(); ++i) {
    const auto& a = hull[i];
    const auto& b = hull[(i + 1) % hull.size()];
    area += a.col * b.row - b.col * a.row;
  }
  return std::abs(area) / 2.0;
}

Outcome criterion5() {
  std::mt19937_64 rng(505);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  auto random_unit = [&] {
    Vec3 v{u(rng), u(rng), u(rng)};
    while (v.norm() < 1e-3) v = {u(rng), u(rng), u(rng)};
    return v.normalized();
  };
  const double indices[] = {1.0, 1.33, 1.5, 2.4};
  // Snell: scalar oracle built from angles, independent of the vector form.
  double worst = 0.0;
  int tir_agree = 0, tir_cases = 0, refracted = 0;
  for (int k = 0; k < 1000; ++k) {
    const Vec3 n = random_unit();
    Vec3 i = random_unit();
    if (i.dot(n) > 0) i = -i;  // arrive against the normal
    const double n1 = indices[rng() % 4], n2 = indices[rng() % 4];
    const double cos_i = -i.dot(n);
    const double sin_i = std::sqrt(std::max(0.0, 1.0 - cos_i * cos_i));
    const bool oracle_tir = sin_i > n2 / n1;
    const auto t = refract_ray(i, n, n1, n2);
    if (oracle_tir || !t) {
      tir_agree += oracle_tir == !t;
      ++tir_cases;
      continue;
    }
    ++refracted;
    const double theta_t = std::asin(n1 / n2 * sin_i);
    Vec3 tangent = i + n * cos_i;
    const double tn = tangent.norm();
    const Vec3 expect = tn < 1e-12 ? i : tangent * (std::sin(theta_t) / tn) - n * std::cos(theta_t);
    worst = std::max({worst, std::abs(t->x - expect.x), std::abs(t->y - expect.y), std::abs(t->z - expect.z)});
  }
  // TIR threshold, probed right around the critical angle.
  int edge_ok = 0, edge_runs = 0;
  for (double n1 : {1.33, 1.5, 2.4}) {
    const double crit = std::asin(1.0 / n1);
    for (double d : {-1e-6, 1e-6}) {
      const double a = crit + d;
      const auto t = refract_ray({std::sin(a), 0.0, -std::cos(a)}, {0, 0, 1}, n1, 1.0);
      ++edge_runs;
      edge_ok += (std::sin(a) > 1.0 / n1) == !t;
    }
  }
  // Contraction on sampled fields.
  int drops = 0, contracted = 0;
  const std::pair<int, int> dims[] = {{64, 64}, {48, 64}, {128, 256}, {256, 512}, {1024, 2048}};
  for (int f = 0; f < 40; ++f) {
    const auto [h, w] = dims[f % 5];
    DropFieldConfig cfg;
    cfg.seed = 5000 + f;
    cfg.count_min = 5;
    cfg.count_max = 10;
    cfg.height_ratio_min = 0.3;
    cfg.radius_max_px = std::min(8.0, std::min(h, w) / 8.0);
    const CameraParams cam = default_camera_for_width(w);
    const RaindropField field = sample_drop_field(cfg, cam, h, w);
    for (const auto& d : field.drops) {
      std::vector<SourcePoint> src, own;
      for (int r = static_cast<int>(d.row - d.radius_px) - 1; r <= d.row + d.radius_px + 1; ++r) {
        for (int c = static_cast<int>(d.col - d.radius_px) - 1; c <= d.col + d.radius_px + 1; ++c) {
          if (!in_footprint(r, c, d)) continue;
          own.push_back({static_cast<double>(r), static_cast<double>(c)});
          if (auto s = trace_drop_pixel(r, c, d, cam, h, w)) src.push_back(*s);
        }
      }
      ++drops;
      contracted += hull_area(src) > hull_area(own);
    }
  }
  const bool ok = refracted > 0 && worst <= kC5SnellTol && tir_agree == tir_cases && edge_ok == edge_runs &&
                  contracted == drops;
  return {ok, fmt("Snell max |Δ| %.2e over %d refractions; TIR agrees %d/%d (+%d/%d at critical angle); "
                  "contraction %d/%d drops",
                  worst, refracted, tir_agree, tir_cases, edge_ok, edge_runs, contracted, drops)};
}

Outcome criterion6() {
  const auto t0 = std::chrono::steady_clock::now();
  DetectorNet full = build_detector(606);
  const std::size_t count = full.parameter_count();

  DetectorNet net = build_detector(607, DetectorConfig::miniature());
  std::mt19937_64 rng(608);
  std::normal_distribution<double> gauss(0.0, 1.0);
  // 16×16 input: the residual body then runs at 2×2, so its batch norms see
  // eight values per channel instead of two.
  nn::Tensor4 x(2, 3, 16, 16), y(2, 1, 16, 16);
  for (double& v : x.data) v = gauss(rng);
  for (double& v : y.data) v = (rng() & 1) ? 1.0 : 0.0;
  loss_and_gradients(net, x, y);
  const auto base_pattern = net.activation_pattern();
  std::vector<std::vector<double>> analytic;
  for (auto* p : net.params()) analytic.push_back(p->grad);

  // A central difference that straddles a LeakyReLU kink does not estimate
  // the derivative; such entries are re-probed with a step 10× smaller until
  // both probes keep the base sign pattern.
  double worst = 0.0;
  std::size_t checked = 0, reprobed = 0, on_kink = 0;
  auto params = net.params();
  for (std::size_t k = 0; k < params.size(); ++k) {
    for (std::size_t i = 0; i < params[k]->value.size(); ++i) {
      const double keep = params[k]->value[i];
      double eps = kC6Eps;
      std::optional<double> numeric;
      for (; eps >= kC6MinEps; eps /= 10) {
        params[k]->value[i] = keep + eps;
        const double up = loss_and_gradients(net, x, y);
        const bool up_smooth = net.activation_pattern() == base_pattern;
        params[k]->value[i] = keep - eps;
        const double down = loss_and_gradients(net, x, y);
        const bool down_smooth = net.activation_pattern() == base_pattern;
        if (up_smooth && down_smooth) {
          numeric = (up - down) / (2 * eps);
          break;
        }
      }
      params[k]->value[i] = keep;
      if (!numeric) {
        ++on_kink;
        continue;
      }
      reprobed += eps < kC6Eps;
      const double a = analytic[k][i];
      const double rel = std::abs(a - *numeric) / std::max({std::abs(a), std::abs(*numeric), kC6GradFloor});
      worst = std::max(worst, rel);
      ++checked;
    }
  }
  const double secs = seconds_since(t0);
  const long delta = static_cast<long>(count) - static_cast<long>(kReferenceParams);
  return {worst < kC6RelTol && on_kink == 0 && secs < kC6Seconds,
          fmt("max rel err %.2e over %zu miniature params (%zu re-probed below eps=1e-3 after a kink crossing, %zu "
              "unresolved); full detector has %zu params (%+ld vs 493k); %.1fs",
              worst, checked, reprobed, on_kink, count, delta, secs)};
}

std::vector<DetectorSample> synthetic_pairs(int n, std::uint64_t seed) {
  std::vector<DetectorSample> out;
  DropFieldConfig drops;
  const CameraParams cam = default_camera_for_width(64);
  for (int i = 0; i < n; ++i) {
    const Image clean = street_scene(64, 64, seed + i);
    drops.seed = seed + i;
    const auto r = render_drops(clean, sample_drop_field(drops, cam, 64, 64));
    out.push_back({r.rainy, r.mask});
  }
  return out;
}

double mean_iou(DetectorNet& net, const std::vector<DetectorSample>& data) {
  double sum = 0.0;
  for (const auto& s : data) sum += mask_score(binarize(detector_forward(net, s.rainy)), s.mask).iou;
  return sum / static_cast<double>(data.size());
}

Outcome criterion7() {
  const auto t0 = std::chrono::steady_clock::now();
  const auto train = synthetic_pairs(50, 7000);
  DetectorNet net = build_detector(707);
  const double iou_before = mean_iou(net, train);
  PipelineConfig toy;
  toy.apply_toy_profile();
  TrainConfig cfg = toy.detector_training;
  cfg.seed = 708;
  const auto res = train_detector(net, train, {}, cfg);
  const double iou_after = mean_iou(net, train);
  const double first = res.log.front().train_loss, last = res.log.back().train_loss;
  const double secs = seconds_since(t0);
  return {static_cast<int>(res.log.size()) == 20 && last < first && iou_after > iou_before && secs < kC7Seconds,
          fmt("%zu epochs (batch %d): loss %.4f -> %.4f; train IoU %.4f -> %.4f; %.1fs", res.log.size(),
              cfg.batch_size, first, last, iou_before, iou_after, secs)};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Outcome criterion8(const std::string& cli) {
  const fs::path dir = scratch_dir("determinism");
  RaindropFixtureSpec spec;
  spec.train = 4;
  spec.val = 2;
  spec.test = 10;
  spec.seed = 808;
  write_raindrop_fixture(dir / "data", spec);
  auto run = [&](const fs::path& out) {
    if (!cli.empty()) {
      const std::string cmd = "\"" + cli + "\" pipeline --toy --seed 809 --raindrop-root \"" + (dir / "data").string() +
                              "\" --out \"" + out.string() + "\" > /dev/null";
      return std::system(cmd.c_str()) == 0;
    }
    PipelineConfig cfg;
    cfg.apply_toy_profile();
    cfg.seed = 809;
    cfg.raindrop_root = dir / "data";
    cfg.output_dir = out;
    return run_pipeline(cfg).processed == 10;
  };
  if (!run(dir / "a") || !run(dir / "b")) return {false, "pipeline run failed"};
  int files = 0, identical = 0;
  for (const char* sub : {"masks", "recon"}) {
    for (const auto& e : fs::directory_iterator(dir / "a" / sub)) {
      ++files;
      identical += slurp(e.path()) == slurp(dir / "b" / sub / e.path().filename());
    }
  }
  const std::string csv = slurp(dir / "a" / "report.csv");
  const bool csv_same = !csv.empty() && csv == slurp(dir / "b" / "report.csv");
  const auto rows = std::count(csv.begin(), csv.end(), '\n') - 1;
  return {csv_same && files == 20 && identical == files && rows == 10,
          fmt("%s; report.csv identical: %s (%ld rows); images identical %d/%d", cli.empty() ? "library" : "cli",
              csv_same ? "yes" : "no", static_cast<long>(rows), identical, files)};
}

Outcome criterion9() {
  const PipelineConfig cfg;
  const auto j = config_to_json(cfg);
  const nlohmann::json snapshot = {
      {"diffusion_steps", 1000}, {"patch_size", 128},  {"epochs", 100},      {"batch_size", 32},
      {"learning_rate", 1e-3},   {"weight_decay", 1e-4}, {"lr_step_size", 5},
  };
  const nlohmann::json actual = {
      {"diffusion_steps", j["diffusion"]["steps"]},
      {"patch_size", j["diffusion"]["patch_size"]},
      {"epochs", j["detector_training"]["epochs"]},
      {"batch_size", j["detector_training"]["batch_size"]},
      {"learning_rate", j["detector_training"]["learning_rate"]},
      {"weight_decay", j["detector_training"]["weight_decay"]},
      {"lr_step_size", j["detector_training"]["lr_step_size"]},
  };
  const TrainConfig tc;
  const bool raw = cfg.diffusion_steps == 1000 && cfg.patch_size == 128 && tc.epochs == 100 && tc.batch_size == 32 &&
                   tc.learning_rate == 1e-3 && tc.weight_decay == 1e-4 && tc.lr_step_size == 5;
  return {snapshot == actual && raw, actual.dump()};
}

}  // namespace

int main(int argc, char** argv) {
  std::string cli;
  int only = 0;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) {
      only = std::atoi(argv[++i]);
    } else {
      cli = a;
    }
  }
  const std::vector<std::pair<int, std::function<Outcome()>>> criteria = {
      {1, criterion1}, {2, criterion2}, {3, criterion3}, {4, criterion4}, {5, criterion5},
      {6, criterion6}, {7, criterion7}, {8, [&] { return criterion8(cli); }}, {9, criterion9},
  };
  int failures = 0;
  for (const auto& [id, run] : criteria) {
    if (only && id != only) continue;
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("criterion %d: %s  %s\n", id, o.pass ? "PASS" : "FAIL", o.detail.c_str());
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
