#include "dropwiper/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>

#include "dropwiper/error.hpp"

namespace dropwiper {

namespace {

double psnr_from(const std::vector<double>& a, const std::vector<double>& b) {
  double sse = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) sse += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = sse / static_cast<double>(a.size());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

}  // namespace

double psnr(const Image& a, const Image& b) {
  if (a.height != b.height || a.width != b.width || a.channels != b.channels) {
    throw Error(ErrorCode::kShapeMismatch, "psnr: image shapes differ");
  }
  if (a.data.empty()) throw Error(ErrorCode::kInvalidArgument, "psnr: empty image");
  return psnr_from(a.data, b.data);
}

double psnr(const GrayImage& a, const GrayImage& b) {
  if (a.height != b.height || a.width != b.width) throw Error(ErrorCode::kShapeMismatch, "psnr: image shapes differ");
  if (a.data.empty()) throw Error(ErrorCode::kInvalidArgument, "psnr: empty image");
  return psnr_from(a.data, b.data);
}

double ssim(const GrayImage& a, const GrayImage& b) {
  constexpr int kWin = 8;
  constexpr double kC1 = 0.01 * 0.01;
  constexpr double kC2 = 0.03 * 0.03;
  if (a.height != b.height || a.width != b.width) throw Error(ErrorCode::kShapeMismatch, "ssim: image shapes differ");
  if (a.height < kWin || a.width < kWin) throw Error(ErrorCode::kInvalidArgument, "ssim: images must be at least 8x8");

  // Summed-area tables of a, b, a², b², ab give every window's moments in O(1).
  const int h = a.height, w = a.width;
  const std::size_t stride = static_cast<std::size_t>(w) + 1;
  std::vector<double> sa((h + 1) * stride), sb(sa.size()), saa(sa.size()), sbb(sa.size()), sab(sa.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double x = a.at(r, c), y = b.at(r, c);
      const std::size_t i = (r + 1) * stride + (c + 1);
      const std::size_t up = r * stride + (c + 1), left = (r + 1) * stride + c, diag = r * stride + c;
      sa[i] = x + sa[up] + sa[left] - sa[diag];
      sb[i] = y + sb[up] + sb[left] - sb[diag];
      saa[i] = x * x + saa[up] + saa[left] - saa[diag];
      sbb[i] = y * y + sbb[up] + sbb[left] - sbb[diag];
      sab[i] = x * y + sab[up] + sab[left] - sab[diag];
    }
  }
  auto box = [&](const std::vector<double>& s, int r, int c) {
    return s[(r + kWin) * stride + (c + kWin)] - s[r * stride + (c + kWin)] - s[(r + kWin) * stride + c] +
           s[r * stride + c];
  };
  const double n = kWin * kWin;
  double total = 0.0;
  for (int r = 0; r + kWin <= h; ++r) {
    for (int c = 0; c + kWin <= w; ++c) {
      const double mx = box(sa, r, c) / n, my = box(sb, r, c) / n;
      const double vx = box(saa, r, c) / n - mx * mx;
      const double vy = box(sbb, r, c) / n - my * my;
      const double cxy = box(sab, r, c) / n - mx * my;
      total += ((2 * mx * my + kC1) * (2 * cxy + kC2)) / ((mx * mx + my * my + kC1) * (vx + vy + kC2));
    }
  }
  return total / static_cast<double>((h - kWin + 1) * (w - kWin + 1));
}

MaskScore mask_score(const Mask& pred, const Mask& truth) {
  if (pred.height != truth.height || pred.width != truth.width) {
    throw Error(ErrorCode::kShapeMismatch, "mask_score: mask shapes differ");
  }
  MaskScore s;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const bool p = pred.data[i] != 0, t = truth.data[i] != 0;
    s.true_positives += p && t;
    s.false_positives += p && !t;
    s.false_negatives += !p && t;
  }
  const double tp = static_cast<double>(s.true_positives);
  const double fp = static_cast<double>(s.false_positives);
  const double fn = static_cast<double>(s.false_negatives);
  s.iou = (tp + fp + fn) == 0.0 ? 1.0 : tp / (tp + fp + fn);
  s.precision = (tp + fp) == 0.0 ? 1.0 : tp / (tp + fp);
  s.recall = (tp + fn) == 0.0 ? 1.0 : tp / (tp + fn);
  return s;
}

std::string format_eval_csv(const std::vector<EvalRow>& rows) {
  std::string out = "image_id,psnr,ssim,iou,precision,recall\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), ",%.6f,%.6f", r.psnr, r.ssim);
    out += r.image_id + buf;
    if (r.mask) {
      std::snprintf(buf, sizeof(buf), ",%.6f,%.6f,%.6f\n", r.mask->iou, r.mask->precision, r.mask->recall);
      out += buf;
    } else {
      out += ",,,\n";
    }
  }
  return out;
}

void write_eval_csv(const std::vector<EvalRow>& rows, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kUnwritablePath, "cannot write " + path.string());
  out << format_eval_csv(rows);
}

}  // namespace dropwiper
