#include "dropwiper/nn.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>

#include "dropwiper/error.hpp"

namespace dropwiper::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

int conv_out_size(int in, int k, int stride, int pad) { return (in + 2 * pad - k) / stride + 1; }

// cols[(ch·k + ki)·k + kj][oy·out_w + ox] = x[ch][oy·s − p + ki][ox·s − p + kj] (0 outside).
void im2col(const double* x, int channels, int h, int w, int k, int stride, int pad, int out_h, int out_w,
            double* cols) {
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  for (int ch = 0; ch < channels; ++ch) {
    const double* plane = x + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        double* row = cols + ((static_cast<std::size_t>(ch) * k + ki) * k + kj) * p;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          double* dst = row + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= h) {
            std::fill(dst, dst + out_w, 0.0);
            continue;
          }
          const double* src = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            dst[ox] = (ix >= 0 && ix < w) ? src[ix] : 0.0;
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-adds cols back into x.
void col2im(const double* cols, int channels, int h, int w, int k, int stride, int pad, int out_h, int out_w,
            double* x) {
  const std::size_t p = static_cast<std::size_t>(out_h) * out_w;
  for (int ch = 0; ch < channels; ++ch) {
    double* plane = x + static_cast<std::size_t>(ch) * h * w;
    for (int ki = 0; ki < k; ++ki) {
      for (int kj = 0; kj < k; ++kj) {
        const double* row = cols + ((static_cast<std::size_t>(ch) * k + ki) * k + kj) * p;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * stride - pad + ki;
          if (iy < 0 || iy >= h) continue;
          const double* src = row + static_cast<std::size_t>(oy) * out_w;
          double* dst = plane + static_cast<std::size_t>(iy) * w;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * stride - pad + kj;
            if (ix >= 0 && ix < w) dst[ix] += src[ox];
          }
        }
      }
    }
  }
}

}  // namespace

void kaiming_uniform(std::vector<double>& w, int fan_in, std::mt19937_64& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (double& v : w) v = dist(rng);
}

// ---------------------------------------------------------------------------

Conv2d::Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int padding, std::mt19937_64& rng)
    : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(padding) {
  weight.name = name + ".weight";
  bias.name = name + ".bias";
  weight.resize(static_cast<std::size_t>(out_ch) * in_ch * kernel * kernel);
  bias.resize(out_ch);
  kaiming_uniform(weight.value, in_ch * kernel * kernel, rng);
}

Tensor4 Conv2d::forward(const Tensor4& x) {
  if (x.c != in_) throw Error(ErrorCode::kShapeMismatch, weight.name + ": channel mismatch");
  const int oh = conv_out_size(x.h, k_, stride_, pad_);
  const int ow = conv_out_size(x.w, k_, stride_, pad_);
  input_ = x;
  Tensor4 y(x.n, out_, oh, ow);
  const int kk = in_ * k_ * k_;
  const int p = oh * ow;
  std::vector<double> cols(static_cast<std::size_t>(kk) * p);
  ConstMapMat wmat(weight.value.data(), out_, kk);
  const Eigen::Map<const Eigen::VectorXd> b(bias.value.data(), out_);
  for (int i = 0; i < x.n; ++i) {
    im2col(x.sample(i), in_, x.h, x.w, k_, stride_, pad_, oh, ow, cols.data());
    MapMat out(y.sample(i), out_, p);
    out.noalias() = wmat * ConstMapMat(cols.data(), kk, p);
    out.colwise() += b;
  }
  return y;
}

Tensor4 Conv2d::backward(const Tensor4& g) {
  const Tensor4& x = input_;
  const int kk = in_ * k_ * k_;
  const int p = g.h * g.w;
  Tensor4 dx(x.n, x.c, x.h, x.w);
  std::vector<double> cols(static_cast<std::size_t>(kk) * p);
  std::vector<double> dcols(cols.size());
  ConstMapMat wmat(weight.value.data(), out_, kk);
  MapMat dw(weight.grad.data(), out_, kk);
  Eigen::Map<Eigen::VectorXd> db(bias.grad.data(), out_);
  for (int i = 0; i < x.n; ++i) {
    ConstMapMat gm(g.sample(i), out_, p);
    im2col(x.sample(i), in_, x.h, x.w, k_, stride_, pad_, g.h, g.w, cols.data());
    dw.noalias() += gm * ConstMapMat(cols.data(), kk, p).transpose();
    db += gm.rowwise().sum();
    MapMat(dcols.data(), kk, p).noalias() = wmat.transpose() * gm;
    col2im(dcols.data(), in_, x.h, x.w, k_, stride_, pad_, g.h, g.w, dx.sample(i));
  }
  return dx;
}

// ---------------------------------------------------------------------------

ConvTranspose2d::ConvTranspose2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int padding,
                                 std::mt19937_64& rng)
    : in_(in_ch), out_(out_ch), k_(kernel), stride_(stride), pad_(padding) {
  weight.name = name + ".weight";
  bias.name = name + ".bias";
  weight.resize(static_cast<std::size_t>(in_ch) * out_ch * kernel * kernel);
  bias.resize(out_ch);
  kaiming_uniform(weight.value, out_ch * kernel * kernel, rng);
}

Tensor4 ConvTranspose2d::forward(const Tensor4& x) {
  if (x.c != in_) throw Error(ErrorCode::kShapeMismatch, weight.name + ": channel mismatch");
  const int oh = (x.h - 1) * stride_ - 2 * pad_ + k_;
  const int ow = (x.w - 1) * stride_ - 2 * pad_ + k_;
  input_ = x;
  Tensor4 y(x.n, out_, oh, ow);
  const int okk = out_ * k_ * k_;
  const int p = x.h * x.w;
  std::vector<double> cols(static_cast<std::size_t>(okk) * p);
  ConstMapMat wmat(weight.value.data(), in_, okk);
  for (int i = 0; i < x.n; ++i) {
    MapMat(cols.data(), okk, p).noalias() = wmat.transpose() * ConstMapMat(x.sample(i), in_, p);
    col2im(cols.data(), out_, oh, ow, k_, stride_, pad_, x.h, x.w, y.sample(i));
    for (int ch = 0; ch < out_; ++ch) {
      double* plane = y.sample(i) + ch * y.plane();
      std::for_each(plane, plane + y.plane(), [b = bias.value[ch]](double& v) { v += b; });
    }
  }
  return y;
}

Tensor4 ConvTranspose2d::backward(const Tensor4& g) {
  const Tensor4& x = input_;
  const int okk = out_ * k_ * k_;
  const int p = x.h * x.w;
  Tensor4 dx(x.n, x.c, x.h, x.w);
  std::vector<double> gcols(static_cast<std::size_t>(okk) * p);
  ConstMapMat wmat(weight.value.data(), in_, okk);
  MapMat dw(weight.grad.data(), in_, okk);
  for (int i = 0; i < x.n; ++i) {
    im2col(g.sample(i), out_, g.h, g.w, k_, stride_, pad_, x.h, x.w, gcols.data());
    ConstMapMat gc(gcols.data(), okk, p);
    MapMat(dx.sample(i), in_, p).noalias() = wmat * gc;
    dw.noalias() += ConstMapMat(x.sample(i), in_, p) * gc.transpose();
    for (int ch = 0; ch < out_; ++ch) {
      const double* plane = g.sample(i) + ch * g.plane();
      double s = 0.0;
      for (std::size_t j = 0; j < g.plane(); ++j) s += plane[j];
      bias.grad[ch] += s;
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

BatchNorm2d::BatchNorm2d(std::string name, int channels)
    : running_mean(channels, 0.0), running_var(channels, 1.0) {
  gamma.name = name + ".weight";
  beta.name = name + ".bias";
  gamma.resize(channels);
  beta.resize(channels);
  std::fill(gamma.value.begin(), gamma.value.end(), 1.0);
}

Tensor4 BatchNorm2d::forward(const Tensor4& x, bool training) {
  const int channels = static_cast<int>(gamma.value.size());
  if (x.c != channels) throw Error(ErrorCode::kShapeMismatch, gamma.name + ": channel mismatch");
  last_training_ = training;
  xhat_ = Tensor4(x.n, x.c, x.h, x.w);
  inv_std_.assign(channels, 0.0);
  Tensor4 y(x.n, x.c, x.h, x.w);
  const std::size_t plane = x.plane();
  const double m = static_cast<double>(x.n) * static_cast<double>(plane);
  for (int ch = 0; ch < channels; ++ch) {
    double mean = running_mean[ch];
    double var = running_var[ch];
    if (training) {
      double s = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const double* src = x.sample(i) + ch * plane;
        for (std::size_t j = 0; j < plane; ++j) s += src[j];
      }
      mean = s / m;
      double ss = 0.0;
      for (int i = 0; i < x.n; ++i) {
        const double* src = x.sample(i) + ch * plane;
        for (std::size_t j = 0; j < plane; ++j) ss += (src[j] - mean) * (src[j] - mean);
      }
      var = ss / m;
      const double unbiased = m > 1.0 ? ss / (m - 1.0) : var;
      running_mean[ch] = (1.0 - momentum) * running_mean[ch] + momentum * mean;
      running_var[ch] = (1.0 - momentum) * running_var[ch] + momentum * unbiased;
    }
    const double inv = 1.0 / std::sqrt(var + eps);
    inv_std_[ch] = inv;
    for (int i = 0; i < x.n; ++i) {
      const double* src = x.sample(i) + ch * plane;
      double* xh = xhat_.sample(i) + ch * plane;
      double* dst = y.sample(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        xh[j] = (src[j] - mean) * inv;
        dst[j] = gamma.value[ch] * xh[j] + beta.value[ch];
      }
    }
  }
  return y;
}

Tensor4 BatchNorm2d::backward(const Tensor4& g) {
  const int channels = static_cast<int>(gamma.value.size());
  Tensor4 dx(g.n, g.c, g.h, g.w);
  const std::size_t plane = g.plane();
  const double m = static_cast<double>(g.n) * static_cast<double>(plane);
  for (int ch = 0; ch < channels; ++ch) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (int i = 0; i < g.n; ++i) {
      const double* gp = g.sample(i) + ch * plane;
      const double* xh = xhat_.sample(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        sum_g += gp[j];
        sum_gx += gp[j] * xh[j];
      }
    }
    gamma.grad[ch] += sum_gx;
    beta.grad[ch] += sum_g;
    const double scale = gamma.value[ch] * inv_std_[ch];
    for (int i = 0; i < g.n; ++i) {
      const double* gp = g.sample(i) + ch * plane;
      const double* xh = xhat_.sample(i) + ch * plane;
      double* d = dx.sample(i) + ch * plane;
      for (std::size_t j = 0; j < plane; ++j) {
        d[j] = last_training_ ? scale * (gp[j] - sum_g / m - xh[j] * sum_gx / m) : scale * gp[j];
      }
    }
  }
  return dx;
}

// ---------------------------------------------------------------------------

Tensor4 LeakyReLU::forward(const Tensor4& x) {
  Tensor4 y = x;
  positive_.resize(x.data.size());
  for (std::size_t i = 0; i < y.data.size(); ++i) {
    positive_[i] = y.data[i] > 0.0;
    if (!positive_[i]) y.data[i] *= slope_;
  }
  return y;
}

Tensor4 LeakyReLU::backward(const Tensor4& g) const {
  Tensor4 dx = g;
  for (std::size_t i = 0; i < dx.data.size(); ++i) {
    if (!positive_[i]) dx.data[i] *= slope_;
  }
  return dx;
}

double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double sigmoid_bce(std::span<const double> logits, std::span<const double> targets,
                   std::vector<double>* grad_logits) {
  if (logits.size() != targets.size()) throw Error(ErrorCode::kShapeMismatch, "bce: size mismatch");
  constexpr double kLo = 1e-7;
  constexpr double kHi = 1.0 - 1e-7;
  const double n = static_cast<double>(logits.size());
  if (grad_logits) grad_logits->assign(logits.size(), 0.0);
  double loss = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double p = sigmoid(logits[i]);
    const double pc = std::clamp(p, kLo, kHi);
    const double y = targets[i];
    loss -= y * std::log(pc) + (1.0 - y) * std::log(1.0 - pc);
    if (grad_logits && p > kLo && p < kHi) (*grad_logits)[i] = (p - y) / n;
  }
  return loss / n;
}

// ---------------------------------------------------------------------------

void AdamW::step(const std::vector<Param*>& params) {
  if (m_.empty()) {
    for (const Param* p : params) {
      m_.emplace_back(p->value.size(), 0.0);
      v_.emplace_back(p->value.size(), 0.0);
    }
  }
  if (m_.size() != params.size()) throw Error(ErrorCode::kInvalidArgument, "AdamW: parameter list changed");
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t k = 0; k < params.size(); ++k) {
    Param& p = *params[k];
    auto& m = m_[k];
    auto& v = v_[k];
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.value[i] -= lr_ * wd_ * p.value[i];
      m[i] = beta1_ * m[i] + (1.0 - beta1_) * g;
      v[i] = beta2_ * v[i] + (1.0 - beta2_) * g * g;
      p.value[i] -= lr_ * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + eps_);
    }
  }
}

}  // namespace dropwiper::nn
