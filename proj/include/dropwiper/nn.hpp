#pragma once

// Minimal batched NCHW layers with hand-written backward passes. Each layer
// caches what its backward pass needs during forward(); backward() must be
// called at most once per forward() and accumulates into Param::grad.

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace dropwiper::nn {

struct Tensor4 {
  int n = 0, c = 0, h = 0, w = 0;
  std::vector<double> data;

  Tensor4() = default;
  Tensor4(int n_, int c_, int h_, int w_, double fill = 0.0)
      : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

  std::size_t plane() const { return static_cast<std::size_t>(h) * w; }
  std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
  double* sample(int i) { return data.data() + i * sample_size(); }
  const double* sample(int i) const { return data.data() + i * sample_size(); }
  double& at(int i, int ch, int r, int col) { return data[((static_cast<std::size_t>(i) * c + ch) * h + r) * w + col]; }
  double at(int i, int ch, int r, int col) const {
    return data[((static_cast<std::size_t>(i) * c + ch) * h + r) * w + col];
  }
  bool same_shape(const Tensor4& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
};

struct Param {
  std::string name;
  std::vector<double> value;
  std::vector<double> grad;

  void resize(std::size_t n) {
    value.assign(n, 0.0);
    grad.assign(n, 0.0);
  }
  void zero_grad() { std::fill(grad.begin(), grad.end(), 0.0); }
};

/// Kaiming-uniform with a = √5 (bound 1/√fan_in), the PyTorch layer default.
void kaiming_uniform(std::vector<double>& w, int fan_in, std::mt19937_64& rng);

class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int padding, std::mt19937_64& rng);

  Tensor4 forward(const Tensor4& x);
  Tensor4 backward(const Tensor4& grad_out);
  std::vector<Param*> params() { return {&weight, &bias}; }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int kernel() const { return k_; }
  int stride() const { return stride_; }
  int padding() const { return pad_; }

  Param weight;  // out × in × k × k
  Param bias;

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor4 input_;
};

class ConvTranspose2d {
 public:
  ConvTranspose2d() = default;
  ConvTranspose2d(std::string name, int in_ch, int out_ch, int kernel, int stride, int padding,
                  std::mt19937_64& rng);

  Tensor4 forward(const Tensor4& x);
  Tensor4 backward(const Tensor4& grad_out);
  std::vector<Param*> params() { return {&weight, &bias}; }

  Param weight;  // in × out × k × k
  Param bias;

 private:
  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Tensor4 input_;
};

/// Train mode normalizes with batch statistics and updates the running
/// averages (momentum 0.1, unbiased variance); eval mode uses the running
/// averages and is deterministic.
class BatchNorm2d {
 public:
  BatchNorm2d() = default;
  BatchNorm2d(std::string name, int channels);

  Tensor4 forward(const Tensor4& x, bool training);
  Tensor4 backward(const Tensor4& grad_out);
  std::vector<Param*> params() { return {&gamma, &beta}; }

  Param gamma;
  Param beta;
  std::vector<double> running_mean;
  std::vector<double> running_var;
  double momentum = 0.1;
  double eps = 1e-5;

 private:
  bool last_training_ = false;
  Tensor4 xhat_;
  std::vector<double> inv_std_;
};

class LeakyReLU {
 public:
  explicit LeakyReLU(double slope = 0.01) : slope_(slope) {}

  Tensor4 forward(const Tensor4& x);
  Tensor4 backward(const Tensor4& grad_out) const;
  /// Sign pattern of the last forward input (1 = positive branch).
  const std::vector<std::uint8_t>& positive() const { return positive_; }

 private:
  double slope_;
  std::vector<std::uint8_t> positive_;
};

double sigmoid(double z);

/// Mean binary cross-entropy of sigmoid(logits) against {0,1} targets, with
/// probabilities clamped to [1e-7, 1 − 1e-7]. If `grad_logits` is non-null it
/// receives dLoss/dlogit (zero where the clamp is active).
double sigmoid_bce(std::span<const double> logits, std::span<const double> targets,
                   std::vector<double>* grad_logits);

/// Adam moments with decoupled weight decay.
class AdamW {
 public:
  AdamW(double lr, double weight_decay, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
      : lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {}

  void step(const std::vector<Param*>& params);
  void set_learning_rate(double lr) { lr_ = lr; }
  double learning_rate() const { return lr_; }

 private:
  double lr_, wd_, beta1_, beta2_, eps_;
  long t_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

}  // namespace dropwiper::nn
