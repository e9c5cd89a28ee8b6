#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <random>
#include <span>
#include <vector>

#include "dropwiper/image.hpp"

namespace dropwiper {

using Rng = std::mt19937_64;
using Tensor = std::vector<double>;

/// Independent chains derive their streams as root seed + chain index.
inline std::uint64_t chain_seed(std::uint64_t root, std::uint64_t index) { return root + index; }

/// β_t, α_t = 1 − β_t and ᾱ_t = ∏_{s≤t} α_s for t = 1..T (stored at index t − 1).
struct NoiseSchedule {
  int steps = 0;
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  double beta_at(int t) const { return beta[t - 1]; }
  double alpha_at(int t) const { return alpha[t - 1]; }
  /// ᾱ_0 = 1, so t = 0 is the identity in forward_sample.
  double alpha_bar_at(int t) const { return t == 0 ? 1.0 : alpha_bar[t - 1]; }
};

/// Linear β from beta_start to beta_end inclusive.
NoiseSchedule make_schedule(int steps, double beta_start = 1e-4, double beta_end = 0.02);

/// Linear schedule whose endpoints are the T = 1000 defaults scaled by
/// 1000 / steps, so ᾱ_T stays near zero at small step counts.
NoiseSchedule make_scaled_schedule(int steps);

/// Noise predictor ε̂(x_t, t). Implementations must be safe to call
/// concurrently from several chains.
class Denoiser {
 public:
  virtual ~Denoiser() = default;
  virtual Tensor predict_noise(std::span<const double> x_t, int t) const = 0;
};

/// Single forward step: √(1 − β_t)·x + √β_t·z.
Tensor forward_step(std::span<const double> x_prev, int t, const NoiseSchedule& sched, Rng& rng);

/// Direct jump to step t: √ᾱ_t·x0 + √(1 − ᾱ_t)·z. t = 0 returns x0 and draws nothing.
Tensor forward_sample(std::span<const double> x0, int t, const NoiseSchedule& sched, Rng& rng);

/// μ_θ(x_t, t) under the ε-parameterization.
Tensor reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                    const NoiseSchedule& sched);

/// μ_θ + σ_t·z with σ_t² = β_t and σ_1 = 0. `sigma_scale` multiplies σ_t
/// (0 gives the deterministic mean). Throws kNonFinite on a bad prediction.
Tensor reverse_step(std::span<const double> x_t, int t, const Denoiser& den, const NoiseSchedule& sched,
                    Rng& rng, double sigma_scale = 1.0);

/// Full ancestral chain from x_T ~ N(0, I) down to x_0.
Tensor sample_unconditional(std::size_t dim, const Denoiser& den, const NoiseSchedule& sched, Rng& rng);

/// Optimal ε-predictor for data x0 ~ N(mu0, sigma0²·I).
class AnalyticGaussianDenoiser final : public Denoiser {
 public:
  AnalyticGaussianDenoiser(Tensor mu0, double sigma0, NoiseSchedule sched);

  Tensor predict_noise(std::span<const double> x_t, int t) const override;
  /// E[x0 | x_t].
  Tensor posterior_mean(std::span<const double> x_t, int t) const;

 private:
  Tensor mu0_;
  double sigma0_;
  NoiseSchedule sched_;
};

std::shared_ptr<AnalyticGaussianDenoiser> analytic_gaussian_denoiser(Tensor mu0, double sigma0,
                                                                     const NoiseSchedule& sched);

struct InpaintOptions {
  // Uses the combination x = m⊙known + (1−m)⊙unknown instead of the default
  // where m marks the missing pixels.
  bool swap_mask_roles = false;
};

/// Masked reverse diffusion: pixels with m = 1 come from the reverse chain,
/// pixels with m = 0 from forward-diffused x0, and x0 itself at the last step.
Tensor inpaint_sample(std::span<const double> x0, std::span<const double> mask, const Denoiser& den,
                      const NoiseSchedule& sched, Rng& rng, const InpaintOptions& opts = {});

Tensor mask_to_tensor(const Mask& m);

/// [0,1] intensities to the [−1,1] diffusion range, and back (clamped).
Tensor image_to_tensor(const GrayImage& g);
Tensor image_to_tensor(const Image& img);
GrayImage tensor_to_gray(std::span<const double> x, int height, int width);
Image tensor_to_image(std::span<const double> x, int height, int width, int channels);

// ---------------------------------------------------------------------------
// Toy learned denoiser

struct MlpConfig {
  int input_dim = 0;  // flattened sample size; t / T is appended as one extra input
  std::vector<int> hidden = {256, 256};
  int steps = 1000;   // T used for the time input
};

class MlpDenoiser final : public Denoiser {
 public:
  MlpDenoiser(MlpConfig cfg, std::uint64_t seed);

  Tensor predict_noise(std::span<const double> x_t, int t) const override;

  const MlpConfig& config() const { return cfg_; }
  std::size_t parameter_count() const;

  struct Layer {
    int in = 0;
    int out = 0;
    std::vector<double> weight;  // out × in, row-major
    std::vector<double> bias;
  };
  std::vector<Layer>& layers() { return layers_; }
  const std::vector<Layer>& layers() const { return layers_; }

  void save(const std::filesystem::path& path) const;
  static MlpDenoiser load(const std::filesystem::path& path);

 private:
  MlpConfig cfg_;
  std::vector<Layer> layers_;
};

struct DenoiserTrainConfig {
  int steps = 2000;
  double learning_rate = 1e-4;
  double weight_decay = 0.0;
  int batch_size = 16;
  std::uint64_t seed = 0;
};

struct TrainedDenoiser {
  std::shared_ptr<MlpDenoiser> model;
  std::vector<double> loss_curve;  // per optimizer step
};

/// Minimizes E‖ε − ε̂(√ᾱ_t x0 + √(1−ᾱ_t) ε, t)‖² over random (x0, t, ε).
TrainedDenoiser train_denoiser(const std::vector<Tensor>& dataset, const MlpConfig& arch,
                               const DenoiserTrainConfig& cfg, const NoiseSchedule& sched);

/// Mean squared ε-prediction error on fresh (x0, t, ε) draws.
double evaluate_denoiser_loss(const Denoiser& den, const std::vector<Tensor>& dataset,
                              const NoiseSchedule& sched, int samples, std::uint64_t seed);

void write_loss_csv(const std::vector<double>& losses, const std::filesystem::path& path);

}  // namespace dropwiper
