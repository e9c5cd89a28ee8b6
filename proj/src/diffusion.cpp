#include "dropwiper/diffusion.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <fstream>
#include <string>

#include "dropwiper/checkpoint.hpp"
#include "dropwiper/error.hpp"
#include "dropwiper/nn.hpp"

namespace dropwiper {

NoiseSchedule make_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw Error(ErrorCode::kInvalidArgument, "schedule needs at least one step");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw Error(ErrorCode::kInvalidArgument, "schedule needs 0 < beta_start <= beta_end < 1");
  }
  NoiseSchedule s;
  s.steps = steps;
  s.beta.resize(steps);
  s.alpha.resize(steps);
  s.alpha_bar.resize(steps);
  double prod = 1.0;
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.beta[i] = beta_start + (beta_end - beta_start) * frac;
    s.alpha[i] = 1.0 - s.beta[i];
    prod *= s.alpha[i];
    s.alpha_bar[i] = prod;
  }
  return s;
}

NoiseSchedule make_scaled_schedule(int steps) {
  const double scale = 1000.0 / steps;
  return make_schedule(steps, 1e-4 * scale, std::min(0.02 * scale, 0.999));
}

namespace {

void check_step(int t, int lo, const NoiseSchedule& sched) {
  if (t < lo || t > sched.steps) {
    throw Error(ErrorCode::kOutOfRange, "step " + std::to_string(t) + " outside [" + std::to_string(lo) + ", " +
                                            std::to_string(sched.steps) + "]");
  }
}

}  // namespace

Tensor forward_step(std::span<const double> x_prev, int t, const NoiseSchedule& sched, Rng& rng) {
  check_step(t, 1, sched);
  std::normal_distribution<double> normal;
  const double keep = std::sqrt(1.0 - sched.beta_at(t));
  const double noise = std::sqrt(sched.beta_at(t));
  Tensor out(x_prev.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x_prev[i] + noise * normal(rng);
  return out;
}

Tensor forward_sample(std::span<const double> x0, int t, const NoiseSchedule& sched, Rng& rng) {
  check_step(t, 0, sched);
  if (t == 0) return Tensor(x0.begin(), x0.end());
  std::normal_distribution<double> normal;
  const double ab = sched.alpha_bar_at(t);
  const double keep = std::sqrt(ab);
  const double noise = std::sqrt(1.0 - ab);
  Tensor out(x0.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = keep * x0[i] + noise * normal(rng);
  return out;
}

Tensor reverse_mean(std::span<const double> x_t, std::span<const double> eps_hat, int t,
                    const NoiseSchedule& sched) {
  check_step(t, 1, sched);
  if (eps_hat.size() != x_t.size()) throw Error(ErrorCode::kShapeMismatch, "denoiser output shape differs from input");
  const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha_at(t));
  const double coef = sched.beta_at(t) / std::sqrt(1.0 - sched.alpha_bar_at(t));
  Tensor mu(x_t.size());
  for (std::size_t i = 0; i < mu.size(); ++i) mu[i] = inv_sqrt_alpha * (x_t[i] - coef * eps_hat[i]);
  return mu;
}

Tensor reverse_step(std::span<const double> x_t, int t, const Denoiser& den, const NoiseSchedule& sched, Rng& rng,
                    double sigma_scale) {
  check_step(t, 1, sched);
  const Tensor eps = den.predict_noise(x_t, t);
  for (double v : eps) {
    if (!std::isfinite(v)) throw Error(ErrorCode::kNonFinite, "denoiser returned a non-finite value at t=" + std::to_string(t));
  }
  Tensor x = reverse_mean(x_t, eps, t, sched);
  if (t > 1 && sigma_scale != 0.0) {
    std::normal_distribution<double> normal;
    const double sigma = sigma_scale * std::sqrt(sched.beta_at(t));
    for (double& v : x) v += sigma * normal(rng);
  }
  return x;
}

Tensor sample_unconditional(std::size_t dim, const Denoiser& den, const NoiseSchedule& sched, Rng& rng) {
  std::normal_distribution<double> normal;
  Tensor x(dim);
  for (double& v : x) v = normal(rng);
  for (int t = sched.steps; t >= 1; --t) x = reverse_step(x, t, den, sched, rng);
  return x;
}

// ---------------------------------------------------------------------------

AnalyticGaussianDenoiser::AnalyticGaussianDenoiser(Tensor mu0, double sigma0, NoiseSchedule sched)
    : mu0_(std::move(mu0)), sigma0_(sigma0), sched_(std::move(sched)) {
  if (!(sigma0 > 0.0)) throw Error(ErrorCode::kInvalidArgument, "sigma0 must be > 0");
}

Tensor AnalyticGaussianDenoiser::posterior_mean(std::span<const double> x_t, int t) const {
  if (x_t.size() != mu0_.size()) throw Error(ErrorCode::kShapeMismatch, "analytic denoiser: shape mismatch");
  const double ab = sched_.alpha_bar_at(t);
  const double s2 = sigma0_ * sigma0_;
  const double denom = ab * s2 + 1.0 - ab;
  Tensor x0(x_t.size());
  for (std::size_t i = 0; i < x0.size(); ++i) x0[i] = (s2 * std::sqrt(ab) * x_t[i] + (1.0 - ab) * mu0_[i]) / denom;
  return x0;
}

Tensor AnalyticGaussianDenoiser::predict_noise(std::span<const double> x_t, int t) const {
  if (t < 1 || t > sched_.steps) throw Error(ErrorCode::kOutOfRange, "analytic denoiser: step out of range");
  const Tensor x0 = posterior_mean(x_t, t);
  const double ab = sched_.alpha_bar_at(t);
  const double sab = std::sqrt(ab);
  const double inv = 1.0 / std::sqrt(1.0 - ab);
  Tensor eps(x_t.size());
  for (std::size_t i = 0; i < eps.size(); ++i) eps[i] = (x_t[i] - sab * x0[i]) * inv;
  return eps;
}

std::shared_ptr<AnalyticGaussianDenoiser> analytic_gaussian_denoiser(Tensor mu0, double sigma0,
                                                                     const NoiseSchedule& sched) {
  return std::make_shared<AnalyticGaussianDenoiser>(std::move(mu0), sigma0, sched);
}

// ---------------------------------------------------------------------------

Tensor inpaint_sample(std::span<const double> x0, std::span<const double> mask, const Denoiser& den,
                      const NoiseSchedule& sched, Rng& rng, const InpaintOptions& opts) {
  if (x0.size() != mask.size()) throw Error(ErrorCode::kShapeMismatch, "inpaint: image and mask sizes differ");
  for (double m : mask) {
    if (m != 0.0 && m != 1.0) throw Error(ErrorCode::kInvalidArgument, "inpaint: mask must be binary");
  }
  std::normal_distribution<double> normal;
  Tensor x(x0.size());
  for (double& v : x) v = normal(rng);
  for (int t = sched.steps; t >= 1; --t) {
    const Tensor unknown = reverse_step(x, t, den, sched, rng);
    const Tensor known = forward_sample(x0, t - 1, sched, rng);
    for (std::size_t i = 0; i < x.size(); ++i) {
      const bool missing = opts.swap_mask_roles ? mask[i] == 0.0 : mask[i] == 1.0;
      x[i] = missing ? unknown[i] : known[i];
    }
  }
  return x;
}

Tensor mask_to_tensor(const Mask& m) { return Tensor(m.data.begin(), m.data.end()); }

Tensor image_to_tensor(const GrayImage& g) {
  Tensor x(g.data.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * g.data[i] - 1.0;
  return x;
}

Tensor image_to_tensor(const Image& img) {
  Tensor x(img.data.size());
  for (std::size_t i = 0; i < x.size(); ++i) x[i] = 2.0 * img.data[i] - 1.0;
  return x;
}

GrayImage tensor_to_gray(std::span<const double> x, int height, int width) {
  if (x.size() != static_cast<std::size_t>(height) * width) throw Error(ErrorCode::kShapeMismatch, "tensor size");
  GrayImage g(height, width);
  for (std::size_t i = 0; i < x.size(); ++i) g.data[i] = clamp01((x[i] + 1.0) / 2.0);
  return g;
}

Image tensor_to_image(std::span<const double> x, int height, int width, int channels) {
  if (x.size() != static_cast<std::size_t>(height) * width * channels) throw Error(ErrorCode::kShapeMismatch, "tensor size");
  Image img(height, width, channels);
  for (std::size_t i = 0; i < x.size(); ++i) img.data[i] = clamp01((x[i] + 1.0) / 2.0);
  return img;
}

// ---------------------------------------------------------------------------
// MLP denoiser

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMapMat = Eigen::Map<const RowMat>;

double silu(double z) { return z * nn::sigmoid(z); }
double silu_grad(double z) {
  const double s = nn::sigmoid(z);
  return s * (1.0 + z * (1.0 - s));
}

std::vector<int> layer_sizes(const MlpConfig& cfg) {
  std::vector<int> sizes{cfg.input_dim + 1};
  sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
  sizes.push_back(cfg.input_dim);
  return sizes;
}

void validate(const MlpConfig& cfg) {
  if (cfg.input_dim <= 0 || cfg.steps <= 0) throw Error(ErrorCode::kInvalidArgument, "mlp: input_dim and steps must be > 0");
  for (int h : cfg.hidden) {
    if (h <= 0) throw Error(ErrorCode::kInvalidArgument, "mlp: hidden widths must be > 0");
  }
}

// Batched forward over columns; keeps pre-activations for backprop.
struct MlpPass {
  std::vector<Eigen::MatrixXd> acts;  // acts[0] = input, acts[l+1] = layer l output
  std::vector<Eigen::MatrixXd> pre;   // pre-activation of each layer
};

MlpPass mlp_forward(const std::vector<MlpDenoiser::Layer>& layers, Eigen::MatrixXd input) {
  MlpPass pass;
  pass.acts.push_back(std::move(input));
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    Eigen::MatrixXd z = ConstMapMat(L.weight.data(), L.out, L.in) * pass.acts.back();
    z.colwise() += Eigen::Map<const Eigen::VectorXd>(L.bias.data(), L.out);
    pass.pre.push_back(z);
    if (l + 1 < layers.size()) z = z.unaryExpr(&silu);
    pass.acts.push_back(std::move(z));
  }
  return pass;
}

}  // namespace

MlpDenoiser::MlpDenoiser(MlpConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  validate(cfg_);
  Rng rng(seed);
  const auto sizes = layer_sizes(cfg_);
  for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
    Layer L;
    L.in = sizes[l];
    L.out = sizes[l + 1];
    L.weight.resize(static_cast<std::size_t>(L.in) * L.out);
    L.bias.resize(L.out);
    nn::kaiming_uniform(L.weight, L.in, rng);
    nn::kaiming_uniform(L.bias, L.in, rng);
    layers_.push_back(std::move(L));
  }
}

std::size_t MlpDenoiser::parameter_count() const {
  std::size_t n = 0;
  for (const auto& L : layers_) n += L.weight.size() + L.bias.size();
  return n;
}

Tensor MlpDenoiser::predict_noise(std::span<const double> x_t, int t) const {
  if (x_t.size() != static_cast<std::size_t>(cfg_.input_dim)) {
    throw Error(ErrorCode::kShapeMismatch, "mlp denoiser: expected " + std::to_string(cfg_.input_dim) + " inputs");
  }
  Eigen::MatrixXd in(cfg_.input_dim + 1, 1);
  for (int i = 0; i < cfg_.input_dim; ++i) in(i, 0) = x_t[i];
  in(cfg_.input_dim, 0) = static_cast<double>(t) / cfg_.steps;
  const auto pass = mlp_forward(layers_, std::move(in));
  const auto& out = pass.acts.back();
  return Tensor(out.data(), out.data() + out.size());
}

void MlpDenoiser::save(const std::filesystem::path& path) const {
  Checkpoint ckpt;
  ckpt.kind = "mlp_denoiser";
  ckpt.config = {{"input_dim", cfg_.input_dim}, {"hidden", cfg_.hidden}, {"steps", cfg_.steps}};
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    ckpt.add("layers." + std::to_string(l) + ".weight", layers_[l].weight);
    ckpt.add("layers." + std::to_string(l) + ".bias", layers_[l].bias);
  }
  write_checkpoint(ckpt, path);
}

MlpDenoiser MlpDenoiser::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != "mlp_denoiser") throw Error(ErrorCode::kBadCheckpoint, path.string() + ": not an mlp_denoiser checkpoint");
  MlpConfig cfg;
  try {
    cfg.input_dim = ckpt.config.at("input_dim").get<int>();
    cfg.hidden = ckpt.config.at("hidden").get<std::vector<int>>();
    cfg.steps = ckpt.config.at("steps").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, path.string() + ": " + e.what());
  }
  MlpDenoiser net(cfg, 0);
  for (std::size_t l = 0; l < net.layers_.size(); ++l) {
    auto& L = net.layers_[l];
    L.weight = ckpt.get("layers." + std::to_string(l) + ".weight", L.weight.size());
    L.bias = ckpt.get("layers." + std::to_string(l) + ".bias", L.bias.size());
  }
  return net;
}

TrainedDenoiser train_denoiser(const std::vector<Tensor>& dataset, const MlpConfig& arch,
                               const DenoiserTrainConfig& cfg, const NoiseSchedule& sched) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "train_denoiser: empty dataset");
  for (const auto& x : dataset) {
    if (x.size() != static_cast<std::size_t>(arch.input_dim)) {
      throw Error(ErrorCode::kShapeMismatch, "train_denoiser: sample size differs from input_dim");
    }
  }
  if (cfg.steps <= 0 || cfg.batch_size <= 0 || !(cfg.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "train_denoiser: steps, batch and lr must be positive");
  }
  if (arch.steps != sched.steps) throw Error(ErrorCode::kInvalidArgument, "train_denoiser: arch.steps must equal T");

  TrainedDenoiser result;
  result.model = std::make_shared<MlpDenoiser>(arch, cfg.seed);
  auto& layers = result.model->layers();

  std::vector<nn::Param> params;
  for (const auto& L : layers) {
    params.push_back({"w", L.weight, std::vector<double>(L.weight.size(), 0.0)});
    params.push_back({"b", L.bias, std::vector<double>(L.bias.size(), 0.0)});
  }
  std::vector<nn::Param*> param_ptrs;
  for (auto& p : params) param_ptrs.push_back(&p);
  nn::AdamW opt(cfg.learning_rate, cfg.weight_decay);

  Rng rng(chain_seed(cfg.seed, 1));
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, sched.steps);
  std::normal_distribution<double> normal;
  const int d = arch.input_dim;
  const int b = cfg.batch_size;

  for (int step = 0; step < cfg.steps; ++step) {
    Eigen::MatrixXd input(d + 1, b);
    Eigen::MatrixXd target(d, b);
    for (int j = 0; j < b; ++j) {
      const Tensor& x0 = dataset[pick(rng)];
      const int t = pick_t(rng);
      const double ab = sched.alpha_bar_at(t);
      for (int i = 0; i < d; ++i) {
        const double eps = normal(rng);
        target(i, j) = eps;
        input(i, j) = std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * eps;
      }
      input(d, j) = static_cast<double>(t) / sched.steps;
    }
    const MlpPass pass = mlp_forward(layers, std::move(input));
    Eigen::MatrixXd diff = pass.acts.back() - target;
    const double loss = diff.squaredNorm() / (static_cast<double>(d) * b);
    if (!std::isfinite(loss)) {
      throw Error(ErrorCode::kDivergence, "train_denoiser: non-finite loss at step " + std::to_string(step));
    }
    result.loss_curve.push_back(loss);

    Eigen::MatrixXd grad = diff * (2.0 / (static_cast<double>(d) * b));
    for (int l = static_cast<int>(layers.size()) - 1; l >= 0; --l) {
      auto& L = layers[l];
      if (l + 1 < static_cast<int>(layers.size())) grad = grad.cwiseProduct(pass.pre[l].unaryExpr(&silu_grad));
      Eigen::Map<RowMat>(params[2 * l].grad.data(), L.out, L.in) = grad * pass.acts[l].transpose();
      Eigen::Map<Eigen::VectorXd>(params[2 * l + 1].grad.data(), L.out) = grad.rowwise().sum();
      if (l > 0) grad = ConstMapMat(L.weight.data(), L.out, L.in).transpose() * grad;
    }
    opt.step(param_ptrs);
    for (std::size_t l = 0; l < layers.size(); ++l) {
      layers[l].weight = params[2 * l].value;
      layers[l].bias = params[2 * l + 1].value;
    }
  }
  return result;
}

double evaluate_denoiser_loss(const Denoiser& den, const std::vector<Tensor>& dataset, const NoiseSchedule& sched,
                              int samples, std::uint64_t seed) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "evaluate_denoiser_loss: empty dataset");
  Rng rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, dataset.size() - 1);
  std::uniform_int_distribution<int> pick_t(1, sched.steps);
  std::normal_distribution<double> normal;
  double total = 0.0;
  std::size_t count = 0;
  for (int s = 0; s < samples; ++s) {
    const Tensor& x0 = dataset[pick(rng)];
    const int t = pick_t(rng);
    const double ab = sched.alpha_bar_at(t);
    Tensor eps(x0.size()), xt(x0.size());
    for (std::size_t i = 0; i < x0.size(); ++i) {
      eps[i] = normal(rng);
      xt[i] = std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * eps[i];
    }
    const Tensor pred = den.predict_noise(xt, t);
    for (std::size_t i = 0; i < x0.size(); ++i) total += (pred[i] - eps[i]) * (pred[i] - eps[i]);
    count += x0.size();
  }
  return total / static_cast<double>(count);
}

void write_loss_csv(const std::vector<double>& losses, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kUnwritablePath, "cannot write " + path.string());
  out << "step,loss\n";
  out.precision(10);
  for (std::size_t i = 0; i < losses.size(); ++i) out << i << ',' << losses[i] << '\n';
}

}  // namespace dropwiper
