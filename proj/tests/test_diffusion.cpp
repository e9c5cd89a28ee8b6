#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <functional>
#include <fstream>
#include <numeric>

#include "dropwiper/checkpoint.hpp"
#include "dropwiper/diffusion.hpp"
#include "dropwiper/error.hpp"

namespace fs = std::filesystem;
using namespace dropwiper;

namespace {

struct Moments {
  double mean = 0.0;
  double var = 0.0;
};

Moments moments(const Tensor& x) {
  Moments m;
  for (double v : x) m.mean += v;
  m.mean /= static_cast<double>(x.size());
  for (double v : x) m.var += (v - m.mean) * (v - m.mean);
  m.var /= static_cast<double>(x.size() - 1);
  return m;
}

class FixedNoise final : public Denoiser {
 public:
  explicit FixedNoise(Tensor eps) : eps_(std::move(eps)) {}
  Tensor predict_noise(std::span<const double>, int) const override { return eps_; }

 private:
  Tensor eps_;
};

class ZeroNoise final : public Denoiser {
 public:
  Tensor predict_noise(std::span<const double> x, int) const override { return Tensor(x.size(), 0.0); }
};

class NanNoise final : public Denoiser {
 public:
  Tensor predict_noise(std::span<const double> x, int) const override { return Tensor(x.size(), NAN); }
};

ErrorCode code_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "no dropwiper::Error thrown";
  return ErrorCode::kInvalidArgument;
}

fs::path tmp(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "dropwiper_test_diffusion";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Schedule, DefaultTerminalNearPureNoise) {
  const NoiseSchedule s = make_schedule(1000);
  EXPECT_EQ(s.steps, 1000);
  EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
  EXPECT_DOUBLE_EQ(s.beta_at(1000), 0.02);
  double product = 1.0;
  for (int t = 1; t <= 1000; ++t) product *= 1.0 - (1e-4 + (0.02 - 1e-4) * (t - 1) / 999.0);
  EXPECT_NEAR(s.alpha_bar_at(1000), product, 1e-15);
  EXPECT_LT(s.alpha_bar_at(1000), 1e-4);
}

TEST(Schedule, SingleStep) {
  const NoiseSchedule s = make_schedule(1, 0.5, 0.5);
  EXPECT_EQ(s.alpha_bar_at(1), 0.5);
  EXPECT_EQ(s.alpha_bar_at(0), 1.0);
}

TEST(Schedule, Invariants) {
  for (const NoiseSchedule& s : {make_schedule(1000), make_schedule(50, 1e-3, 0.3), make_scaled_schedule(200)}) {
    for (int t = 1; t <= s.steps; ++t) {
      EXPECT_GT(s.beta_at(t), 0.0);
      EXPECT_LT(s.beta_at(t), 1.0);
      EXPECT_EQ(s.alpha_at(t), 1.0 - s.beta_at(t));
      if (t > 1) EXPECT_LT(s.alpha_bar_at(t), s.alpha_bar_at(t - 1));
    }
    EXPECT_LT(s.alpha_bar_at(1), 1.0);
  }
}

TEST(Schedule, ScaledEndpoints) {
  const NoiseSchedule s = make_scaled_schedule(200);
  EXPECT_DOUBLE_EQ(s.beta_at(1), 5e-4);
  EXPECT_DOUBLE_EQ(s.beta_at(200), 0.1);
  EXPECT_LT(s.alpha_bar_at(200), 1e-4);
}

TEST(Schedule, InvalidRanges) {
  EXPECT_EQ(code_of([] { make_schedule(0); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { make_schedule(10, 0.0, 0.02); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { make_schedule(10, 0.03, 0.02); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([] { make_schedule(10, 1e-4, 1.0); }), ErrorCode::kInvalidArgument);
}

TEST(ForwardStep, VanishingBetaKeepsInput) {
  const NoiseSchedule s = make_schedule(2, 1e-12, 1e-12);
  Rng rng(1);
  Tensor x(1000);
  std::normal_distribution<double> n;
  for (double& v : x) v = n(rng);
  const Tensor y = forward_step(x, 1, s, rng);
  for (std::size_t i = 0; i < x.size(); ++i) EXPECT_LT(std::abs(y[i] - x[i]), 1e-5);
}

TEST(ForwardStep, ZeroInputHasBetaVariance) {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(2);
  const Tensor y = forward_step(Tensor(100000, 0.0), 700, s, rng);
  EXPECT_NEAR(moments(y).var, s.beta_at(700), 0.03 * s.beta_at(700));
}

TEST(ForwardStep, DeterministicAndRangeChecked) {
  const NoiseSchedule s = make_schedule(10);
  const Tensor x(16, 0.25);
  Rng a(3), b(3);
  EXPECT_EQ(forward_step(x, 4, s, a), forward_step(x, 4, s, b));
  EXPECT_EQ(code_of([&] { forward_step(x, 0, s, a); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(code_of([&] { forward_step(x, 11, s, a); }), ErrorCode::kOutOfRange);
}

TEST(ForwardSample, TimeZeroIsIdentity) {
  const NoiseSchedule s = make_schedule(10);
  const Tensor x{0.1, -0.7, 0.3};
  Rng rng(4);
  const Rng before = rng;
  EXPECT_EQ(forward_sample(x, 0, s, rng), x);
  EXPECT_EQ(rng, before);
  EXPECT_EQ(code_of([&] { forward_sample(x, 11, s, rng); }), ErrorCode::kOutOfRange);
  EXPECT_EQ(code_of([&] { forward_sample(x, -1, s, rng); }), ErrorCode::kOutOfRange);
}

TEST(ForwardSample, ComposedStepsMatchDirectJump) {
  const NoiseSchedule s = make_schedule(1000);
  const std::size_t n = 100000;
  Rng rng(5);
  std::normal_distribution<double> data(1.0, 0.5);
  Tensor x0(n);
  for (double& v : x0) v = data(rng);
  for (int t : {1, 25, 200}) {
    Tensor composed = x0;
    for (int k = 1; k <= t; ++k) composed = forward_step(composed, k, s, rng);
    const Tensor direct = forward_sample(x0, t, s, rng);
    const Moments a = moments(composed);
    const Moments b = moments(direct);
    EXPECT_NEAR(a.mean, b.mean, 0.03 * std::sqrt(b.var)) << "t " << t;
    EXPECT_NEAR(a.var, b.var, 0.03 * b.var) << "t " << t;
    const double ab = s.alpha_bar_at(t);
    EXPECT_NEAR(b.mean, std::sqrt(ab) * 1.0, 0.03 * std::sqrt(b.var));
    EXPECT_NEAR(b.var, ab * 0.25 + 1.0 - ab, 0.03 * b.var);
  }
}

TEST(ForwardSample, TerminalMomentsFromZero) {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(6);
  const Moments m = moments(forward_sample(Tensor(100000, 0.0), 1000, s, rng));
  const double target = 1.0 - s.alpha_bar_at(1000);
  EXPECT_NEAR(m.mean, 0.0, 0.03 * std::sqrt(target));
  EXPECT_NEAR(m.var, target, 0.03 * target);
}

TEST(ReverseStep, TrueNoiseRecoversDataAtFirstStep) {
  const NoiseSchedule s = make_schedule(1000);
  Rng rng(7);
  std::normal_distribution<double> n;
  Tensor x0(64), eps(64);
  for (double& v : x0) v = n(rng);
  for (double& v : eps) v = n(rng);
  Tensor x1(64);
  for (std::size_t i = 0; i < 64; ++i) {
    x1[i] = std::sqrt(s.alpha_bar_at(1)) * x0[i] + std::sqrt(1.0 - s.alpha_bar_at(1)) * eps[i];
  }
  const Tensor out = reverse_step(x1, 1, FixedNoise(eps), s, rng);
  for (std::size_t i = 0; i < 64; ++i) EXPECT_NEAR(out[i], x0[i], 1e-6);
}

TEST(ReverseStep, ZeroDenoiserWithoutNoise) {
  const NoiseSchedule s = make_schedule(100);
  Rng rng(8);
  const Tensor x{0.5, -1.0, 2.0};
  for (int t : {1, 50, 100}) {
    const Tensor out = reverse_step(x, t, ZeroNoise(), s, rng, 0.0);
    for (std::size_t i = 0; i < x.size(); ++i) EXPECT_NEAR(out[i], x[i] / std::sqrt(s.alpha_at(t)), 1e-14);
  }
  // σ_1 = 0 even at full scale.
  EXPECT_EQ(reverse_step(x, 1, ZeroNoise(), s, rng), reverse_step(x, 1, ZeroNoise(), s, rng, 0.0));
}

TEST(ReverseStep, AddsBetaVariance) {
  const NoiseSchedule s = make_schedule(100);
  Rng rng(9);
  const Tensor out = reverse_step(Tensor(100000, 0.0), 60, ZeroNoise(), s, rng);
  EXPECT_NEAR(moments(out).var, s.beta_at(60), 0.03 * s.beta_at(60));
}

TEST(ReverseStep, NonFiniteDenoiserRejected) {
  const NoiseSchedule s = make_schedule(10);
  Rng rng(10);
  EXPECT_EQ(code_of([&] { reverse_step(Tensor(4, 0.0), 5, NanNoise(), s, rng); }), ErrorCode::kNonFinite);
}

TEST(AnalyticDenoiser, PointMassLimit) {
  const NoiseSchedule s = make_schedule(1000);
  const Tensor mu{0.3, -0.2};
  const auto den = analytic_gaussian_denoiser(mu, 1e-9, s);
  for (int t : {1, 300, 1000}) {
    const Tensor xhat = den->posterior_mean(Tensor{5.0, -7.0}, t);
    EXPECT_NEAR(xhat[0], 0.3, 1e-12);
    EXPECT_NEAR(xhat[1], -0.2, 1e-12);
    const double ab = s.alpha_bar_at(t);
    const Tensor on_mean{std::sqrt(ab) * 0.3, std::sqrt(ab) * -0.2};
    for (double e : den->predict_noise(on_mean, t)) EXPECT_LE(std::abs(e), 1e-12);
  }
  EXPECT_EQ(code_of([&] { analytic_gaussian_denoiser(mu, 0.0, s); }), ErrorCode::kInvalidArgument);
}

TEST(AnalyticDenoiser, MatchesPosteriorFormula) {
  const NoiseSchedule s = make_schedule(1000);
  const auto den = analytic_gaussian_denoiser(Tensor{3.0}, 0.5, s);
  for (int t : {1, 10, 500, 1000}) {
    const double ab = s.alpha_bar_at(t);
    const double x = 0.7;
    const double xhat = (0.25 * std::sqrt(ab) * x + (1.0 - ab) * 3.0) / (ab * 0.25 + 1.0 - ab);
    EXPECT_NEAR(den->posterior_mean(Tensor{x}, t)[0], xhat, 1e-12);
    EXPECT_NEAR(den->predict_noise(Tensor{x}, t)[0], (x - std::sqrt(ab) * xhat) / std::sqrt(1.0 - ab), 1e-12);
  }
}

TEST(AnalyticDenoiser, ReverseChainReachesData) {
  const NoiseSchedule s = make_scaled_schedule(200);
  const std::size_t n = 10000;
  const auto den = analytic_gaussian_denoiser(Tensor(n, 3.0), 0.5, s);
  Rng rng(11);
  const Moments m = moments(sample_unconditional(n, *den, s, rng));
  EXPECT_NEAR(m.mean, 3.0, 0.05);
  EXPECT_NEAR(m.var, 0.25, 0.025);
}

TEST(Inpaint, AllKnownReturnsInputExactly) {
  const NoiseSchedule s = make_scaled_schedule(50);
  const Tensor x0{0.1, -0.9, 0.4, 0.0};
  const auto den = analytic_gaussian_denoiser(Tensor(4, 0.0), 0.5, s);
  Rng rng(12);
  EXPECT_EQ(inpaint_sample(x0, Tensor(4, 0.0), *den, s, rng), x0);
}

TEST(Inpaint, AllMissingIsUnconditional) {
  const NoiseSchedule s = make_scaled_schedule(200);
  const std::size_t n = 10000;
  const auto den = analytic_gaussian_denoiser(Tensor(n, 3.0), 0.5, s);
  Rng rng(13);
  const Moments m = moments(inpaint_sample(Tensor(n, -1.0), Tensor(n, 1.0), *den, s, rng));
  EXPECT_NEAR(m.mean, 3.0, 0.05);
  EXPECT_NEAR(m.var, 0.25, 0.025);
}

TEST(Inpaint, KnownRegionBitExact) {
  const NoiseSchedule s = make_scaled_schedule(60);
  Rng data(14);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Tensor x0(100), mask(100);
  for (std::size_t i = 0; i < 100; ++i) {
    x0[i] = u(data);
    mask[i] = (i * 7) % 3 == 0 ? 1.0 : 0.0;
  }
  const auto den = analytic_gaussian_denoiser(Tensor(100, 0.0), 0.5, s);
  Rng rng(15);
  const Tensor out = inpaint_sample(x0, mask, *den, s, rng);
  std::size_t changed = 0;
  for (std::size_t i = 0; i < 100; ++i) {
    if (mask[i] == 0.0) EXPECT_EQ(out[i], x0[i]);
    else changed += out[i] != x0[i];
  }
  EXPECT_GT(changed, 0u);

  // Swapped roles keep the m = 1 pixels instead.
  Rng rng2(15);
  const Tensor swapped = inpaint_sample(x0, mask, *den, s, rng2, InpaintOptions{true});
  for (std::size_t i = 0; i < 100; ++i) {
    if (mask[i] == 1.0) EXPECT_EQ(swapped[i], x0[i]);
  }
}

TEST(Inpaint, DeterministicAndValidated) {
  const NoiseSchedule s = make_scaled_schedule(30);
  const auto den = analytic_gaussian_denoiser(Tensor(8, 0.0), 0.5, s);
  const Tensor x0(8, 0.2);
  const Tensor mask{1, 0, 1, 0, 1, 0, 1, 0};
  Rng a(16), b(16);
  EXPECT_EQ(inpaint_sample(x0, mask, *den, s, a), inpaint_sample(x0, mask, *den, s, b));
  Tensor bad = mask;
  bad[3] = 0.5;
  EXPECT_EQ(code_of([&] { inpaint_sample(x0, bad, *den, s, a); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(code_of([&] { inpaint_sample(x0, Tensor(7, 0.0), *den, s, a); }), ErrorCode::kShapeMismatch);
}

TEST(TensorConversion, RangeMapping) {
  GrayImage g(1, 3);
  g.data = {0.0, 0.5, 1.0};
  EXPECT_EQ(image_to_tensor(g), (Tensor{-1.0, 0.0, 1.0}));
  EXPECT_EQ(tensor_to_gray(Tensor{-2.0, 0.0, 3.0}, 1, 3).data, (std::vector<double>{0.0, 0.5, 1.0}));
  Mask m(1, 2);
  m.data = {1, 0};
  EXPECT_EQ(mask_to_tensor(m), (Tensor{1.0, 0.0}));
}

TEST(TrainDenoiser, ZeroDataBeatsUntrainedBaseline) {
  const NoiseSchedule s = make_scaled_schedule(50);
  const std::vector<Tensor> data(8, Tensor(4, 0.0));
  const MlpConfig arch{4, {32, 32}, 50};
  const MlpDenoiser untrained(arch, 17);
  const DenoiserTrainConfig cfg{400, 1e-3, 0.0, 16, 17};
  const TrainedDenoiser trained = train_denoiser(data, arch, cfg, s);
  const double before = evaluate_denoiser_loss(untrained, data, s, 2000, 18);
  const double after = evaluate_denoiser_loss(*trained.model, data, s, 2000, 18);
  EXPECT_LT(after, before);
  // Zero data makes x_t pure scaled noise, so ε is recoverable almost exactly.
  EXPECT_LT(after, 0.1);
}

TEST(TrainDenoiser, LossTrendDecreases) {
  const NoiseSchedule s = make_scaled_schedule(50);
  std::vector<Tensor> data;
  for (int k = 0; k < 16; ++k) {
    Tensor x(16);
    for (int i = 0; i < 16; ++i) x[i] = std::sin(0.4 * i + 0.3 * k);
    data.push_back(x);
  }
  const TrainedDenoiser tr = train_denoiser(data, MlpConfig{16, {64, 64}, 50}, DenoiserTrainConfig{600, 1e-3, 0.0, 16, 19}, s);
  ASSERT_EQ(tr.loss_curve.size(), 600u);
  const auto window = [&](std::size_t from) {
    return std::accumulate(tr.loss_curve.begin() + from, tr.loss_curve.begin() + from + 60, 0.0) / 60.0;
  };
  EXPECT_LT(window(540), window(0));
}

TEST(TrainDenoiser, DeterministicWeights) {
  const NoiseSchedule s = make_scaled_schedule(20);
  const std::vector<Tensor> data{Tensor{0.1, 0.2}, Tensor{-0.3, 0.4}};
  const MlpConfig arch{2, {8}, 20};
  const DenoiserTrainConfig cfg{50, 1e-3, 0.01, 4, 20};
  const auto a = train_denoiser(data, arch, cfg, s);
  const auto b = train_denoiser(data, arch, cfg, s);
  ASSERT_EQ(a.model->layers().size(), b.model->layers().size());
  for (std::size_t l = 0; l < a.model->layers().size(); ++l) {
    EXPECT_EQ(a.model->layers()[l].weight, b.model->layers()[l].weight);
    EXPECT_EQ(a.model->layers()[l].bias, b.model->layers()[l].bias);
  }
  EXPECT_EQ(a.loss_curve, b.loss_curve);
}

TEST(TrainDenoiser, Errors) {
  const NoiseSchedule s = make_scaled_schedule(20);
  const MlpConfig arch{2, {8}, 20};
  const DenoiserTrainConfig cfg{10, 1e-3, 0.0, 4, 0};
  EXPECT_EQ(code_of([&] { train_denoiser({}, arch, cfg, s); }), ErrorCode::kEmptyDataset);
  EXPECT_EQ(code_of([&] { train_denoiser({Tensor{1.0}}, arch, cfg, s); }), ErrorCode::kShapeMismatch);
  const DenoiserTrainConfig wild{50, 1e200, 0.0, 4, 0};
  EXPECT_EQ(code_of([&] { train_denoiser({Tensor{100.0, -100.0}}, arch, wild, s); }), ErrorCode::kDivergence);
}

TEST(MlpCheckpoint, RoundTripAndLayout) {
  const MlpDenoiser net(MlpConfig{6, {10, 7}, 30}, 21);
  net.save(tmp("mlp.dwdn"));
  const MlpDenoiser back = MlpDenoiser::load(tmp("mlp.dwdn"));
  EXPECT_EQ(back.config().input_dim, 6);
  EXPECT_EQ(back.config().hidden, (std::vector<int>{10, 7}));
  EXPECT_EQ(back.parameter_count(), net.parameter_count());
  EXPECT_EQ(net.parameter_count(), std::size_t{(7 * 10 + 10) + (10 * 7 + 7) + (7 * 6 + 6)});
  // Weights are stored as float32.
  for (std::size_t l = 0; l < net.layers().size(); ++l) {
    for (std::size_t i = 0; i < net.layers()[l].weight.size(); ++i) {
      EXPECT_EQ(back.layers()[l].weight[i], static_cast<double>(static_cast<float>(net.layers()[l].weight[i])));
    }
  }
  const Tensor x{0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  const Tensor a = net.predict_noise(x, 12);
  const Tensor b = back.predict_noise(x, 12);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-5);

  std::ifstream in(tmp("mlp.dwdn"), std::ios::binary);
  char magic[4];
  std::uint32_t version = 0;
  in.read(magic, 4);
  in.read(reinterpret_cast<char*>(&version), 4);
  EXPECT_EQ(std::string(magic, 4), "DWDN");
  EXPECT_EQ(version, Checkpoint::kVersion);
}

TEST(MlpCheckpoint, CorruptFileRejected) {
  std::ofstream(tmp("junk.dwdn"), std::ios::binary) << "not a checkpoint";
  EXPECT_EQ(code_of([] { MlpDenoiser::load(tmp("junk.dwdn")); }), ErrorCode::kBadCheckpoint);
}
