#pragma once

#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include "dropwiper/image.hpp"
#include "dropwiper/nn.hpp"

namespace dropwiper {

/// Channel plan of the raindrop detector. The defaults are the full network:
/// two 3×3/2 conv blocks (3→32→64), a 1×1/2 projection to 256, six
/// bottleneck residual blocks 256→64→64→256, a 3×3 conv block 256→64, three
/// 4×4/2 transposed-conv blocks back to input resolution, and a 3×3 conv to
/// one logit channel.
struct DetectorConfig {
  int in_channels = 3;
  int head1 = 32;
  int head2 = 64;
  int width = 256;
  int bottleneck = 64;
  int residual_blocks = 6;
  int tail = 64;
  std::vector<int> up = {64, 32, 32};
  double leaky_slope = 0.01;

  /// Same topology with tiny channel counts and two residual blocks.
  static DetectorConfig miniature();
  bool operator==(const DetectorConfig&) const = default;
};

class DetectorNet {
 public:
  DetectorNet(const DetectorConfig& cfg, std::uint64_t seed);

  /// Logits shaped (N, 1, H, W). H and W must be divisible by 8.
  nn::Tensor4 forward_logits(const nn::Tensor4& x, bool training);
  /// Backpropagates dLoss/dlogits from the last forward_logits call.
  void backward(const nn::Tensor4& grad_logits);

  std::vector<nn::Param*> params();
  void zero_grad();
  std::size_t parameter_count();
  int residual_block_count() const { return static_cast<int>(blocks_.size()); }
  const DetectorConfig& config() const { return cfg_; }

  /// Disabling the additive skips is only meant for structural checks.
  void set_skips_enabled(bool on) { skips_ = on; }

  /// Concatenated LeakyReLU sign patterns of the last forward pass. A change
  /// between two passes means the loss was evaluated across a kink.
  std::vector<std::uint8_t> activation_pattern() const;

  void save(const std::filesystem::path& path);
  static DetectorNet load(const std::filesystem::path& path);

 private:
  struct ConvBlock {
    nn::Conv2d conv;
    nn::BatchNorm2d bn;
    nn::LeakyReLU act;
    nn::Tensor4 forward(const nn::Tensor4& x, bool training);
    nn::Tensor4 backward(const nn::Tensor4& g);
  };
  struct UpBlock {
    nn::ConvTranspose2d conv;
    nn::BatchNorm2d bn;
    nn::LeakyReLU act;
    nn::Tensor4 forward(const nn::Tensor4& x, bool training);
    nn::Tensor4 backward(const nn::Tensor4& g);
  };
  struct ResidualBlock {
    ConvBlock reduce, spatial, expand;
  };

  std::vector<nn::BatchNorm2d*> batch_norms();
  std::vector<const nn::LeakyReLU*> activations() const;

  DetectorConfig cfg_;
  bool skips_ = true;
  ConvBlock head1_, head2_;
  nn::Conv2d project_;
  std::vector<ResidualBlock> blocks_;
  ConvBlock tail_;
  std::vector<UpBlock> ups_;
  nn::Conv2d final_;
};

DetectorNet build_detector(std::uint64_t seed, const DetectorConfig& cfg = {});

nn::Tensor4 image_to_nchw(const Image& img);
nn::Tensor4 mask_to_nchw(const Mask& m);

/// Eval-mode probability map in (0,1). RGB input with H, W divisible by 8.
GrayImage detector_forward(DetectorNet& net, const Image& img);

/// Strict: p > threshold → raindrop.
Mask binarize(const GrayImage& prob, double threshold = 0.5);

/// Mean BCE with p clamped to [1e-7, 1 − 1e-7].
double bce_loss(const GrayImage& pred, const Mask& target);

/// Zeroes (optionally) and fills every Param::grad with d(mean BCE)/dθ for
/// the batch; returns the loss.
double loss_and_gradients(DetectorNet& net, const nn::Tensor4& input, const nn::Tensor4& target, bool training = true,
                          bool zero_grad = true);

struct TrainConfig {
  int epochs = 100;
  int batch_size = 32;
  double learning_rate = 1e-3;
  double weight_decay = 1e-4;
  int lr_step_size = 5;
  double lr_gamma = 0.1;
  std::uint64_t seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_loss = 0.0;  // NaN when no validation set was given
  double learning_rate = 0.0;
};

struct DetectorSample {
  Image rainy;
  Mask mask;
};

struct DetectorTrainResult {
  std::vector<EpochLog> log;
};

/// AdamW with StepLR decay (lr · gamma^⌊epoch / step⌋). Throws kDivergence on
/// a non-finite loss.
DetectorTrainResult train_detector(DetectorNet& net, const std::vector<DetectorSample>& train,
                                   const std::vector<DetectorSample>& validation, const TrainConfig& cfg);

double evaluate_detector_loss(DetectorNet& net, const std::vector<DetectorSample>& data);

void write_epoch_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path);

}  // namespace dropwiper
