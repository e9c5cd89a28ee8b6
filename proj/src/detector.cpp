#include "dropwiper/detector.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <random>
#include <string>

#include "dropwiper/checkpoint.hpp"
#include "dropwiper/error.hpp"

namespace dropwiper {

using nn::Tensor4;

DetectorConfig DetectorConfig::miniature() {
  DetectorConfig c;
  c.head1 = 3;
  c.head2 = 4;
  c.width = 6;
  c.bottleneck = 3;
  c.residual_blocks = 2;
  c.tail = 4;
  c.up = {4, 3, 3};
  return c;
}

Tensor4 DetectorNet::ConvBlock::forward(const Tensor4& x, bool training) {
  return act.forward(bn.forward(conv.forward(x), training));
}

Tensor4 DetectorNet::ConvBlock::backward(const Tensor4& g) { return conv.backward(bn.backward(act.backward(g))); }

Tensor4 DetectorNet::UpBlock::forward(const Tensor4& x, bool training) {
  return act.forward(bn.forward(conv.forward(x), training));
}

Tensor4 DetectorNet::UpBlock::backward(const Tensor4& g) { return conv.backward(bn.backward(act.backward(g))); }

DetectorNet::DetectorNet(const DetectorConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg.up.size() != 3) throw Error(ErrorCode::kInvalidArgument, "detector needs exactly three up-sampling stages");
  if (cfg.residual_blocks < 0) throw Error(ErrorCode::kInvalidArgument, "negative residual block count");
  std::mt19937_64 rng(seed);
  const double slope = cfg.leaky_slope;
  auto block = [&](const std::string& name, int in, int out, int k, int stride, int pad) {
    return ConvBlock{nn::Conv2d(name + ".conv", in, out, k, stride, pad, rng), nn::BatchNorm2d(name + ".bn", out),
                     nn::LeakyReLU(slope)};
  };
  head1_ = block("head.0", cfg.in_channels, cfg.head1, 3, 2, 1);
  head2_ = block("head.1", cfg.head1, cfg.head2, 3, 2, 1);
  project_ = nn::Conv2d("head.project", cfg.head2, cfg.width, 1, 2, 0, rng);
  for (int b = 0; b < cfg.residual_blocks; ++b) {
    const std::string name = "body." + std::to_string(b);
    blocks_.push_back({block(name + ".reduce", cfg.width, cfg.bottleneck, 1, 1, 0),
                       block(name + ".spatial", cfg.bottleneck, cfg.bottleneck, 3, 1, 1),
                       block(name + ".expand", cfg.bottleneck, cfg.width, 1, 1, 0)});
  }
  tail_ = block("tail.conv", cfg.width, cfg.tail, 3, 1, 1);
  int in = cfg.tail;
  for (std::size_t u = 0; u < cfg.up.size(); ++u) {
    const std::string name = "tail.up." + std::to_string(u);
    ups_.push_back(UpBlock{nn::ConvTranspose2d(name + ".conv", in, cfg.up[u], 4, 2, 1, rng),
                           nn::BatchNorm2d(name + ".bn", cfg.up[u]), nn::LeakyReLU(slope)});
    in = cfg.up[u];
  }
  final_ = nn::Conv2d("tail.final", in, 1, 3, 1, 1, rng);
}

Tensor4 DetectorNet::forward_logits(const Tensor4& x, bool training) {
  if (x.c != cfg_.in_channels) throw Error(ErrorCode::kShapeMismatch, "detector: wrong input channel count");
  if (x.h % 8 != 0 || x.w % 8 != 0 || x.h == 0 || x.w == 0) {
    throw Error(ErrorCode::kInvalidArgument, "detector: input " + std::to_string(x.h) + "x" + std::to_string(x.w) +
                                                 " must have height and width divisible by 8");
  }
  Tensor4 h = project_.forward(head2_.forward(head1_.forward(x, training), training));
  for (auto& b : blocks_) {
    Tensor4 y = b.expand.forward(b.spatial.forward(b.reduce.forward(h, training), training), training);
    if (skips_) {
      for (std::size_t i = 0; i < y.data.size(); ++i) y.data[i] += h.data[i];
    }
    h = std::move(y);
  }
  h = tail_.forward(h, training);
  for (auto& u : ups_) h = u.forward(h, training);
  return final_.forward(h);
}

void DetectorNet::backward(const Tensor4& grad_logits) {
  Tensor4 g = final_.backward(grad_logits);
  for (auto it = ups_.rbegin(); it != ups_.rend(); ++it) g = it->backward(g);
  g = tail_.backward(g);
  for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) {
    Tensor4 inner = it->reduce.backward(it->spatial.backward(it->expand.backward(g)));
    if (skips_) {
      for (std::size_t i = 0; i < inner.data.size(); ++i) inner.data[i] += g.data[i];
    }
    g = std::move(inner);
  }
  head1_.backward(head2_.backward(project_.backward(g)));
}

std::vector<nn::Param*> DetectorNet::params() {
  std::vector<nn::Param*> out;
  auto add_block = [&out](ConvBlock& b) {
    for (auto* p : b.conv.params()) out.push_back(p);
    for (auto* p : b.bn.params()) out.push_back(p);
  };
  add_block(head1_);
  add_block(head2_);
  for (auto* p : project_.params()) out.push_back(p);
  for (auto& b : blocks_) {
    add_block(b.reduce);
    add_block(b.spatial);
    add_block(b.expand);
  }
  add_block(tail_);
  for (auto& u : ups_) {
    for (auto* p : u.conv.params()) out.push_back(p);
    for (auto* p : u.bn.params()) out.push_back(p);
  }
  for (auto* p : final_.params()) out.push_back(p);
  return out;
}

std::vector<nn::BatchNorm2d*> DetectorNet::batch_norms() {
  std::vector<nn::BatchNorm2d*> out{&head1_.bn, &head2_.bn};
  for (auto& b : blocks_) {
    out.push_back(&b.reduce.bn);
    out.push_back(&b.spatial.bn);
    out.push_back(&b.expand.bn);
  }
  out.push_back(&tail_.bn);
  for (auto& u : ups_) out.push_back(&u.bn);
  return out;
}

std::vector<const nn::LeakyReLU*> DetectorNet::activations() const {
  std::vector<const nn::LeakyReLU*> out{&head1_.act, &head2_.act};
  for (const auto& b : blocks_) {
    out.push_back(&b.reduce.act);
    out.push_back(&b.spatial.act);
    out.push_back(&b.expand.act);
  }
  out.push_back(&tail_.act);
  for (const auto& u : ups_) out.push_back(&u.act);
  return out;
}

std::vector<std::uint8_t> DetectorNet::activation_pattern() const {
  std::vector<std::uint8_t> out;
  for (const auto* a : activations()) out.insert(out.end(), a->positive().begin(), a->positive().end());
  return out;
}

void DetectorNet::zero_grad() {
  for (auto* p : params()) p->zero_grad();
}

std::size_t DetectorNet::parameter_count() {
  std::size_t n = 0;
  for (auto* p : params()) n += p->value.size();
  return n;
}

void DetectorNet::save(const std::filesystem::path& path) {
  Checkpoint ckpt;
  ckpt.kind = "detector";
  ckpt.config = {{"in_channels", cfg_.in_channels}, {"head1", cfg_.head1},
                 {"head2", cfg_.head2},             {"width", cfg_.width},
                 {"bottleneck", cfg_.bottleneck},   {"residual_blocks", cfg_.residual_blocks},
                 {"tail", cfg_.tail},               {"up", cfg_.up},
                 {"leaky_slope", cfg_.leaky_slope}};
  for (auto* p : params()) ckpt.add(p->name, p->value);
  for (auto* bn : batch_norms()) {
    ckpt.add(bn->gamma.name + ".running_mean", bn->running_mean);
    ckpt.add(bn->gamma.name + ".running_var", bn->running_var);
  }
  write_checkpoint(ckpt, path);
}

DetectorNet DetectorNet::load(const std::filesystem::path& path) {
  const Checkpoint ckpt = read_checkpoint(path);
  if (ckpt.kind != "detector") throw Error(ErrorCode::kBadCheckpoint, path.string() + ": not a detector checkpoint");
  DetectorConfig cfg;
  try {
    const auto& j = ckpt.config;
    cfg.in_channels = j.at("in_channels").get<int>();
    cfg.head1 = j.at("head1").get<int>();
    cfg.head2 = j.at("head2").get<int>();
    cfg.width = j.at("width").get<int>();
    cfg.bottleneck = j.at("bottleneck").get<int>();
    cfg.residual_blocks = j.at("residual_blocks").get<int>();
    cfg.tail = j.at("tail").get<int>();
    cfg.up = j.at("up").get<std::vector<int>>();
    cfg.leaky_slope = j.at("leaky_slope").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kBadCheckpoint, path.string() + ": " + e.what());
  }
  DetectorNet net(cfg, 0);
  for (auto* p : net.params()) p->value = ckpt.get(p->name, p->value.size());
  for (auto* bn : net.batch_norms()) {
    bn->running_mean = ckpt.get(bn->gamma.name + ".running_mean", bn->running_mean.size());
    bn->running_var = ckpt.get(bn->gamma.name + ".running_var", bn->running_var.size());
  }
  return net;
}

DetectorNet build_detector(std::uint64_t seed, const DetectorConfig& cfg) { return DetectorNet(cfg, seed); }

// ---------------------------------------------------------------------------

Tensor4 image_to_nchw(const Image& img) {
  Tensor4 t(1, img.channels, img.height, img.width);
  for (int r = 0; r < img.height; ++r) {
    for (int c = 0; c < img.width; ++c) {
      for (int ch = 0; ch < img.channels; ++ch) t.at(0, ch, r, c) = img.at(r, c, ch);
    }
  }
  return t;
}

Tensor4 mask_to_nchw(const Mask& m) {
  Tensor4 t(1, 1, m.height, m.width);
  for (std::size_t i = 0; i < m.data.size(); ++i) t.data[i] = m.data[i];
  return t;
}

namespace {

Tensor4 stack(const std::vector<const Tensor4*>& items) {
  const Tensor4& first = *items.front();
  Tensor4 out(static_cast<int>(items.size()), first.c, first.h, first.w);
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (!items[i]->same_shape(first)) throw Error(ErrorCode::kShapeMismatch, "batch items differ in shape");
    std::copy(items[i]->data.begin(), items[i]->data.end(), out.sample(static_cast<int>(i)));
  }
  return out;
}

}  // namespace

GrayImage detector_forward(DetectorNet& net, const Image& img) {
  if (img.channels != 3) throw Error(ErrorCode::kInvalidArgument, "detector expects an RGB image");
  const Tensor4 logits = net.forward_logits(image_to_nchw(img), false);
  GrayImage p(img.height, img.width);
  for (std::size_t i = 0; i < p.data.size(); ++i) p.data[i] = nn::sigmoid(logits.data[i]);
  return p;
}

Mask binarize(const GrayImage& prob, double threshold) {
  Mask m(prob.height, prob.width);
  for (std::size_t i = 0; i < prob.data.size(); ++i) m.data[i] = prob.data[i] > threshold ? 1 : 0;
  return m;
}

double bce_loss(const GrayImage& pred, const Mask& target) {
  if (pred.height != target.height || pred.width != target.width) {
    throw Error(ErrorCode::kShapeMismatch, "bce_loss: prediction and target shapes differ");
  }
  double loss = 0.0;
  for (std::size_t i = 0; i < pred.data.size(); ++i) {
    const double p = std::clamp(pred.data[i], 1e-7, 1.0 - 1e-7);
    loss -= target.data[i] ? std::log(p) : std::log(1.0 - p);
  }
  return loss / static_cast<double>(pred.data.size());
}

double loss_and_gradients(DetectorNet& net, const Tensor4& input, const Tensor4& target, bool training,
                          bool zero_grad) {
  if (zero_grad) net.zero_grad();
  Tensor4 logits = net.forward_logits(input, training);
  if (!logits.same_shape(target)) throw Error(ErrorCode::kShapeMismatch, "target shape differs from network output");
  std::vector<double> grad;
  const double loss = nn::sigmoid_bce(logits.data, target.data, &grad);
  logits.data = std::move(grad);
  net.backward(logits);
  return loss;
}

void TrainConfig::validate() const {
  if (epochs <= 0 || batch_size <= 0 || lr_step_size <= 0 || !(learning_rate > 0.0) || weight_decay < 0.0 ||
      !(lr_gamma > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "detector train config values must be positive");
  }
}

double evaluate_detector_loss(DetectorNet& net, const std::vector<DetectorSample>& data) {
  if (data.empty()) return std::numeric_limits<double>::quiet_NaN();
  double total = 0.0;
  for (const auto& s : data) total += bce_loss(detector_forward(net, s.rainy), s.mask);
  return total / static_cast<double>(data.size());
}

DetectorTrainResult train_detector(DetectorNet& net, const std::vector<DetectorSample>& train,
                                   const std::vector<DetectorSample>& validation, const TrainConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw Error(ErrorCode::kEmptyDataset, "train_detector: empty training set");
  std::vector<Tensor4> inputs, targets;
  for (const auto& s : train) {
    inputs.push_back(image_to_nchw(s.rainy));
    targets.push_back(mask_to_nchw(s.mask));
  }
  nn::AdamW opt(cfg.learning_rate, cfg.weight_decay);
  const auto params = net.params();
  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(train.size());
  std::iota(order.begin(), order.end(), 0);

  DetectorTrainResult result;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = cfg.learning_rate * std::pow(cfg.lr_gamma, epoch / cfg.lr_step_size);
    opt.set_learning_rate(lr);
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const Tensor4*> xs, ys;
      for (std::size_t k = start; k < end; ++k) {
        xs.push_back(&inputs[order[k]]);
        ys.push_back(&targets[order[k]]);
      }
      const double loss = loss_and_gradients(net, stack(xs), stack(ys), true);
      if (!std::isfinite(loss)) {
        throw Error(ErrorCode::kDivergence,
                    "train_detector: non-finite loss in epoch " + std::to_string(epoch + 1));
      }
      loss_sum += loss * static_cast<double>(end - start);
      opt.step(params);
    }
    EpochLog entry;
    entry.epoch = epoch + 1;
    entry.train_loss = loss_sum / static_cast<double>(order.size());
    entry.val_loss = evaluate_detector_loss(net, validation);
    entry.learning_rate = lr;
    result.log.push_back(entry);
  }
  return result;
}

void write_epoch_csv(const std::vector<EpochLog>& log, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kUnwritablePath, "cannot write " + path.string());
  out << "epoch,train_loss,val_loss\n";
  out.precision(10);
  for (const auto& e : log) {
    out << e.epoch << ',' << e.train_loss << ',';
    if (std::isfinite(e.val_loss)) out << e.val_loss;
    out << '\n';
  }
}

}  // namespace dropwiper
