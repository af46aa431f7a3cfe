#include "spine/nets.hpp"

#include <cmath>

namespace spine {

void validate(const NetConfig& cfg) {
  if (cfg.in_channels < 1 || cfg.out_channels < 1)
    throw ConfigError("net channels must be >= 1");
  if (cfg.depth < 1) throw ConfigError("net depth must be >= 1");
  if (cfg.base_width < 1 || cfg.width_growth < 1)
    throw ConfigError("net width parameters must be >= 1");
}

ConvBlock::ConvBlock(std::int64_t cin, std::int64_t cout, Rng& rng)
    : w(Tensor::randn({cout, cin, 3, 3, 3}, std::sqrt(2.0 / double(cin * 27)), rng, true)),
      b(Tensor::zeros({cout}, true)),
      gamma(Tensor::full({cout}, 1.0f, true)),
      beta(Tensor::zeros({cout}, true)),
      bn(cout) {}

Tensor ConvBlock::forward(const Tensor& x, bool training) {
  return relu(batchnorm(conv3d(x, w.value, b.value), gamma.value, beta.value, bn, training));
}

UNet3D::UNet3D(const NetConfig& cfg, Rng& rng) : cfg_(cfg) {
  validate(cfg);
  auto width = [&](int level) {
    std::int64_t w = cfg.base_width;
    for (int i = 0; i < level; ++i) w *= cfg.width_growth;
    return w;
  };

  std::int64_t cin = cfg.in_channels;
  for (int i = 0; i < cfg.depth; ++i) {
    Level lvl;
    lvl.c1 = ConvBlock(cin, width(i), rng);
    lvl.c2 = ConvBlock(width(i), width(i), rng);
    enc_.push_back(std::move(lvl));
    cin = width(i);
  }
  bottleneck_.c1 = ConvBlock(cin, width(cfg.depth), rng);
  bottleneck_.c2 = ConvBlock(width(cfg.depth), width(cfg.depth), rng);

  ups_.resize(std::size_t(cfg.depth));
  dec_.resize(std::size_t(cfg.depth));
  for (int i = cfg.depth - 1; i >= 0; --i) {
    const std::int64_t cup = (i == cfg.depth - 1) ? width(cfg.depth) : width(i + 1);
    const std::int64_t cw = width(i);
    Up up;
    up.w = Parameter(
        Tensor::randn({cup, cw, 4, 4, 4}, std::sqrt(2.0 / double(cup * 64)), rng, true));
    up.b = Parameter(Tensor::zeros({cw}, true));
    ups_[std::size_t(i)] = std::move(up);
    Level lvl;
    lvl.c1 = ConvBlock(2 * cw, cw, rng);  // concat(skip, upsampled)
    lvl.c2 = ConvBlock(cw, cw, rng);
    dec_[std::size_t(i)] = std::move(lvl);
  }

  head_w_ = Parameter(Tensor::randn({cfg.out_channels, width(0), 3, 3, 3},
                                    std::sqrt(2.0 / double(width(0) * 27)), rng, true));
  head_b_ = Parameter(Tensor::zeros({cfg.out_channels}, true));
}

Tensor UNet3D::forward_logits(const Tensor& x, bool training) {
  if (x.shape().size() != 5) throw ShapeError("net input must be 5-d");
  if (x.shape()[1] != cfg_.in_channels)
    throw ShapeError("net input has wrong channel count: got " + std::to_string(x.shape()[1]) +
                     ", config says " + std::to_string(cfg_.in_channels));
  const std::int64_t div = std::int64_t(1) << cfg_.depth;
  for (int a = 2; a < 5; ++a)
    if (x.shape()[std::size_t(a)] % div != 0)
      throw ShapeError("net input spatial extents must be divisible by 2^depth = " +
                       std::to_string(div));

  Tensor t = x;
  std::vector<Tensor> skips;
  for (auto& lvl : enc_) {
    t = lvl.c2.forward(lvl.c1.forward(t, training), training);
    skips.push_back(t);
    t = maxpool3d(t);
  }
  t = bottleneck_.c2.forward(bottleneck_.c1.forward(t, training), training);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    t = deconv3d(t, ups_[std::size_t(i)].w.value, ups_[std::size_t(i)].b.value);
    t = concat_channels(skips[std::size_t(i)], t);
    t = dec_[std::size_t(i)].c2.forward(dec_[std::size_t(i)].c1.forward(t, training), training);
  }
  return conv3d(t, head_w_.value, head_b_.value);
}

std::vector<Parameter*> UNet3D::parameters() {
  std::vector<Parameter*> out;
  for (auto& np : named_parameters()) out.push_back(np.param);
  return out;
}

std::int64_t UNet3D::parameter_count() {
  std::int64_t n = 0;
  for (Parameter* p : parameters()) n += p->value.numel();
  return n;
}

std::vector<UNet3D::NamedParam> UNet3D::named_parameters() {
  std::vector<NamedParam> out;
  auto add_block = [&](const std::string& prefix, ConvBlock& blk) {
    out.push_back({prefix + ".w", &blk.w});
    out.push_back({prefix + ".b", &blk.b});
    out.push_back({prefix + ".gamma", &blk.gamma});
    out.push_back({prefix + ".beta", &blk.beta});
  };
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    add_block("enc" + std::to_string(i) + ".c1", enc_[i].c1);
    add_block("enc" + std::to_string(i) + ".c2", enc_[i].c2);
  }
  add_block("bot.c1", bottleneck_.c1);
  add_block("bot.c2", bottleneck_.c2);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const std::string d = "dec" + std::to_string(i);
    out.push_back({d + ".up.w", &ups_[std::size_t(i)].w});
    out.push_back({d + ".up.b", &ups_[std::size_t(i)].b});
    add_block(d + ".c1", dec_[std::size_t(i)].c1);
    add_block(d + ".c2", dec_[std::size_t(i)].c2);
  }
  out.push_back({"head.w", &head_w_});
  out.push_back({"head.b", &head_b_});
  return out;
}

std::vector<UNet3D::NamedState> UNet3D::named_state() {
  std::vector<NamedState> out;
  auto add_block = [&](const std::string& prefix, ConvBlock& blk) {
    out.push_back({prefix + ".bn_mean", &blk.bn.running_mean});
    out.push_back({prefix + ".bn_var", &blk.bn.running_var});
  };
  for (std::size_t i = 0; i < enc_.size(); ++i) {
    add_block("enc" + std::to_string(i) + ".c1", enc_[i].c1);
    add_block("enc" + std::to_string(i) + ".c2", enc_[i].c2);
  }
  add_block("bot.c1", bottleneck_.c1);
  add_block("bot.c2", bottleneck_.c2);
  for (int i = cfg_.depth - 1; i >= 0; --i) {
    const std::string d = "dec" + std::to_string(i);
    add_block(d + ".c1", dec_[std::size_t(i)].c1);
    add_block(d + ".c2", dec_[std::size_t(i)].c2);
  }
  return out;
}

UNet3D build_net(const NetConfig& cfg, Rng& rng) { return UNet3D(cfg, rng); }

Tensor forward_semantic(UNet3D& net, const Tensor& patch, bool training) {
  if (net.config().out_channels < 2)
    throw ShapeError("forward_semantic requires a multi-class head");
  return softmax_channels(net.forward_logits(patch, training));
}

Tensor forward_instance(UNet3D& net, const Tensor& ct_patch, const Tensor& memory_patch,
                        bool training) {
  if (net.config().in_channels != 2)
    throw ShapeError("forward_instance requires a 2-channel net");
  if (ct_patch.shape() != memory_patch.shape())
    throw ShapeError("forward_instance: CT and memory patches must have equal shapes");
  return sigmoid(net.forward_logits(concat_channels(ct_patch, memory_patch), training));
}

}  // namespace spine
