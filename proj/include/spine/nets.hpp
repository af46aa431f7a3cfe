#pragma once

#include <string>
#include <vector>

#include "spine/optimizer.hpp"
#include "spine/rng.hpp"
#include "spine/tensor.hpp"

namespace spine {

// Shared encoder-decoder template for both stages. Stage 1 (semantic) uses
// in=1/out=4 with a channel-softmax head; stage 2 (instance) uses in=2/out=1
// with a sigmoid head. Channel widths are configuration.
struct NetConfig {
  int in_channels = 1;
  int out_channels = 4;
  int depth = 3;
  int base_width = 8;
  int width_growth = 2;

  friend bool operator==(const NetConfig&, const NetConfig&) = default;
};

void validate(const NetConfig& cfg);

// conv3d + batchnorm + ReLU
struct ConvBlock {
  Parameter w, b, gamma, beta;
  BNState<float> bn;

  ConvBlock() = default;
  ConvBlock(std::int64_t cin, std::int64_t cout, Rng& rng);
  Tensor forward(const Tensor& x, bool training);
};

class UNet3D {
 public:
  UNet3D(const NetConfig& cfg, Rng& rng);
  UNet3D(UNet3D&&) = default;
  UNet3D& operator=(UNet3D&&) = default;
  UNet3D(const UNet3D&) = delete;

  const NetConfig& config() const { return cfg_; }

  // Raw head output [N, out_channels, D, H, W]. Spatial extents must be
  // divisible by 2^depth.
  Tensor forward_logits(const Tensor& x, bool training);

  std::vector<Parameter*> parameters();
  std::int64_t parameter_count();

  struct NamedParam {
    std::string name;
    Parameter* param;
  };
  struct NamedState {
    std::string name;
    std::vector<float>* values;
  };
  std::vector<NamedParam> named_parameters();
  std::vector<NamedState> named_state();  // batch-norm running statistics

 private:
  struct Level {
    ConvBlock c1, c2;
  };
  struct Up {
    Parameter w, b;
  };

  NetConfig cfg_;
  std::vector<Level> enc_;
  Level bottleneck_;
  std::vector<Up> ups_;          // index i upsamples into encoder level i's resolution
  std::vector<Level> dec_;
  Parameter head_w_, head_b_;
};

UNet3D build_net(const NetConfig& cfg, Rng& rng);

// Per-voxel class posteriors (softmax over 4 channels).
Tensor forward_semantic(UNet3D& net, const Tensor& patch, bool training = false);

// Probability map of the next vertebra given the memory channel; inputs are
// concatenated in (CT, memory) order.
Tensor forward_instance(UNet3D& net, const Tensor& ct_patch, const Tensor& memory_patch,
                        bool training = false);

}  // namespace spine
