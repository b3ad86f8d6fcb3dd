#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>
#include <functional>
#include <string>

#include "fpdanet/layers.hpp"

namespace fpdanet {

// Five-group residual feature extractor:
//   group 1 = stem (7x7/2 conv, BN, ReLU, 3x3/2 max pool)       stride 4
//   groups 2..5 = one conv block + (depth-1) identity blocks     strides 4, 8, 16, 32
struct BackboneConfig {
  int64_t input_channels = 3;
  int64_t stem_channels = 64;
  // Output width of groups 2..5 (after expansion).
  std::array<int64_t, 4> group_widths{256, 512, 1024, 2048};
  std::array<int64_t, 4> group_depths{3, 4, 6, 3};
  int64_t expansion = 4;

  // Throws ConfigError on non-positive entries or widths not divisible by expansion.
  void validate() const;

  int64_t bottleneck_width(size_t group_index) const { return group_widths.at(group_index) / expansion; }
  bool operator==(const BackboneConfig&) const = default;
};

// Outputs of groups 3, 4 and 5 (strides 8, 16, 32).
struct StagePyramid {
  torch::Tensor c3;
  torch::Tensor c4;
  torch::Tensor c5;
};

// Residual block whose shortcut is a strided 1x1 conv + BN, so it may change
// both width and resolution:
//   out = relu(expand(relu(conv3x3(relu(reduce(x))))) + shortcut(x))
class ConvBlockImpl : public torch::nn::Module {
 public:
  ConvBlockImpl(int64_t in_channels, int64_t mid_channels, int64_t out_channels, int64_t stride,
                std::string label = "conv_block");

  torch::Tensor forward(const torch::Tensor& x);
  // Main branch before the residual sum and final activation.
  torch::Tensor main_branch(const torch::Tensor& x);
  torch::Tensor shortcut(const torch::Tensor& x);

  const std::string& label() const { return label_; }

  ConvBn reduce_1x1{nullptr};
  ConvBn conv_3x3{nullptr};
  ConvBn expand_1x1{nullptr};
  ConvBn shortcut_1x1{nullptr};

 private:
  void check_input(const torch::Tensor& x) const;
  std::string label_;
};
TORCH_MODULE(ConvBlock);

// Shape-preserving residual block; the shortcut is the raw input.
class IdentityBlockImpl : public torch::nn::Module {
 public:
  // Throws ConfigError unless out_channels == in_channels.
  IdentityBlockImpl(int64_t in_channels, int64_t mid_channels, int64_t out_channels,
                    std::string label = "identity_block");

  torch::Tensor forward(const torch::Tensor& x);
  torch::Tensor main_branch(const torch::Tensor& x);

  const std::string& label() const { return label_; }

  ConvBn reduce_1x1{nullptr};
  ConvBn conv_3x3{nullptr};
  ConvBn expand_1x1{nullptr};

 private:
  std::string label_;
};
TORCH_MODULE(IdentityBlock);

class StemImpl : public torch::nn::Module {
 public:
  StemImpl(int64_t in_channels, int64_t out_channels);
  torch::Tensor forward(const torch::Tensor& x);

  ConvBn conv{nullptr};
};
TORCH_MODULE(Stem);

// A conv block followed by identity blocks, registered as block0, block1, ...
class ResidualGroupImpl : public torch::nn::Module {
 public:
  ResidualGroupImpl(int64_t in_channels, int64_t mid_channels, int64_t out_channels, int64_t depth,
                    int64_t stride, const std::string& label);
  torch::Tensor forward(torch::Tensor x);

  ConvBlock head{nullptr};
  std::vector<IdentityBlock> tail;
};
TORCH_MODULE(ResidualGroup);

class BackboneImpl : public torch::nn::Module {
 public:
  using StageHook = std::function<torch::Tensor(const torch::Tensor&)>;

  explicit BackboneImpl(const BackboneConfig& cfg);

  // x: (batch, input_channels, H, W) with H and W divisible by 32.
  // after_g4 / after_g5, when set, transform the group-4 / group-5 outputs
  // before they are tapped (and, for group 4, before group 5 consumes it).
  StagePyramid forward(const torch::Tensor& x, const StageHook& after_g4 = {},
                       const StageHook& after_g5 = {});

  const BackboneConfig& config() const { return cfg_; }
  // Channel count of c3, c4, c5.
  std::array<int64_t, 3> pyramid_channels() const;

  Stem stem{nullptr};
  ResidualGroup group2{nullptr};
  ResidualGroup group3{nullptr};
  ResidualGroup group4{nullptr};
  ResidualGroup group5{nullptr};

 private:
  BackboneConfig cfg_;
};
TORCH_MODULE(Backbone);

}  // namespace fpdanet
