#pragma once

#include <torch/torch.h>

#include <array>
#include <cstdint>

#include "fpdanet/backbone.hpp"
#include "fpdanet/layers.hpp"

namespace fpdanet {

struct FpanConfig {
  int64_t fused_width = 256;
  int64_t num_classes = 21;
  double head_dropout = 0.2;

  void validate() const;
  bool operator==(const FpanConfig&) const = default;
};

// Three fused levels, all `fused_width` wide, at strides 8 / 16 / 32.
struct FusedLevels {
  torch::Tensor l3;
  torch::Tensor l4;
  torch::Tensor l5;
};

// Nearest-neighbour x2 upsampling.
torch::Tensor upsample2(const torch::Tensor& x);

// Bilateral fusion. Passes are named by data flow:
//   top_down  (deep -> shallow, upsampling)
//     p5 = lateral5(c5)
//     p4 = smooth_td4(lateral4(c4) + up(p5))
//     p3 = smooth_td3(lateral3(c3) + up(p4))
//   bottom_up (shallow -> deep, stride-2 convs)
//     n3 = p3
//     n4 = smooth_bu4(p4 + down3(n3))
//     n5 = smooth_bu5(p5 + down4(n4))
// Laterals and downsamplers are plain convs with bias; smoothers are
// 3x3 conv + BN + ReLU.
class FpanImpl : public torch::nn::Module {
 public:
  FpanImpl(std::array<int64_t, 3> in_channels, int64_t fused_width);

  FusedLevels top_down(const StagePyramid& pyr);
  FusedLevels bottom_up(const FusedLevels& p);
  FusedLevels forward(const StagePyramid& pyr) { return bottom_up(top_down(pyr)); }

  int64_t fused_width() const { return width_; }

  torch::nn::Conv2d lateral3{nullptr}, lateral4{nullptr}, lateral5{nullptr};
  ConvBn smooth_td3{nullptr}, smooth_td4{nullptr};
  torch::nn::Conv2d down3{nullptr}, down4{nullptr};
  ConvBn smooth_bu4{nullptr}, smooth_bu5{nullptr};

 private:
  int64_t width_;
};
TORCH_MODULE(Fpan);

// Global-average-pool each level, concatenate (3W), dropout, linear -> raw logits.
class ClassifierHeadImpl : public torch::nn::Module {
 public:
  ClassifierHeadImpl(int64_t fused_width, int64_t num_classes, double dropout);

  torch::Tensor forward(const FusedLevels& levels);
  // (batch, 3W) pooled descriptor, before dropout.
  torch::Tensor pooled(const FusedLevels& levels) const;

  torch::nn::Dropout dropout{nullptr};
  torch::nn::Linear linear{nullptr};

 private:
  int64_t width_;
};
TORCH_MODULE(ClassifierHead);

}  // namespace fpdanet
