#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace fpdanet {

// Bias-free convolution followed by batch normalization.
//
// Parameters are registered directly on this module, so a layer mounted as
// "reduce_1x1" serializes as "reduce_1x1.weight" and "reduce_1x1.bn.*".
// Padding is "same" for odd kernels: out = ceil(in / stride).
class ConvBnImpl : public torch::nn::Module {
 public:
  ConvBnImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride = 1);

  torch::Tensor forward(const torch::Tensor& x);

  int64_t in_channels() const { return weight.size(1); }
  int64_t out_channels() const { return weight.size(0); }
  int64_t stride() const { return stride_; }

  torch::Tensor weight;
  torch::nn::BatchNorm2d bn{nullptr};

 private:
  int64_t stride_;
};
TORCH_MODULE(ConvBn);

// Output spatial extent of a "same"-padded convolution.
constexpr int64_t same_out_extent(int64_t in, int64_t stride) { return (in + stride - 1) / stride; }

}  // namespace fpdanet
