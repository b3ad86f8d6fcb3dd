#include "fpdanet/layers.hpp"

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace F = torch::nn::functional;

ConvBnImpl::ConvBnImpl(int64_t in_channels, int64_t out_channels, int64_t kernel, int64_t stride)
    : stride_(stride) {
  if (in_channels < 1 || out_channels < 1 || kernel < 1 || kernel % 2 == 0 || stride < 1) {
    throw ConfigError("ConvBn: invalid geometry in=" + std::to_string(in_channels) +
                      " out=" + std::to_string(out_channels) + " kernel=" + std::to_string(kernel) +
                      " stride=" + std::to_string(stride));
  }
  weight = register_parameter("weight", torch::empty({out_channels, in_channels, kernel, kernel}));
  bn = register_module("bn", torch::nn::BatchNorm2d(out_channels));
  torch::nn::init::kaiming_normal_(weight, 0.0, torch::kFanIn, torch::kReLU);
}

torch::Tensor ConvBnImpl::forward(const torch::Tensor& x) {
  const int64_t pad = weight.size(2) / 2;
  return bn->forward(F::conv2d(x, weight, F::Conv2dFuncOptions().stride(stride_).padding(pad)));
}

}  // namespace fpdanet
