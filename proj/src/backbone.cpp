#include "fpdanet/backbone.hpp"

#include <sstream>

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace F = torch::nn::functional;

namespace {

std::string shape_str(at::IntArrayRef sizes) {
  std::ostringstream os;
  os << sizes;
  return os.str();
}

void check_channels(const torch::Tensor& x, int64_t expected, const std::string& label) {
  if (x.dim() != 4 || x.size(1) != expected) {
    throw ShapeError(label + ": expected input of shape (N, " + std::to_string(expected) +
                     ", H, W), got " + shape_str(x.sizes()));
  }
}

}  // namespace

void BackboneConfig::validate() const {
  if (input_channels < 1 || stem_channels < 1 || expansion < 1) {
    throw ConfigError("backbone: input_channels, stem_channels and expansion must be >= 1");
  }
  for (size_t i = 0; i < 4; ++i) {
    const auto group = "group" + std::to_string(i + 2);
    if (group_depths[i] < 1) throw ConfigError("backbone: " + group + " depth must be >= 1");
    if (group_widths[i] < expansion || group_widths[i] % expansion != 0) {
      throw ConfigError("backbone: " + group + " width " + std::to_string(group_widths[i]) +
                        " is not a positive multiple of expansion " + std::to_string(expansion));
    }
  }
}

ConvBlockImpl::ConvBlockImpl(int64_t in_channels, int64_t mid_channels, int64_t out_channels,
                             int64_t stride, std::string label)
    : label_(std::move(label)) {
  reduce_1x1 = register_module("reduce_1x1", ConvBn(in_channels, mid_channels, 1));
  conv_3x3 = register_module("conv_3x3", ConvBn(mid_channels, mid_channels, 3, stride));
  expand_1x1 = register_module("expand_1x1", ConvBn(mid_channels, out_channels, 1));
  shortcut_1x1 = register_module("shortcut_1x1", ConvBn(in_channels, out_channels, 1, stride));
}

void ConvBlockImpl::check_input(const torch::Tensor& x) const {
  check_channels(x, reduce_1x1->in_channels(), label_);
  if (shortcut_1x1->out_channels() != expand_1x1->out_channels() ||
      shortcut_1x1->in_channels() != reduce_1x1->in_channels() ||
      shortcut_1x1->stride() != conv_3x3->stride()) {
    throw ConfigError(label_ + ".shortcut_1x1: shortcut produces " +
                      std::to_string(shortcut_1x1->out_channels()) + " channels at stride " +
                      std::to_string(shortcut_1x1->stride()) + ", main branch produces " +
                      std::to_string(expand_1x1->out_channels()) + " at stride " +
                      std::to_string(conv_3x3->stride()));
  }
}

torch::Tensor ConvBlockImpl::main_branch(const torch::Tensor& x) {
  auto y = torch::relu(reduce_1x1->forward(x));
  y = torch::relu(conv_3x3->forward(y));
  return expand_1x1->forward(y);
}

torch::Tensor ConvBlockImpl::shortcut(const torch::Tensor& x) { return shortcut_1x1->forward(x); }

torch::Tensor ConvBlockImpl::forward(const torch::Tensor& x) {
  check_input(x);
  auto main = main_branch(x);
  auto side = shortcut(x);
  if (main.sizes() != side.sizes()) {
    throw ConfigError(label_ + ": main branch " + shape_str(main.sizes()) +
                      " does not match shortcut " + shape_str(side.sizes()));
  }
  return torch::relu(main + side);
}

IdentityBlockImpl::IdentityBlockImpl(int64_t in_channels, int64_t mid_channels,
                                     int64_t out_channels, std::string label)
    : label_(std::move(label)) {
  if (out_channels != in_channels) {
    throw ConfigError(label_ + ".expand_1x1: expands to " + std::to_string(out_channels) +
                      " channels but the block input has " + std::to_string(in_channels));
  }
  reduce_1x1 = register_module("reduce_1x1", ConvBn(in_channels, mid_channels, 1));
  conv_3x3 = register_module("conv_3x3", ConvBn(mid_channels, mid_channels, 3));
  expand_1x1 = register_module("expand_1x1", ConvBn(mid_channels, out_channels, 1));
}

torch::Tensor IdentityBlockImpl::main_branch(const torch::Tensor& x) {
  auto y = torch::relu(reduce_1x1->forward(x));
  y = torch::relu(conv_3x3->forward(y));
  return expand_1x1->forward(y);
}

torch::Tensor IdentityBlockImpl::forward(const torch::Tensor& x) {
  check_channels(x, reduce_1x1->in_channels(), label_);
  if (expand_1x1->out_channels() != x.size(1)) {
    throw ConfigError(label_ + ".expand_1x1: width " + std::to_string(expand_1x1->out_channels()) +
                      " differs from input width " + std::to_string(x.size(1)));
  }
  return torch::relu(main_branch(x) + x);
}

StemImpl::StemImpl(int64_t in_channels, int64_t out_channels) {
  conv = register_module("conv", ConvBn(in_channels, out_channels, 7, 2));
}

torch::Tensor StemImpl::forward(const torch::Tensor& x) {
  check_channels(x, conv->in_channels(), "stem");
  auto y = torch::relu(conv->forward(x));
  return F::max_pool2d(y, F::MaxPool2dFuncOptions(3).stride(2).padding(1));
}

ResidualGroupImpl::ResidualGroupImpl(int64_t in_channels, int64_t mid_channels,
                                     int64_t out_channels, int64_t depth, int64_t stride,
                                     const std::string& label) {
  head = register_module(
      "block0", ConvBlock(in_channels, mid_channels, out_channels, stride, label + ".block0"));
  for (int64_t i = 1; i < depth; ++i) {
    const auto name = "block" + std::to_string(i);
    tail.push_back(register_module(
        name, IdentityBlock(out_channels, mid_channels, out_channels, label + "." + name)));
  }
}

torch::Tensor ResidualGroupImpl::forward(torch::Tensor x) {
  x = head->forward(x);
  for (auto& block : tail) x = block->forward(x);
  return x;
}

BackboneImpl::BackboneImpl(const BackboneConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  stem = register_module("stem", Stem(cfg_.input_channels, cfg_.stem_channels));
  std::array<ResidualGroup*, 4> groups{&group2, &group3, &group4, &group5};
  int64_t in = cfg_.stem_channels;
  for (size_t i = 0; i < 4; ++i) {
    const auto name = "group" + std::to_string(i + 2);
    const int64_t stride = i == 0 ? 1 : 2;
    *groups[i] = register_module(name, ResidualGroup(in, cfg_.bottleneck_width(i), cfg_.group_widths[i],
                                                     cfg_.group_depths[i], stride, name));
    in = cfg_.group_widths[i];
  }
}

std::array<int64_t, 3> BackboneImpl::pyramid_channels() const {
  return {cfg_.group_widths[1], cfg_.group_widths[2], cfg_.group_widths[3]};
}

StagePyramid BackboneImpl::forward(const torch::Tensor& x, const StageHook& after_g4,
                                   const StageHook& after_g5) {
  if (x.dim() != 4) {
    throw InputError("backbone: expected a (batch, channels, H, W) input, got " + shape_str(x.sizes()));
  }
  if (x.size(2) % 32 != 0 || x.size(3) % 32 != 0 || x.size(2) == 0 || x.size(3) == 0) {
    throw InputError("backbone: input height and width must be positive multiples of 32, got " +
                     std::to_string(x.size(2)) + "x" + std::to_string(x.size(3)));
  }
  StagePyramid out;
  auto y = group2->forward(stem->forward(x));
  out.c3 = group3->forward(y);
  out.c4 = group4->forward(out.c3);
  if (after_g4) out.c4 = after_g4(out.c4);
  out.c5 = group5->forward(out.c4);
  if (after_g5) out.c5 = after_g5(out.c5);
  return out;
}

}  // namespace fpdanet
