#include "fpdanet/fpan.hpp"

#include <sstream>

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace F = torch::nn::functional;

namespace {

std::string dims(const torch::Tensor& t) {
  std::ostringstream os;
  os << t.sizes();
  return os.str();
}

void check_level(const torch::Tensor& t, int64_t channels, const char* name) {
  if (t.dim() != 4 || t.size(1) != channels) {
    throw ShapeError(std::string("fpan: level ") + name + " expected " + std::to_string(channels) +
                     " channels, got " + dims(t));
  }
}

void check_ratio(const torch::Tensor& fine, const torch::Tensor& coarse, const char* fine_name,
                 const char* coarse_name) {
  if (fine.size(2) != 2 * coarse.size(2) || fine.size(3) != 2 * coarse.size(3)) {
    throw ShapeError(std::string("fpan: level ") + fine_name + " " + dims(fine) +
                     " is not twice the resolution of " + coarse_name + " " + dims(coarse));
  }
}

torch::nn::Conv2d plain_conv(int64_t in, int64_t out, int64_t kernel, int64_t stride) {
  return torch::nn::Conv2d(
      torch::nn::Conv2dOptions(in, out, kernel).stride(stride).padding(kernel / 2).bias(true));
}

}  // namespace

void FpanConfig::validate() const {
  if (fused_width < 1) throw ConfigError("fpan: fused_width must be >= 1");
  if (num_classes < 2) throw ConfigError("fpan: num_classes must be >= 2");
  if (!(head_dropout >= 0.0 && head_dropout < 1.0)) {
    throw ConfigError("fpan: head_dropout must lie in [0, 1)");
  }
}

torch::Tensor upsample2(const torch::Tensor& x) {
  return F::interpolate(x, F::InterpolateFuncOptions()
                               .size(std::vector<int64_t>{2 * x.size(2), 2 * x.size(3)})
                               .mode(torch::kNearest));
}

FpanImpl::FpanImpl(std::array<int64_t, 3> in_channels, int64_t fused_width) : width_(fused_width) {
  if (fused_width < 1) throw ConfigError("fpan: fused_width must be >= 1");
  lateral3 = register_module("lateral3", plain_conv(in_channels[0], width_, 1, 1));
  lateral4 = register_module("lateral4", plain_conv(in_channels[1], width_, 1, 1));
  lateral5 = register_module("lateral5", plain_conv(in_channels[2], width_, 1, 1));
  smooth_td3 = register_module("smooth_td3", ConvBn(width_, width_, 3));
  smooth_td4 = register_module("smooth_td4", ConvBn(width_, width_, 3));
  down3 = register_module("down3", plain_conv(width_, width_, 3, 2));
  down4 = register_module("down4", plain_conv(width_, width_, 3, 2));
  smooth_bu4 = register_module("smooth_bu4", ConvBn(width_, width_, 3));
  smooth_bu5 = register_module("smooth_bu5", ConvBn(width_, width_, 3));
}

FusedLevels FpanImpl::top_down(const StagePyramid& pyr) {
  check_level(pyr.c3, lateral3->options.in_channels(), "c3");
  check_level(pyr.c4, lateral4->options.in_channels(), "c4");
  check_level(pyr.c5, lateral5->options.in_channels(), "c5");
  check_ratio(pyr.c4, pyr.c5, "c4", "c5");
  check_ratio(pyr.c3, pyr.c4, "c3", "c4");

  FusedLevels p;
  p.l5 = lateral5->forward(pyr.c5);
  p.l4 = torch::relu(smooth_td4->forward(lateral4->forward(pyr.c4) + upsample2(p.l5)));
  p.l3 = torch::relu(smooth_td3->forward(lateral3->forward(pyr.c3) + upsample2(p.l4)));
  return p;
}

FusedLevels FpanImpl::bottom_up(const FusedLevels& p) {
  check_level(p.l3, width_, "p3");
  check_level(p.l4, width_, "p4");
  check_level(p.l5, width_, "p5");

  FusedLevels n;
  n.l3 = p.l3;
  auto d3 = down3->forward(n.l3);
  if (d3.sizes() != p.l4.sizes()) {
    throw ShapeError("fpan: down(n3) " + dims(d3) + " does not match p4 " + dims(p.l4));
  }
  n.l4 = torch::relu(smooth_bu4->forward(p.l4 + d3));
  auto d4 = down4->forward(n.l4);
  if (d4.sizes() != p.l5.sizes()) {
    throw ShapeError("fpan: down(n4) " + dims(d4) + " does not match p5 " + dims(p.l5));
  }
  n.l5 = torch::relu(smooth_bu5->forward(p.l5 + d4));
  return n;
}

ClassifierHeadImpl::ClassifierHeadImpl(int64_t fused_width, int64_t num_classes, double dropout_p)
    : width_(fused_width) {
  dropout = register_module("dropout", torch::nn::Dropout(dropout_p));
  linear = register_module("linear", torch::nn::Linear(3 * fused_width, num_classes));
}

torch::Tensor ClassifierHeadImpl::pooled(const FusedLevels& levels) const {
  for (const auto* t : {&levels.l3, &levels.l4, &levels.l5}) {
    if (t->dim() != 4 || t->size(1) != width_) {
      throw ShapeError("head: expected " + std::to_string(width_) + "-channel levels, got " + dims(*t));
    }
  }
  return torch::cat({levels.l3.mean({2, 3}), levels.l4.mean({2, 3}), levels.l5.mean({2, 3})}, 1);
}

torch::Tensor ClassifierHeadImpl::forward(const FusedLevels& levels) {
  return linear->forward(dropout->forward(pooled(levels)));
}

}  // namespace fpdanet
