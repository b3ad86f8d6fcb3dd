#include "fpdanet/attention.hpp"

#include <sstream>

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace {

void check_feature_map(const torch::Tensor& a, int64_t channels, const char* who) {
  if (a.dim() != 4 || a.size(1) != channels || a.size(2) * a.size(3) < 1) {
    std::ostringstream os;
    os << who << ": expected (batch, " << channels << ", H, W) with H*W >= 1, got " << a.sizes();
    throw ShapeError(os.str());
  }
}

}  // namespace

int64_t attention_key_width(int64_t channels, int64_t reduction) {
  if (reduction < 1) throw ConfigError("attention: reduction must be >= 1");
  if (channels / reduction < 1) {
    throw ConfigError("attention: " + std::to_string(channels) + " channels with reduction " +
                      std::to_string(reduction) + " leaves no query/key width");
  }
  return channels / reduction;
}

torch::Tensor stable_softmax_rows(const torch::Tensor& energy) {
  auto shifted = energy - std::get<0>(energy.max(-1, /*keepdim=*/true));
  auto e = shifted.exp();
  return e / e.sum(-1, /*keepdim=*/true);
}

PositionAttentionImpl::PositionAttentionImpl(int64_t channels, int64_t reduction)
    : channels_(channels) {
  const int64_t key = attention_key_width(channels, reduction);
  proj_b = register_module("proj_b", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, key, 1)));
  proj_c = register_module("proj_c", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, key, 1)));
  proj_d = register_module("proj_d", torch::nn::Conv2d(torch::nn::Conv2dOptions(channels, channels, 1)));
  alpha = register_parameter("alpha", torch::zeros({}));
}

torch::Tensor PositionAttentionImpl::attention_map(const torch::Tensor& a) {
  check_feature_map(a, channels_, "position attention");
  const auto n = a.size(2) * a.size(3);
  auto b = proj_b->forward(a).flatten(2);  // (batch, C/r, N)
  auto c = proj_c->forward(a).flatten(2);
  // energy[j, i] = C_j . B_i
  auto energy = torch::bmm(c.transpose(1, 2), b);
  TORCH_INTERNAL_ASSERT(energy.size(1) == n && energy.size(2) == n);
  return stable_softmax_rows(energy);
}

torch::Tensor PositionAttentionImpl::delta(const torch::Tensor& a) {
  auto s = attention_map(a);
  auto d = proj_d->forward(a).flatten(2);  // (batch, C, N)
  // out[:, j] = sum_i S[j, i] D[:, i]
  auto mixed = torch::bmm(d, s.transpose(1, 2));
  return alpha * mixed.view_as(a);
}

torch::Tensor PositionAttentionImpl::forward(const torch::Tensor& a) { return a + delta(a); }

ChannelAttentionImpl::ChannelAttentionImpl(int64_t channels) : channels_(channels) {
  if (channels < 1) throw ConfigError("channel attention: channels must be >= 1");
  beta = register_parameter("beta", torch::zeros({}));
}

torch::Tensor ChannelAttentionImpl::attention_map(const torch::Tensor& a) {
  check_feature_map(a, channels_, "channel attention");
  auto flat = a.flatten(2);  // (batch, C, N)
  auto gram = torch::bmm(flat, flat.transpose(1, 2));
  return stable_softmax_rows(gram);
}

torch::Tensor ChannelAttentionImpl::delta(const torch::Tensor& a) {
  auto x = attention_map(a);
  auto mixed = torch::bmm(x, a.flatten(2));
  return beta * mixed.view_as(a);
}

torch::Tensor ChannelAttentionImpl::forward(const torch::Tensor& a) { return a + delta(a); }

DualAttentionImpl::DualAttentionImpl(int64_t channels, int64_t reduction) {
  position = register_module("position", PositionAttention(channels, reduction));
  channel = register_module("channel", ChannelAttention(channels));
}

torch::Tensor DualAttentionImpl::forward(const torch::Tensor& a) {
  return a + position->delta(a) + channel->delta(a);
}

}  // namespace fpdanet
