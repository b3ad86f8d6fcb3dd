#pragma once

#include <torch/torch.h>

#include <cstdint>

namespace fpdanet {

// Width of the query/key projections for a `channels`-wide input.
// Throws ConfigError when reduction < 1 or channels / reduction < 1.
int64_t attention_key_width(int64_t channels, int64_t reduction);

// Row-wise softmax with the per-row maximum subtracted first.
torch::Tensor stable_softmax_rows(const torch::Tensor& energy);

// Position attention. With A reshaped to (C, N), N = H*W:
//   B = proj_b(A), C = proj_c(A)      (C/r, N)
//   D = proj_d(A)                     (C, N)
//   S[j, i] = softmax_i(B_i . C_j)    (N, N), row j = target position
//   E_j = alpha * sum_i S[j, i] D_i + A_j
// alpha starts at exactly zero, so a fresh module is the identity.
class PositionAttentionImpl : public torch::nn::Module {
 public:
  PositionAttentionImpl(int64_t channels, int64_t reduction = 8);

  torch::Tensor forward(const torch::Tensor& a);
  // alpha * sum_i S[j, i] D_i, shaped like `a`.
  torch::Tensor delta(const torch::Tensor& a);
  // S for each batch item: (batch, N, N).
  torch::Tensor attention_map(const torch::Tensor& a);

  torch::nn::Conv2d proj_b{nullptr};
  torch::nn::Conv2d proj_c{nullptr};
  torch::nn::Conv2d proj_d{nullptr};
  torch::Tensor alpha;

 private:
  int64_t channels_;
};
TORCH_MODULE(PositionAttention);

// Channel attention, no projections. With A reshaped to (C, N):
//   X[j, i] = softmax_i(A_i . A_j)    (C, C)
//   E_j = beta * sum_i X[j, i] A_i + A_j
class ChannelAttentionImpl : public torch::nn::Module {
 public:
  explicit ChannelAttentionImpl(int64_t channels);

  torch::Tensor forward(const torch::Tensor& a);
  torch::Tensor delta(const torch::Tensor& a);
  // X for each batch item: (batch, C, C).
  torch::Tensor attention_map(const torch::Tensor& a);

  torch::Tensor beta;

 private:
  int64_t channels_;
};
TORCH_MODULE(ChannelAttention);

// Parallel position + channel attention with the shared residual counted once:
//   out = a + alpha * PAM_delta(a) + beta * CAM_delta(a)
//       = PAM(a) + CAM(a) - a
class DualAttentionImpl : public torch::nn::Module {
 public:
  DualAttentionImpl(int64_t channels, int64_t reduction = 8);

  torch::Tensor forward(const torch::Tensor& a);

  PositionAttention position{nullptr};
  ChannelAttention channel{nullptr};
};
TORCH_MODULE(DualAttention);

}  // namespace fpdanet
