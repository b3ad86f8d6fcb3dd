#pragma once

#include <torch/torch.h>

#include <array>
#include <filesystem>
#include <nlohmann/json.hpp>
#include <optional>
#include <string>
#include <vector>

namespace fpdanet {

// Per-channel statistics of the [0,1]-scaled training images.
struct NormalizationStats {
  std::array<double, 3> mean{0.0, 0.0, 0.0};
  std::array<double, 3> stddev{1.0, 1.0, 1.0};

  bool operator==(const NormalizationStats&) const = default;
};

void to_json(nlohmann::json& j, const NormalizationStats& s);
void from_json(const nlohmann::json& j, NormalizationStats& s);

// Decodes a grayscale or colour image as uint8 (channels, H, W), RGB order.
// Returns nullopt when the file cannot be decoded.
std::optional<torch::Tensor> read_image(const std::filesystem::path& path);

// uint8 (1 or 3, H, W) -> float32 (3, height, width) in [0,1]: bilinear
// resize, grayscale replicated to three channels, divided by 255.
torch::Tensor to_model_input(const torch::Tensor& image_u8, int64_t height, int64_t width);

// Mean and population standard deviation per channel over (N, 3, H, W)
// or a list of (3, H, W) tensors, accumulated in double precision.
NormalizationStats compute_stats(const std::vector<torch::Tensor>& images);

// (x - mean) / std per channel; works on (3, H, W) and (N, 3, H, W).
torch::Tensor standardize(const torch::Tensor& x, const NormalizationStats& stats);

// read_image + to_model_input + standardize. nullopt when undecodable.
std::optional<torch::Tensor> preprocess_file(const std::filesystem::path& path, int64_t height,
                                             int64_t width, const NormalizationStats& stats);

struct AugmentConfig {
  bool enabled = true;
  double flip_probability = 0.5;
  double max_rotation_deg = 10.0;
};

// Random horizontal flip + rotation in [-max, max] degrees (bilinear, zero
// fill) for each item of an (N, C, H, W) batch. Draws only from `gen`.
torch::Tensor augment_batch(const torch::Tensor& batch, const AugmentConfig& cfg, at::Generator& gen);

}  // namespace fpdanet
