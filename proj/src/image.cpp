#include "fpdanet/image.hpp"

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include <cmath>
#include <numbers>

#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace F = torch::nn::functional;

void to_json(nlohmann::json& j, const NormalizationStats& s) {
  j = nlohmann::json{{"mean", s.mean}, {"std", s.stddev}};
}

void from_json(const nlohmann::json& j, NormalizationStats& s) {
  s.mean = j.at("mean").get<std::array<double, 3>>();
  s.stddev = j.at("std").get<std::array<double, 3>>();
}

std::optional<torch::Tensor> read_image(const std::filesystem::path& path) {
  cv::Mat img = cv::imread(path.string(), cv::IMREAD_UNCHANGED);
  if (img.empty()) return std::nullopt;
  if (img.depth() != CV_8U) img.convertTo(img, CV_8U, img.depth() == CV_16U ? 1.0 / 257.0 : 1.0);
  if (img.channels() == 4) cv::cvtColor(img, img, cv::COLOR_BGRA2RGB);
  else if (img.channels() == 3) cv::cvtColor(img, img, cv::COLOR_BGR2RGB);
  else if (img.channels() != 1) return std::nullopt;
  if (!img.isContinuous()) img = img.clone();
  auto hwc = torch::from_blob(img.data, {img.rows, img.cols, img.channels()}, torch::kUInt8);
  return hwc.permute({2, 0, 1}).clone(at::MemoryFormat::Contiguous);
}

torch::Tensor to_model_input(const torch::Tensor& image_u8, int64_t height, int64_t width) {
  if (image_u8.dim() != 3 || (image_u8.size(0) != 1 && image_u8.size(0) != 3)) {
    throw InputError("image must be (1 or 3, H, W)");
  }
  auto x = image_u8.to(torch::kFloat).div(255.0).unsqueeze(0);
  if (x.size(2) != height || x.size(3) != width) {
    x = F::interpolate(x, F::InterpolateFuncOptions()
                              .size(std::vector<int64_t>{height, width})
                              .mode(torch::kBilinear)
                              .align_corners(false));
  }
  x = x.squeeze(0);
  if (x.size(0) == 1) x = x.expand({3, height, width});
  return x.contiguous();
}

NormalizationStats compute_stats(const std::vector<torch::Tensor>& images) {
  if (images.empty()) throw InputError("compute_stats: no images");
  std::array<double, 3> sum{}, sum_sq{};
  double count = 0.0;
  for (const auto& img : images) {
    auto x = img.to(torch::kDouble);
    if (x.dim() == 3) x = x.unsqueeze(0);
    if (x.dim() != 4 || x.size(1) != 3) throw InputError("compute_stats: expected 3-channel images");
    auto per_channel = x.transpose(0, 1).reshape({3, -1});
    for (int64_t c = 0; c < 3; ++c) {
      sum[c] += per_channel[c].sum().item<double>();
      sum_sq[c] += per_channel[c].square().sum().item<double>();
    }
    count += static_cast<double>(per_channel.size(1));
  }
  NormalizationStats s;
  for (size_t c = 0; c < 3; ++c) {
    s.mean[c] = sum[c] / count;
    const double var = std::max(sum_sq[c] / count - s.mean[c] * s.mean[c], 0.0);
    s.stddev[c] = var > 0.0 ? std::sqrt(var) : 1.0;
  }
  return s;
}

torch::Tensor standardize(const torch::Tensor& x, const NormalizationStats& stats) {
  auto opts = torch::TensorOptions().dtype(x.scalar_type());
  auto mean = torch::tensor(std::vector<double>(stats.mean.begin(), stats.mean.end())).to(opts);
  auto stddev = torch::tensor(std::vector<double>(stats.stddev.begin(), stats.stddev.end())).to(opts);
  if (x.dim() == 3) return (x - mean.view({3, 1, 1})) / stddev.view({3, 1, 1});
  if (x.dim() == 4) return (x - mean.view({1, 3, 1, 1})) / stddev.view({1, 3, 1, 1});
  throw InputError("standardize: expected (3, H, W) or (N, 3, H, W)");
}

std::optional<torch::Tensor> preprocess_file(const std::filesystem::path& path, int64_t height,
                                             int64_t width, const NormalizationStats& stats) {
  auto img = read_image(path);
  if (!img) return std::nullopt;
  return standardize(to_model_input(*img, height, width), stats);
}

torch::Tensor augment_batch(const torch::Tensor& batch, const AugmentConfig& cfg, at::Generator& gen) {
  if (!cfg.enabled) return batch;
  const int64_t n = batch.size(0);
  auto opts = torch::TensorOptions().dtype(batch.scalar_type());
  auto flip = torch::rand({n}, gen, opts) < cfg.flip_probability;
  auto angle = (torch::rand({n}, gen, opts) * 2.0 - 1.0) * (cfg.max_rotation_deg * std::numbers::pi / 180.0);

  auto x = torch::where(flip.view({n, 1, 1, 1}), batch.flip({3}), batch);
  if (cfg.max_rotation_deg <= 0.0) return x;
  auto cos = angle.cos(), sin = angle.sin(), zero = torch::zeros_like(angle);
  auto theta = torch::stack({torch::stack({cos, -sin, zero}, 1), torch::stack({sin, cos, zero}, 1)}, 1);
  auto grid = F::affine_grid(theta, {n, batch.size(1), batch.size(2), batch.size(3)}, false);
  return F::grid_sample(x, grid, F::GridSampleFuncOptions()
                                     .mode(torch::kBilinear)
                                     .padding_mode(torch::kZeros)
                                     .align_corners(false));
}

}  // namespace fpdanet
