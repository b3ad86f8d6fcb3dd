#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <limits>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "fpdanet/checkpoint.hpp"
#include "fpdanet/data.hpp"
#include "fpdanet/image.hpp"
#include "fpdanet/metrics.hpp"
#include "fpdanet/model.hpp"
#include "fpdanet/schedule.hpp"

namespace fpdanet {

// mean_i [ logsumexp(logits_i) - logits_i[label_i] ], max-shifted.
// Throws InputError for labels outside [0, K).
torch::Tensor cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& labels);

struct OptimizerConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  bool operator==(const OptimizerConfig&) const = default;
};

struct TrainConfig {
  int64_t batch_size = 16;
  int64_t epochs = 200;
  uint64_t seed = 0;
  // total_epochs is overridden by `epochs` when training.
  LRScheduleConfig schedule;
  OptimizerConfig optimizer;
  AugmentConfig augment;
  int64_t eval_every = 1;
  // Max global gradient norm; 0 disables clipping.
  double grad_clip = 0.0;
  // When set, best.ckpt, last.ckpt and history.csv are written here.
  std::filesystem::path out_dir;
  bool verbose = false;

  void validate() const;
  LRScheduleConfig effective_schedule() const;
};

void to_json(nlohmann::json& j, const TrainConfig& cfg);
void from_json(const nlohmann::json& j, TrainConfig& cfg);

struct EpochRecord {
  int64_t epoch = 0;
  double train_loss = 0.0;
  double train_top1 = 0.0;  // running accuracy over the (augmented) training batches
  double val_top1 = std::numeric_limits<double>::quiet_NaN();
  double val_top5 = std::numeric_limits<double>::quiet_NaN();
  double lr = 0.0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;

  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  // Bitwise comparison (NaN == NaN).
  bool identical_to(const TrainHistory& other) const;
};

// Images of one split as (N, 3, H, W) float32.
struct TensorDataset {
  torch::Tensor images;
  std::vector<int64_t> labels;
  std::vector<std::string> warnings;

  int64_t size() const { return static_cast<int64_t>(labels.size()); }
};

// Decodes every record of `split` under `root` as unnormalized [0,1] inputs.
// Undecodable files are skipped with a warning.
TensorDataset load_split(const DatasetManifest& manifest, const std::filesystem::path& root, Split split,
                         int64_t height, int64_t width);

struct TrainResult {
  FPDANet model{nullptr};       // parameters after the final epoch
  FPDANet best_model{nullptr};  // highest validation top-1 (first occurrence)
  int64_t best_epoch = -1;
  double best_val_top1 = -1.0;
  NormalizationStats stats;
  TrainHistory history;
};

using ProgressFn = std::function<void(const EpochRecord&)>;

// Trains from a freshly built model (seeded by cfg.seed). The train split must
// be non-empty. Throws TrainingError on a non-finite loss, naming epoch,
// batch and learning rate.
TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest,
                  const std::filesystem::path& root, const ModelConfig& model_cfg,
                  const ProgressFn& progress = {});

// Lower-level entry point on preloaded [0,1] datasets (standardized internally).
TrainResult train_on(const TrainConfig& cfg, const TensorDataset& train_set, const TensorDataset* val_set,
                     const ModelConfig& model_cfg, const ProgressFn& progress = {});

// Eval-mode logits for standardized inputs, in batches.
torch::Tensor predict_logits(FPDANet& model, const torch::Tensor& images, int64_t batch_size = 64);

// Eval-mode forward over an already-standardized dataset.
EvalReport evaluate(FPDANet& model, const TensorDataset& standardized);

// Loads the checkpoint (normalization from its metadata) and evaluates `split`.
// Throws InputError when the split is empty.
EvalReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                    const std::filesystem::path& root, Split split);

// Metadata stored with trained checkpoints.
nlohmann::json checkpoint_metadata(const NormalizationStats& stats, int64_t epoch, double val_top1);
NormalizationStats stats_from_metadata(const nlohmann::json& metadata);

}  // namespace fpdanet
