#pragma once

#include <cstdint>
#include <nlohmann/json.hpp>
#include <vector>

namespace fpdanet {

// How the batch-size ratio is grouped when scaling the initial rates.
enum class LrScaling {
  // (batch_size / nbs) * lr_init -- nominal-batch scaling (default).
  kNominalBatch,
  // batch_size / (nbs * lr_init) -- the fraction as literally typeset; kept
  // for comparison only, it saturates at the upper clamp for every batch size.
  kLiteral,
};

struct LRScheduleConfig {
  double lr_max_init = 0.01;
  double lr_min_init = 0.0001;
  double lr_max_lim = 0.001;
  double lr_min_lim = 0.0001;
  int64_t nbs = 64;
  int64_t total_epochs = 200;
  double decay_factor = 0.1;
  // Fractions of total_epochs at which the rate is multiplied by decay_factor.
  std::vector<double> decay_milestones{0.6, 0.85};
  LrScaling scaling = LrScaling::kNominalBatch;

  void validate() const;
  // Epoch index of each milestone: round(fraction * total_epochs).
  std::vector<int64_t> milestone_epochs() const;
  bool operator==(const LRScheduleConfig&) const = default;
};

void to_json(nlohmann::json& j, const LRScheduleConfig& cfg);
void from_json(const nlohmann::json& j, LRScheduleConfig& cfg);

struct LRBounds {
  double lr_max = 0.0;
  double lr_min = 0.0;
};

// Batch-adaptive bounds:
//   mid_max = max(scale(batch, lr_max_init), lr_min_lim)
//   lr_max  = min(mid_max, lr_max_lim)
//   mid_min = max(scale(batch, lr_min_init), lr_min_lim / 100)
//   lr_min  = min(mid_min, lr_max_lim / 100)
// Throws InputError for batch_size < 1.
LRBounds compute_lr_bounds(const LRScheduleConfig& cfg, int64_t batch_size);

// Step decay from lr_max, clamped below at lr_min:
//   lr(e) = max(lr_max * decay_factor^k, lr_min), k = #milestones <= e.
// Throws InputError when epoch is outside [0, total_epochs).
double lr_at_epoch(const LRBounds& bounds, const LRScheduleConfig& cfg, int64_t epoch);

// One (epoch, lr) pair per epoch.
std::vector<std::pair<int64_t, double>> lr_table(const LRScheduleConfig& cfg, int64_t batch_size);

}  // namespace fpdanet
