#include "fpdanet/schedule.hpp"

#include <algorithm>
#include <cmath>

#include "fpdanet/errors.hpp"

namespace fpdanet {

using nlohmann::json;

void LRScheduleConfig::validate() const {
  if (!(lr_min_init > 0.0 && lr_min_init <= lr_max_init)) {
    throw ConfigError("schedule: need 0 < lr_min_init <= lr_max_init");
  }
  if (!(lr_min_lim > 0.0 && lr_min_lim <= lr_max_lim)) {
    throw ConfigError("schedule: need 0 < lr_min_lim <= lr_max_lim");
  }
  if (nbs < 1) throw ConfigError("schedule: nbs must be >= 1");
  if (total_epochs < 1) throw ConfigError("schedule: total_epochs must be >= 1");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) {
    throw ConfigError("schedule: decay_factor must lie in (0, 1]");
  }
  for (double m : decay_milestones) {
    if (!(m > 0.0 && m < 1.0)) throw ConfigError("schedule: milestones must be fractions in (0, 1)");
  }
  if (!std::is_sorted(decay_milestones.begin(), decay_milestones.end())) {
    throw ConfigError("schedule: milestones must be ascending");
  }
}

std::vector<int64_t> LRScheduleConfig::milestone_epochs() const {
  std::vector<int64_t> out;
  out.reserve(decay_milestones.size());
  for (double m : decay_milestones) out.push_back(std::llround(m * static_cast<double>(total_epochs)));
  return out;
}

void to_json(json& j, const LRScheduleConfig& cfg) {
  j = json{{"lr_max_init", cfg.lr_max_init},
           {"lr_min_init", cfg.lr_min_init},
           {"lr_max_lim", cfg.lr_max_lim},
           {"lr_min_lim", cfg.lr_min_lim},
           {"nbs", cfg.nbs},
           {"total_epochs", cfg.total_epochs},
           {"decay_factor", cfg.decay_factor},
           {"decay_milestones", cfg.decay_milestones},
           {"scaling", cfg.scaling == LrScaling::kLiteral ? "literal" : "nominal_batch"}};
}

void from_json(const json& j, LRScheduleConfig& cfg) {
  if (!j.is_object()) throw ConfigError("schedule: expected an object");
  for (const auto& [key, value] : j.items()) {
    try {
      if (key == "lr_max_init") cfg.lr_max_init = value.get<double>();
      else if (key == "lr_min_init") cfg.lr_min_init = value.get<double>();
      else if (key == "lr_max_lim") cfg.lr_max_lim = value.get<double>();
      else if (key == "lr_min_lim") cfg.lr_min_lim = value.get<double>();
      else if (key == "nbs") cfg.nbs = value.get<int64_t>();
      else if (key == "total_epochs") cfg.total_epochs = value.get<int64_t>();
      else if (key == "decay_factor") cfg.decay_factor = value.get<double>();
      else if (key == "decay_milestones") cfg.decay_milestones = value.get<std::vector<double>>();
      else if (key == "scaling") {
        const auto s = value.get<std::string>();
        if (s == "nominal_batch") cfg.scaling = LrScaling::kNominalBatch;
        else if (s == "literal") cfg.scaling = LrScaling::kLiteral;
        else throw ConfigError("schedule.scaling: expected nominal_batch or literal, got '" + s + "'");
      } else {
        throw ConfigError("schedule: unknown key '" + key + "'");
      }
    } catch (const json::exception& e) {
      throw ConfigError("schedule." + key + ": " + e.what());
    }
  }
}

namespace {

double scaled(const LRScheduleConfig& cfg, int64_t batch_size, double lr_init) {
  const double batch = static_cast<double>(batch_size);
  const double nbs = static_cast<double>(cfg.nbs);
  if (cfg.scaling == LrScaling::kLiteral) return batch / (nbs * lr_init);
  return batch / nbs * lr_init;
}

}  // namespace

LRBounds compute_lr_bounds(const LRScheduleConfig& cfg, int64_t batch_size) {
  if (batch_size < 1) throw InputError("schedule: batch size must be >= 1, got " + std::to_string(batch_size));
  cfg.validate();
  const double mid_max = std::max(scaled(cfg, batch_size, cfg.lr_max_init), cfg.lr_min_lim);
  const double mid_min = std::max(scaled(cfg, batch_size, cfg.lr_min_init), cfg.lr_min_lim / 100.0);
  return {std::min(mid_max, cfg.lr_max_lim), std::min(mid_min, cfg.lr_max_lim / 100.0)};
}

double lr_at_epoch(const LRBounds& bounds, const LRScheduleConfig& cfg, int64_t epoch) {
  if (epoch < 0 || epoch >= cfg.total_epochs) {
    throw InputError("schedule: epoch " + std::to_string(epoch) + " outside [0, " +
                     std::to_string(cfg.total_epochs) + ")");
  }
  double lr = bounds.lr_max;
  for (int64_t m : cfg.milestone_epochs()) {
    if (epoch >= m) lr *= cfg.decay_factor;
  }
  return std::max(lr, bounds.lr_min);
}

std::vector<std::pair<int64_t, double>> lr_table(const LRScheduleConfig& cfg, int64_t batch_size) {
  const auto bounds = compute_lr_bounds(cfg, batch_size);
  std::vector<std::pair<int64_t, double>> table;
  table.reserve(static_cast<size_t>(cfg.total_epochs));
  for (int64_t e = 0; e < cfg.total_epochs; ++e) table.emplace_back(e, lr_at_epoch(bounds, cfg, e));
  return table;
}

}  // namespace fpdanet
