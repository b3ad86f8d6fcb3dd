#pragma once

#include <filesystem>
#include <iosfwd>
#include <nlohmann/json.hpp>
#include <string>
#include <vector>

#include "fpdanet/model.hpp"
#include "fpdanet/trainer.hpp"

namespace fpdanet {

// Environment variable naming the default config file for train / lr-dump.
inline constexpr const char* kConfigEnvVar = "FPDANET_CONFIG";

// Full run configuration as read from a config file:
//   {"model": {...ModelConfig...}, "train": {...TrainConfig...}}
struct RunConfig {
  ModelConfig model = ModelConfig::desk();
  TrainConfig train;
};

// Defaults for the given model preset, as JSON (every overridable key present).
nlohmann::json default_run_config_json(const std::string& preset = "desk");

// Applies "dotted.key=value" to `config`. The key must already exist; the
// value is parsed as JSON when possible, otherwise taken as a string.
// Throws ConfigError for malformed overrides or unknown keys.
void apply_override(nlohmann::json& config, const std::string& assignment);

// Defaults (preset taken from the file's model.preset when present), merged with
// the file, then overrides. An empty path means defaults only.
RunConfig load_run_config(const std::filesystem::path& file, const std::vector<std::string>& overrides = {});

struct ClassScore {
  std::string abbreviation;
  int64_t label = 0;
  double score = 0.0;
};

// Softmax scores of one image, highest first (ties by class index), truncated
// to top_k. Throws InputError when the image cannot be decoded.
std::vector<ClassScore> predict(const std::filesystem::path& checkpoint, const std::filesystem::path& image,
                                int64_t top_k);
std::vector<ClassScore> predict(FPDANet& model, const NormalizationStats& stats,
                                const std::filesystem::path& image, int64_t top_k);

// (epoch, lr) CSV with header "epoch,lr"; values in shortest round-trip form.
std::string lr_dump_csv(const LRScheduleConfig& schedule, int64_t batch_size);

// Entry point. Verbs: synth, train, eval, predict, lr-dump, report.
// Returns 0 on success, 2 on usage errors, 1 on runtime failures.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace fpdanet
