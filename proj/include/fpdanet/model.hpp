#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <nlohmann/json.hpp>
#include <string>

#include "fpdanet/attention.hpp"
#include "fpdanet/backbone.hpp"
#include "fpdanet/fpan.hpp"

namespace fpdanet {

struct AttentionSites {
  bool g4 = true;
  bool g5 = true;

  bool any() const { return g4 || g5; }
  bool operator==(const AttentionSites&) const = default;
};

struct ModelConfig {
  std::string preset = "full";
  BackboneConfig backbone;
  AttentionSites attention_sites;
  int64_t attention_reduction = 8;
  FpanConfig fpan;
  int64_t input_height = 224;
  int64_t input_width = 224;

  // 224x224, widths 256..2048, depths [3,4,6,3], fused width 256.
  static ModelConfig full();
  // 64x64, widths 32..256, depths [1,1,1,1], fused width 64.
  static ModelConfig desk();
  // Throws ConfigError for unknown names.
  static ModelConfig from_preset(const std::string& name);

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& cfg);
// Starts from the preset named by j["preset"] (default "full") and applies
// whichever fields are present. Unknown keys raise ConfigError.
void from_json(const nlohmann::json& j, ModelConfig& cfg);

// Holds the attention sites that are enabled; absent sites register nothing,
// so the parameter tree has no attention.g4.* when g4 is off.
class AttentionSitesModuleImpl : public torch::nn::Module {
 public:
  AttentionSitesModuleImpl(const AttentionSites& sites, int64_t g4_channels, int64_t g5_channels,
                     int64_t reduction);

  DualAttention g4{nullptr};
  DualAttention g5{nullptr};
};
TORCH_MODULE(AttentionSitesModule);

class FPDANetImpl : public torch::nn::Module {
 public:
  explicit FPDANetImpl(const ModelConfig& cfg);

  // x: (batch, 3, H, W) at the configured input size -> (batch, num_classes) logits.
  // Dropout and BN batch statistics follow is_training().
  torch::Tensor forward(const torch::Tensor& x);

  // Backbone pyramid with attention applied at the enabled sites.
  StagePyramid features(const torch::Tensor& x);

  const ModelConfig& config() const { return cfg_; }

  Backbone backbone{nullptr};
  AttentionSitesModule attention{nullptr};
  Fpan fpan{nullptr};
  ClassifierHead head{nullptr};

 private:
  ModelConfig cfg_;
};
TORCH_MODULE(FPDANet);

// Deterministic, name-keyed initialization: each parameter draws from its own
// generator seeded by (seed, parameter name), so layers shared by two configs
// get identical values regardless of which other layers exist.
//   conv weights     N(0, 2 / fan_in)
//   linear weights   N(0, 1 / fan_in)
//   biases           0
//   BN scale / shift 1 / 0, except *.expand_1x1.bn.weight = 0
//   alpha, beta      0
void init_parameters(torch::nn::Module& module, uint64_t seed);

// Construct + init_parameters. Same (cfg, seed) gives bitwise-identical parameters.
FPDANet build_model(const ModelConfig& cfg, uint64_t seed);

// Trainable scalar count.
int64_t parameter_count(const torch::nn::Module& module);

// True when every parameter and buffer is finite.
bool all_finite(const torch::nn::Module& module);

}  // namespace fpdanet
