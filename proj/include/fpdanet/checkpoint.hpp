#pragma once

#include <torch/torch.h>

#include <filesystem>
#include <map>
#include <nlohmann/json.hpp>
#include <string>

#include "fpdanet/model.hpp"

namespace fpdanet {

// Checkpoint archive, little-endian throughout:
//
//   magic        8 bytes  "FPDANET\0"
//   version      u32      (currently 1)
//   manifest     u64 byte length, then UTF-8 JSON:
//                  {"format": "fpdanet-checkpoint", "version": 1,
//                   "model": <ModelConfig>, "metadata": {...}}
//   count        u64      number of tensor records
//   per record:  u32 name length, name bytes,
//                u8 dtype (0 = float32, 1 = float64, 2 = int64),
//                u32 rank, i64 extent[rank],
//                raw contiguous element data
//
// Record names are the module-tree paths of every parameter and buffer, e.g.
//   backbone.stem.conv.weight
//   backbone.group2.block0.reduce_1x1.weight
//   backbone.group2.block0.reduce_1x1.bn.{weight,bias,running_mean,running_var,num_batches_tracked}
//   attention.g4.position.{alpha,proj_b.weight,proj_b.bias,...}
//   attention.g4.channel.beta
//   fpan.lateral3.{weight,bias}   fpan.smooth_td3.weight   fpan.smooth_td3.bn.*
//   head.linear.{weight,bias}
inline constexpr uint32_t kCheckpointVersion = 1;

struct TensorArchive {
  nlohmann::json manifest;
  std::map<std::string, torch::Tensor> tensors;
};

void write_tensor_archive(const std::filesystem::path& path, const TensorArchive& archive);
TensorArchive read_tensor_archive(const std::filesystem::path& path);

// Every parameter and buffer of `module`, keyed by path.
std::map<std::string, torch::Tensor> named_state(const torch::nn::Module& module);

struct Checkpoint {
  ModelConfig config;
  FPDANet model{nullptr};
  nlohmann::json metadata;
};

void save_checkpoint(const FPDANet& model, const std::filesystem::path& path,
                     const nlohmann::json& metadata = nlohmann::json::object());

// Rebuilds the model from the embedded config and copies every record in.
// Throws LoadError on bad magic/version, missing or unexpected keys, or shape
// mismatches (all offenders listed).
Checkpoint load_checkpoint(const std::filesystem::path& path);
// As above but builds from `expected` instead of the embedded config.
Checkpoint load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

// Copies archive tensors into `module`; same error contract as load_checkpoint.
void load_state(torch::nn::Module& module, const std::map<std::string, torch::Tensor>& state);

}  // namespace fpdanet
