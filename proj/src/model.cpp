#include "fpdanet/model.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <set>

#include "fpdanet/errors.hpp"

namespace fpdanet {

using nlohmann::json;

ModelConfig ModelConfig::full() {
  ModelConfig cfg;
  cfg.preset = "full";
  cfg.backbone.stem_channels = 64;
  cfg.backbone.group_widths = {256, 512, 1024, 2048};
  cfg.backbone.group_depths = {3, 4, 6, 3};
  cfg.fpan.fused_width = 256;
  cfg.input_height = cfg.input_width = 224;
  return cfg;
}

ModelConfig ModelConfig::desk() {
  ModelConfig cfg;
  cfg.preset = "desk";
  cfg.backbone.stem_channels = 16;
  cfg.backbone.group_widths = {32, 64, 128, 256};
  cfg.backbone.group_depths = {1, 1, 1, 1};
  cfg.fpan.fused_width = 64;
  cfg.input_height = cfg.input_width = 64;
  return cfg;
}

ModelConfig ModelConfig::from_preset(const std::string& name) {
  if (name == "full") return full();
  if (name == "desk") return desk();
  throw ConfigError("unknown model preset '" + name + "' (expected full or desk)");
}

void ModelConfig::validate() const {
  backbone.validate();
  fpan.validate();
  if (input_height < 32 || input_width < 32 || input_height % 32 != 0 || input_width % 32 != 0) {
    throw ConfigError("model: input size " + std::to_string(input_height) + "x" +
                      std::to_string(input_width) + " must be positive multiples of 32");
  }
  if (attention_sites.g4) attention_key_width(backbone.group_widths[2], attention_reduction);
  if (attention_sites.g5) attention_key_width(backbone.group_widths[3], attention_reduction);
}

namespace {

void reject_unknown(const json& j, std::initializer_list<const char*> known, const std::string& where) {
  if (!j.is_object()) throw ConfigError(where + ": expected an object");
  std::set<std::string> allowed(known.begin(), known.end());
  for (const auto& [key, _] : j.items()) {
    if (!allowed.count(key)) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <typename T>
void read_if(const json& j, const char* key, T& out, const std::string& where) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

}  // namespace

void to_json(json& j, const ModelConfig& cfg) {
  json sites = json::array();
  if (cfg.attention_sites.g4) sites.push_back("g4");
  if (cfg.attention_sites.g5) sites.push_back("g5");
  j = json{
      {"preset", cfg.preset},
      {"input_size", {cfg.input_height, cfg.input_width}},
      {"backbone",
       {{"input_channels", cfg.backbone.input_channels},
        {"stem_channels", cfg.backbone.stem_channels},
        {"group_widths", cfg.backbone.group_widths},
        {"group_depths", cfg.backbone.group_depths},
        {"expansion", cfg.backbone.expansion}}},
      {"attention", {{"sites", sites}, {"reduction", cfg.attention_reduction}}},
      {"fpan",
       {{"fused_width", cfg.fpan.fused_width},
        {"num_classes", cfg.fpan.num_classes},
        {"head_dropout", cfg.fpan.head_dropout}}},
  };
}

void from_json(const json& j, ModelConfig& cfg) {
  reject_unknown(j, {"preset", "input_size", "backbone", "attention", "fpan"}, "model");
  cfg = ModelConfig::from_preset(j.value("preset", std::string("full")));
  if (j.contains("input_size")) {
    std::array<int64_t, 2> size{};
    read_if(j, "input_size", size, "model");
    cfg.input_height = size[0];
    cfg.input_width = size[1];
  }
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    reject_unknown(b, {"input_channels", "stem_channels", "group_widths", "group_depths", "expansion"},
                   "model.backbone");
    read_if(b, "input_channels", cfg.backbone.input_channels, "model.backbone");
    read_if(b, "stem_channels", cfg.backbone.stem_channels, "model.backbone");
    read_if(b, "group_widths", cfg.backbone.group_widths, "model.backbone");
    read_if(b, "group_depths", cfg.backbone.group_depths, "model.backbone");
    read_if(b, "expansion", cfg.backbone.expansion, "model.backbone");
  }
  if (j.contains("attention")) {
    const auto& a = j.at("attention");
    reject_unknown(a, {"sites", "reduction"}, "model.attention");
    if (a.contains("sites")) {
      std::vector<std::string> sites;
      read_if(a, "sites", sites, "model.attention");
      cfg.attention_sites = {false, false};
      for (const auto& s : sites) {
        if (s == "g4") {
          cfg.attention_sites.g4 = true;
        } else if (s == "g5") {
          cfg.attention_sites.g5 = true;
        } else {
          throw ConfigError("model.attention.sites: unknown site '" + s + "' (expected g4 or g5)");
        }
      }
    }
    read_if(a, "reduction", cfg.attention_reduction, "model.attention");
  }
  if (j.contains("fpan")) {
    const auto& f = j.at("fpan");
    reject_unknown(f, {"fused_width", "num_classes", "head_dropout"}, "model.fpan");
    read_if(f, "fused_width", cfg.fpan.fused_width, "model.fpan");
    read_if(f, "num_classes", cfg.fpan.num_classes, "model.fpan");
    read_if(f, "head_dropout", cfg.fpan.head_dropout, "model.fpan");
  }
}

AttentionSitesModuleImpl::AttentionSitesModuleImpl(const AttentionSites& sites, int64_t g4_channels,
                                                   int64_t g5_channels, int64_t reduction) {
  if (sites.g4) g4 = register_module("g4", DualAttention(g4_channels, reduction));
  if (sites.g5) g5 = register_module("g5", DualAttention(g5_channels, reduction));
}

FPDANetImpl::FPDANetImpl(const ModelConfig& cfg) : cfg_(cfg) {
  cfg_.validate();
  backbone = register_module("backbone", Backbone(cfg_.backbone));
  const auto channels = backbone->pyramid_channels();
  attention = register_module("attention",
                              AttentionSitesModule(cfg_.attention_sites, channels[1], channels[2],
                                                   cfg_.attention_reduction));
  fpan = register_module("fpan", Fpan(channels, cfg_.fpan.fused_width));
  head = register_module("head", ClassifierHead(cfg_.fpan.fused_width, cfg_.fpan.num_classes,
                                                cfg_.fpan.head_dropout));
}

StagePyramid FPDANetImpl::features(const torch::Tensor& x) {
  if (x.dim() != 4 || x.size(1) != cfg_.backbone.input_channels || x.size(2) != cfg_.input_height ||
      x.size(3) != cfg_.input_width) {
    std::ostringstream os;
    os << "model: expected input (batch, " << cfg_.backbone.input_channels << ", "
       << cfg_.input_height << ", " << cfg_.input_width << "), got " << x.sizes();
    throw InputError(os.str());
  }
  Backbone::Impl::StageHook g4_hook, g5_hook;
  if (attention->g4) g4_hook = [this](const torch::Tensor& t) { return attention->g4->forward(t); };
  if (attention->g5) g5_hook = [this](const torch::Tensor& t) { return attention->g5->forward(t); };
  return backbone->forward(x, g4_hook, g5_hook);
}

torch::Tensor FPDANetImpl::forward(const torch::Tensor& x) {
  return head->forward(fpan->forward(features(x)));
}

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

uint64_t fnv1a(const std::string& s) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

}  // namespace

void init_parameters(torch::nn::Module& module, uint64_t seed) {
  torch::NoGradGuard no_grad;
  for (auto& item : module.named_parameters(/*recurse=*/true)) {
    const std::string& name = item.key();
    auto& p = item.value();
    if (ends_with(name, "alpha") || ends_with(name, "beta") || ends_with(name, "bias")) {
      p.zero_();
    } else if (ends_with(name, ".bn.weight")) {
      p.fill_(ends_with(name, "expand_1x1.bn.weight") ? 0.0 : 1.0);
    } else if (p.dim() >= 2) {
      const double fan_in = static_cast<double>(p[0].numel());
      const double gain = p.dim() == 4 ? 2.0 : 1.0;
      auto gen = at::make_generator<at::CPUGeneratorImpl>(splitmix64(seed ^ fnv1a(name)));
      auto draw = torch::randn(p.sizes(), gen, torch::TensorOptions().dtype(torch::kDouble));
      p.copy_(draw * std::sqrt(gain / fan_in));
    } else {
      throw ConfigError("init_parameters: no rule for parameter '" + name + "'");
    }
  }
}

FPDANet build_model(const ModelConfig& cfg, uint64_t seed) {
  FPDANet model(cfg);
  init_parameters(*model, seed);
  return model;
}

int64_t parameter_count(const torch::nn::Module& module) {
  int64_t n = 0;
  for (const auto& p : module.parameters()) n += p.numel();
  return n;
}

bool all_finite(const torch::nn::Module& module) {
  for (const auto& p : module.parameters()) {
    if (!torch::isfinite(p).all().item<bool>()) return false;
  }
  for (const auto& b : module.buffers()) {
    if (b.is_floating_point() && !torch::isfinite(b).all().item<bool>()) return false;
  }
  return true;
}

}  // namespace fpdanet
