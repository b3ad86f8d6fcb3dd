#include "fpdanet/trainer.hpp"

#include <ATen/CPUGeneratorImpl.h>

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

#include "fpdanet/errors.hpp"

namespace fpdanet {

using nlohmann::json;

torch::Tensor cross_entropy_loss(const torch::Tensor& logits, const torch::Tensor& labels) {
  if (logits.dim() != 2 || labels.dim() != 1 || labels.size(0) != logits.size(0) || logits.size(0) == 0) {
    throw InputError("cross_entropy_loss: expected (batch, K) logits and (batch) labels");
  }
  const int64_t k = logits.size(1);
  if ((labels < 0).any().item<bool>() || (labels >= k).any().item<bool>()) {
    throw InputError("cross_entropy_loss: labels must lie in [0, " + std::to_string(k) + ")");
  }
  auto shift = std::get<0>(logits.max(1, /*keepdim=*/true)).detach();
  auto lse = (logits - shift).exp().sum(1).log() + shift.squeeze(1);
  auto picked = logits.gather(1, labels.to(torch::kLong).unsqueeze(1)).squeeze(1);
  return (lse - picked).mean();
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
  if (grad_clip < 0) throw ConfigError("train: grad_clip must be >= 0");
  effective_schedule().validate();
}

LRScheduleConfig TrainConfig::effective_schedule() const {
  auto s = schedule;
  s.total_epochs = epochs;
  return s;
}

void to_json(json& j, const TrainConfig& cfg) {
  j = json{{"batch_size", cfg.batch_size},
           {"epochs", cfg.epochs},
           {"seed", cfg.seed},
           {"schedule", cfg.schedule},
           {"optimizer",
            {{"beta1", cfg.optimizer.beta1},
             {"beta2", cfg.optimizer.beta2},
             {"eps", cfg.optimizer.eps},
             {"weight_decay", cfg.optimizer.weight_decay}}},
           {"augment",
            {{"enabled", cfg.augment.enabled},
             {"flip_probability", cfg.augment.flip_probability},
             {"max_rotation_deg", cfg.augment.max_rotation_deg}}},
           {"eval_every", cfg.eval_every},
           {"grad_clip", cfg.grad_clip}};
}

namespace {

template <typename T>
void assign(const json& value, T& out, const std::string& where) {
  try {
    out = value.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

}  // namespace

void from_json(const json& j, TrainConfig& cfg) {
  if (!j.is_object()) throw ConfigError("train: expected an object");
  for (const auto& [key, value] : j.items()) {
    if (key == "batch_size") assign(value, cfg.batch_size, "train.batch_size");
    else if (key == "epochs") assign(value, cfg.epochs, "train.epochs");
    else if (key == "seed") assign(value, cfg.seed, "train.seed");
    else if (key == "schedule") from_json(value, cfg.schedule);
    else if (key == "eval_every") assign(value, cfg.eval_every, "train.eval_every");
    else if (key == "grad_clip") assign(value, cfg.grad_clip, "train.grad_clip");
    else if (key == "optimizer") {
      if (!value.is_object()) throw ConfigError("train.optimizer: expected an object");
      for (const auto& [k, v] : value.items()) {
        if (k == "beta1") assign(v, cfg.optimizer.beta1, "train.optimizer.beta1");
        else if (k == "beta2") assign(v, cfg.optimizer.beta2, "train.optimizer.beta2");
        else if (k == "eps") assign(v, cfg.optimizer.eps, "train.optimizer.eps");
        else if (k == "weight_decay") assign(v, cfg.optimizer.weight_decay, "train.optimizer.weight_decay");
        else throw ConfigError("train.optimizer: unknown key '" + k + "'");
      }
    } else if (key == "augment") {
      if (!value.is_object()) throw ConfigError("train.augment: expected an object");
      for (const auto& [k, v] : value.items()) {
        if (k == "enabled") assign(v, cfg.augment.enabled, "train.augment.enabled");
        else if (k == "flip_probability") assign(v, cfg.augment.flip_probability, "train.augment.flip_probability");
        else if (k == "max_rotation_deg") assign(v, cfg.augment.max_rotation_deg, "train.augment.max_rotation_deg");
        else throw ConfigError("train.augment: unknown key '" + k + "'");
      }
    } else {
      throw ConfigError("train: unknown key '" + key + "'");
    }
  }
}

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os << "epoch,train_loss,train_top1,val_top1,val_top5,lr\n";
  char buf[256];
  for (const auto& r : epochs) {
    std::snprintf(buf, sizeof(buf), "%lld,%.17g,%.17g,%.17g,%.17g,%.17g\n", static_cast<long long>(r.epoch),
                  r.train_loss, r.train_top1, r.val_top1, r.val_top5, r.lr);
    os << buf;
  }
  return os.str();
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("history: cannot open " + path.string() + " for writing");
  os << to_csv();
}

bool TrainHistory::identical_to(const TrainHistory& other) const {
  if (epochs.size() != other.epochs.size()) return false;
  auto same = [](double a, double b) { return std::memcmp(&a, &b, sizeof(double)) == 0; };
  for (size_t i = 0; i < epochs.size(); ++i) {
    const auto &a = epochs[i], &b = other.epochs[i];
    if (a.epoch != b.epoch || !same(a.train_loss, b.train_loss) || !same(a.train_top1, b.train_top1) ||
        !same(a.val_top1, b.val_top1) || !same(a.val_top5, b.val_top5) || !same(a.lr, b.lr)) {
      return false;
    }
  }
  return true;
}

TensorDataset load_split(const DatasetManifest& manifest, const std::filesystem::path& root, Split split,
                         int64_t height, int64_t width) {
  TensorDataset ds;
  std::vector<torch::Tensor> images;
  for (const auto& r : manifest.select(split)) {
    auto img = read_image(root / r.path);
    if (!img) {
      ds.warnings.push_back("skipping undecodable image " + (root / r.path).string());
      continue;
    }
    images.push_back(to_model_input(*img, height, width));
    ds.labels.push_back(r.label);
  }
  ds.images = images.empty() ? torch::empty({0, 3, height, width}) : torch::stack(images);
  return ds;
}

json checkpoint_metadata(const NormalizationStats& stats, int64_t epoch, double val_top1) {
  json j{{"normalization", stats}, {"epoch", epoch}};
  if (std::isfinite(val_top1)) j["val_top1"] = val_top1;
  return j;
}

NormalizationStats stats_from_metadata(const json& metadata) {
  if (!metadata.contains("normalization")) return {};
  try {
    return metadata.at("normalization").get<NormalizationStats>();
  } catch (const json::exception& e) {
    throw LoadError(std::string("checkpoint metadata: bad normalization entry: ") + e.what());
  }
}

torch::Tensor predict_logits(FPDANet& model, const torch::Tensor& images, int64_t batch_size) {
  torch::NoGradGuard no_grad;
  model->eval();
  const auto dtype = model->parameters().front().scalar_type();
  std::vector<torch::Tensor> chunks;
  for (int64_t start = 0; start < images.size(0); start += batch_size) {
    const int64_t end = std::min(images.size(0), start + batch_size);
    chunks.push_back(model->forward(images.slice(0, start, end).to(dtype)));
  }
  if (chunks.empty()) return torch::empty({0, model->config().fpan.num_classes});
  return torch::cat(chunks);
}

EvalReport evaluate(FPDANet& model, const TensorDataset& standardized) {
  if (standardized.size() == 0) throw InputError("evaluate: split is empty");
  return make_report(predict_logits(model, standardized.images), standardized.labels);
}

EvalReport evaluate(const std::filesystem::path& checkpoint, const DatasetManifest& manifest,
                    const std::filesystem::path& root, Split split) {
  auto ck = load_checkpoint(checkpoint);
  auto ds = load_split(manifest, root, split, ck.config.input_height, ck.config.input_width);
  if (ds.size() == 0) throw InputError("evaluate: split '" + std::string(split_name(split)) + "' is empty");
  ds.images = standardize(ds.images, stats_from_metadata(ck.metadata));
  return evaluate(ck.model, ds);
}

namespace {

FPDANet clone_model(const FPDANet& src) {
  FPDANet copy(src->config());
  load_state(*copy, named_state(*src));
  return copy;
}

void set_lr(torch::optim::AdamW& opt, double lr) {
  for (auto& group : opt.param_groups()) static_cast<torch::optim::AdamWOptions&>(group.options()).lr(lr);
}

}  // namespace

TrainResult train_on(const TrainConfig& cfg, const TensorDataset& train_set, const TensorDataset* val_set,
                     const ModelConfig& model_cfg, const ProgressFn& progress) {
  cfg.validate();
  model_cfg.validate();
  if (train_set.size() == 0) throw ConfigError("train: the training split is empty");

  torch::manual_seed(cfg.seed);
  auto gen = at::make_generator<at::CPUGeneratorImpl>(cfg.seed * 0x9e3779b97f4a7c15ULL + 1);

  TrainResult result;
  result.stats = compute_stats({train_set.images});
  const auto train_x = standardize(train_set.images, result.stats);
  const auto train_y = torch::tensor(train_set.labels, torch::kLong);
  TensorDataset val_std;
  const bool have_val = val_set != nullptr && val_set->size() > 0;
  if (have_val) {
    val_std.images = standardize(val_set->images, result.stats);
    val_std.labels = val_set->labels;
  }

  auto model = build_model(model_cfg, cfg.seed);
  torch::optim::AdamW optimizer(model->parameters(),
                                torch::optim::AdamWOptions(0.0)
                                    .betas({cfg.optimizer.beta1, cfg.optimizer.beta2})
                                    .eps(cfg.optimizer.eps)
                                    .weight_decay(cfg.optimizer.weight_decay));

  const auto schedule = cfg.effective_schedule();
  const auto bounds = compute_lr_bounds(schedule, cfg.batch_size);
  const int64_t n = train_set.size();

  for (int64_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const double lr = lr_at_epoch(bounds, schedule, epoch);
    set_lr(optimizer, lr);
    model->train();

    auto order = torch::randperm(n, gen, torch::TensorOptions().dtype(torch::kLong));
    double loss_sum = 0.0;
    int64_t correct = 0;
    int64_t batch_index = 0;
    for (int64_t start = 0; start < n; start += cfg.batch_size, ++batch_index) {
      auto idx = order.slice(0, start, std::min(n, start + cfg.batch_size));
      auto x = augment_batch(train_x.index_select(0, idx), cfg.augment, gen);
      auto y = train_y.index_select(0, idx);

      optimizer.zero_grad();
      auto logits = model->forward(x);
      auto loss = fpdanet::cross_entropy_loss(logits, y);
      const double loss_value = loss.item<double>();
      if (!std::isfinite(loss_value)) {
        std::ostringstream os;
        os << "non-finite loss " << loss_value << " at epoch " << epoch << ", batch " << batch_index
           << ", lr " << lr;
        throw TrainingError(os.str());
      }
      loss.backward();
      if (cfg.grad_clip > 0) torch::nn::utils::clip_grad_norm_(model->parameters(), cfg.grad_clip);
      optimizer.step();

      loss_sum += loss_value * static_cast<double>(idx.size(0));
      correct += logits.detach().argmax(1).eq(y).sum().item<int64_t>();
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = lr;
    rec.train_loss = loss_sum / static_cast<double>(n);
    rec.train_top1 = static_cast<double>(correct) / static_cast<double>(n);

    const bool last = epoch + 1 == cfg.epochs;
    if (have_val && ((epoch + 1) % cfg.eval_every == 0 || last)) {
      const auto report = evaluate(model, val_std);
      rec.val_top1 = report.top1;
      rec.val_top5 = report.top5;
      if (report.top1 > result.best_val_top1) {
        result.best_val_top1 = report.top1;
        result.best_epoch = epoch;
        result.best_model = clone_model(model);
      }
    }
    result.history.epochs.push_back(rec);
    if (progress) progress(rec);
  }

  result.model = model;
  if (!result.best_model) {
    result.best_model = clone_model(model);
    result.best_epoch = cfg.epochs - 1;
  }

  if (!cfg.out_dir.empty()) {
    std::filesystem::create_directories(cfg.out_dir);
    save_checkpoint(result.model, cfg.out_dir / "last.ckpt",
                    checkpoint_metadata(result.stats, cfg.epochs - 1, result.history.epochs.back().val_top1));
    save_checkpoint(result.best_model, cfg.out_dir / "best.ckpt",
                    checkpoint_metadata(result.stats, result.best_epoch, result.best_val_top1));
    result.history.write_csv(cfg.out_dir / "history.csv");
  }
  return result;
}

TrainResult train(const TrainConfig& cfg, const DatasetManifest& manifest, const std::filesystem::path& root,
                  const ModelConfig& model_cfg, const ProgressFn& progress) {
  cfg.validate();
  model_cfg.validate();
  auto train_set = load_split(manifest, root, Split::kTrain, model_cfg.input_height, model_cfg.input_width);
  if (train_set.size() == 0) throw ConfigError("train: the training split is empty");
  auto val_set = load_split(manifest, root, Split::kVal, model_cfg.input_height, model_cfg.input_width);
  return train_on(cfg, train_set, &val_set, model_cfg, progress);
}

}  // namespace fpdanet
