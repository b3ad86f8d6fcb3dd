#include "fpdanet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fpdanet/errors.hpp"
#include "fpdanet/image.hpp"
#include "fpdanet/metrics.hpp"
#include "fpdanet/synth.hpp"

namespace fpdanet {

namespace fs = std::filesystem;
using nlohmann::json;

json default_run_config_json(const std::string& preset) {
  RunConfig rc;
  rc.model = ModelConfig::from_preset(preset);
  return json{{"model", rc.model}, {"train", rc.train}};
}

namespace {

std::pair<std::string, std::string> split_assignment(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ConfigError("override '" + assignment + "' is not of the form dotted.key=value");
  }
  return {assignment.substr(0, eq), assignment.substr(eq + 1)};
}

json::json_pointer dotted_pointer(const std::string& key) {
  std::string ptr;
  std::istringstream parts(key);
  std::string part;
  while (std::getline(parts, part, '.')) {
    if (part.empty()) throw ConfigError("override key '" + key + "' has an empty component");
    ptr += "/" + part;
  }
  return json::json_pointer(ptr);
}

}  // namespace

void apply_override(json& config, const std::string& assignment) {
  const auto [key, raw] = split_assignment(assignment);
  const auto ptr = dotted_pointer(key);
  if (!config.contains(ptr)) throw ConfigError("unknown config key '" + key + "'");
  json value;
  try {
    value = json::parse(raw);
  } catch (const json::parse_error&) {
    value = raw;
  }
  config[ptr] = value;
}

RunConfig load_run_config(const fs::path& file, const std::vector<std::string>& overrides) {
  json from_file = json::object();
  if (!file.empty()) {
    std::ifstream is(file);
    if (!is) throw ConfigError("cannot open config file " + file.string());
    try {
      from_file = json::parse(is);
    } catch (const json::parse_error& e) {
      throw ConfigError("config file " + file.string() + ": " + e.what());
    }
    if (!from_file.is_object()) throw ConfigError("config file " + file.string() + ": expected an object");
    for (const auto& [key, _] : from_file.items()) {
      if (key != "model" && key != "train") throw ConfigError("config file: unknown section '" + key + "'");
    }
  }

  std::string preset = "desk";
  if (from_file.contains("model") && from_file["model"].contains("preset")) {
    preset = from_file["model"]["preset"].get<std::string>();
  }
  for (const auto& o : overrides) {
    const auto [key, raw] = split_assignment(o);
    if (key == "model.preset") preset = json::accept(raw) ? json::parse(raw).get<std::string>() : raw;
  }

  json config = default_run_config_json(preset);
  config.merge_patch(from_file);
  for (const auto& o : overrides) apply_override(config, o);

  RunConfig rc;
  rc.model = config.at("model").get<ModelConfig>();
  rc.train = config.at("train").get<TrainConfig>();
  rc.model.validate();
  rc.train.validate();
  return rc;
}

std::vector<ClassScore> predict(FPDANet& model, const NormalizationStats& stats, const fs::path& image,
                                int64_t top_k) {
  const auto& cfg = model->config();
  const int64_t k = cfg.fpan.num_classes;
  if (top_k < 1 || top_k > k) throw InputError("predict: top must lie in [1, " + std::to_string(k) + "]");
  auto x = preprocess_file(image, cfg.input_height, cfg.input_width, stats);
  if (!x) throw InputError("predict: cannot decode image " + image.string());
  auto logits = predict_logits(model, x->unsqueeze(0)).to(torch::kDouble);
  auto probs = torch::softmax(logits[0], 0).contiguous();
  const auto* p = probs.data_ptr<double>();

  std::vector<ClassScore> scores;
  for (int64_t c = 0; c < k; ++c) {
    std::string name = k == kNumSections ? std::string(section_taxonomy()[static_cast<size_t>(c)].abbreviation)
                                         : "class" + std::to_string(c);
    scores.push_back({std::move(name), c, p[c]});
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const ClassScore& a, const ClassScore& b) { return a.score > b.score; });
  scores.resize(static_cast<size_t>(top_k));
  return scores;
}

std::vector<ClassScore> predict(const fs::path& checkpoint, const fs::path& image, int64_t top_k) {
  auto ck = load_checkpoint(checkpoint);
  return predict(ck.model, stats_from_metadata(ck.metadata), image, top_k);
}

std::string lr_dump_csv(const LRScheduleConfig& schedule, int64_t batch_size) {
  std::ostringstream os;
  os << "epoch,lr\n";
  char buf[64];
  for (const auto& [epoch, lr] : lr_table(schedule, batch_size)) {
    const auto end = std::to_chars(buf, buf + sizeof(buf), lr).ptr;
    os << epoch << ',' << std::string_view(buf, static_cast<size_t>(end - buf)) << '\n';
  }
  return os.str();
}

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

RunConfig load_run_config_or_usage(const fs::path& file, const std::vector<std::string>& overrides) {
  try {
    return load_run_config(file, overrides);
  } catch (const ConfigError& e) {
    throw UsageError(e.what());
  }
}

fs::path config_path_or_env(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv(kConfigEnvVar); env != nullptr && *env != '\0') return env;
  return {};
}

DatasetManifest resolve_manifest(const fs::path& data_root, const std::string& manifest_flag, uint64_t split_seed,
                                 std::ostream& err) {
  const fs::path manifest_path = manifest_flag.empty() ? data_root / "manifest.tsv" : fs::path(manifest_flag);
  DatasetManifest m;
  if (fs::exists(manifest_path)) {
    m = read_manifest(manifest_path);
  } else {
    m = scan_dataset(data_root);
  }
  for (const auto& d : m.unknown_directories) err << "warning: unknown class directory " << d << " ignored\n";
  const bool unassigned = std::any_of(m.records.begin(), m.records.end(),
                                      [](const ManifestRecord& r) { return r.split == Split::kUnassigned; });
  if (unassigned) m = split_manifest(m, {7, 2, 1}, split_seed);
  for (const auto& w : m.warnings) err << "warning: " << w << '\n';
  return m;
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("cannot open " + path.string() + " for writing");
  os << text;
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"FPDANet fetal ultrasound section classifier"};
  app.name("fpdanet");
  app.require_subcommand(1);

  // synth
  auto* synth = app.add_subcommand("synth", "Generate the synthetic 21-class dataset");
  SynthSpec synth_spec;
  std::string synth_out;
  uint64_t synth_split_seed = 0;
  synth->add_option("--classes", synth_spec.num_classes, "Number of classes")->capture_default_str();
  synth->add_option("--per-class", synth_spec.images_per_class, "Images per class")->capture_default_str();
  synth->add_option("--seed", synth_spec.seed, "Render seed")->capture_default_str();
  synth->add_option("--size", synth_spec.height, "Image height and width")->capture_default_str();
  synth->add_option("--speckle", synth_spec.speckle, "Speckle standard deviation")->capture_default_str();
  synth->add_option("--split-seed", synth_split_seed, "Seed of the 7:2:1 split")->capture_default_str();
  synth->add_option("--out", synth_out, "Output directory")->required();

  // train
  auto* train_cmd = app.add_subcommand("train", "Train a model");
  std::string train_config, train_data, train_manifest, train_out;
  std::vector<std::string> train_set;
  uint64_t train_split_seed = 0;
  train_cmd->add_option("--config", train_config, "Config file (default: $FPDANET_CONFIG)");
  train_cmd->add_option("--data", train_data, "Dataset root (<root>/<ABBREV>/*.png)")->required();
  train_cmd->add_option("--manifest", train_manifest, "Manifest file (default: <data>/manifest.tsv)");
  train_cmd->add_option("--out", train_out, "Output directory for checkpoints and history")->required();
  train_cmd->add_option("--set", train_set, "Config override dotted.key=value (repeatable)");
  train_cmd->add_option("--split-seed", train_split_seed, "Seed used when the manifest has no splits");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a split");
  std::string eval_ckpt, eval_data, eval_manifest, eval_split = "test", eval_out, eval_format = "csv";
  uint64_t eval_split_seed = 0;
  eval_cmd->add_option("--checkpoint", eval_ckpt, "Checkpoint file")->required();
  eval_cmd->add_option("--data", eval_data, "Dataset root")->required();
  eval_cmd->add_option("--manifest", eval_manifest, "Manifest file (default: <data>/manifest.tsv)");
  eval_cmd->add_option("--split", eval_split, "train | val | test")->capture_default_str();
  eval_cmd->add_option("--out", eval_out, "Report output path");
  eval_cmd->add_option("--format", eval_format, "text | csv | svg")->capture_default_str();
  eval_cmd->add_option("--split-seed", eval_split_seed, "Seed used when the manifest has no splits");

  // predict
  auto* predict_cmd = app.add_subcommand("predict", "Rank the classes for one image");
  std::string predict_ckpt, predict_image;
  int64_t predict_top = 5;
  predict_cmd->add_option("--checkpoint", predict_ckpt, "Checkpoint file")->required();
  predict_cmd->add_option("--image", predict_image, "Image file")->required();
  predict_cmd->add_option("--top", predict_top, "Number of classes to print")->capture_default_str();

  // lr-dump
  auto* lr_cmd = app.add_subcommand("lr-dump", "Print the learning-rate schedule as CSV");
  int64_t lr_batch = 0;
  std::string lr_config, lr_out;
  std::vector<std::string> lr_set;
  bool lr_literal = false;
  lr_cmd->add_option("--batch-size", lr_batch, "Batch size")->required();
  lr_cmd->add_option("--config", lr_config, "Config file (default: $FPDANET_CONFIG)");
  lr_cmd->add_option("--set", lr_set, "Config override dotted.key=value (repeatable)");
  lr_cmd->add_option("--out", lr_out, "CSV output path (default: stdout)");
  lr_cmd->add_flag("--literal", lr_literal, "Use the literal batch/(nbs*lr_init) grouping");

  // report
  auto* report_cmd = app.add_subcommand("report", "Render a saved report CSV");
  std::string report_in, report_format = "text", report_out;
  report_cmd->add_option("--input", report_in, "Report CSV written by eval")->required();
  report_cmd->add_option("--format", report_format, "text | csv | svg")->capture_default_str();
  report_cmd->add_option("--out", report_out, "Output path (default: stdout)");

  try {
    std::vector<std::string> args;
    for (int i = argc - 1; i >= 1; --i) args.emplace_back(argv[i]);
    app.parse(args);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n" << app.help();
    return 2;
  }

  try {
    if (synth->parsed()) {
      synth_spec.width = synth_spec.height;
      auto data = synth_generate(synth_spec);
      auto manifest = split_manifest(synth_write(data, synth_out), {7, 2, 1}, synth_split_seed);
      write_manifest(manifest, fs::path(synth_out) / "manifest.tsv");
      const auto totals = manifest.split_totals();
      out << "images=" << data.images.size() << " train=" << totals[0] << " val=" << totals[1]
          << " test=" << totals[2] << " manifest=" << (fs::path(synth_out) / "manifest.tsv").string() << '\n';
    } else if (train_cmd->parsed()) {
      auto rc = load_run_config_or_usage(config_path_or_env(train_config), train_set);
      rc.train.out_dir = train_out;
      auto manifest = resolve_manifest(train_data, train_manifest, train_split_seed, err);
      auto result = train(rc.train, manifest, train_data, rc.model, [&out](const EpochRecord& r) {
        char line[256];
        std::snprintf(line, sizeof(line), "epoch=%lld loss=%.6f train_top1=%.4f val_top1=%.4f val_top5=%.4f lr=%.6g\n",
                      static_cast<long long>(r.epoch), r.train_loss, r.train_top1, r.val_top1, r.val_top5, r.lr);
        out << line << std::flush;
      });
      out << "best_epoch=" << result.best_epoch << " best_val_top1=" << result.best_val_top1
          << " checkpoint=" << (fs::path(train_out) / "best.ckpt").string() << '\n';
    } else if (eval_cmd->parsed()) {
      const auto format = parse_report_format(eval_format);
      auto manifest = resolve_manifest(eval_data, eval_manifest, eval_split_seed, err);
      auto report = evaluate(eval_ckpt, manifest, eval_data, parse_split(eval_split));
      for (int64_t c = 0; c < report.num_classes; ++c) {
        if (report.absent[static_cast<size_t>(c)]) {
          err << "warning: class " << c << " has no samples in split " << eval_split
              << "; recall reported as 1.0\n";
        }
      }
      if (!eval_out.empty()) emit_report(report, format, eval_out);
      out << "samples=" << report.n_samples << " top1=" << report.top1 << " top5=" << report.top5
          << " mean_fnr=" << report.mean_fnr << '\n';
    } else if (predict_cmd->parsed()) {
      char line[128];
      for (const auto& s : predict(predict_ckpt, predict_image, predict_top)) {
        std::snprintf(line, sizeof(line), "%s %.9f\n", s.abbreviation.c_str(), s.score);
        out << line;
      }
    } else if (lr_cmd->parsed()) {
      auto rc = load_run_config_or_usage(config_path_or_env(lr_config), lr_set);
      auto schedule = rc.train.effective_schedule();
      if (lr_literal) schedule.scaling = LrScaling::kLiteral;
      const auto csv = lr_dump_csv(schedule, lr_batch);
      if (lr_out.empty()) out << csv;
      else write_text(lr_out, csv);
    } else if (report_cmd->parsed()) {
      const auto report = parse_report_csv(report_in);
      const auto format = parse_report_format(report_format);
      if (report_out.empty()) {
        out << (format == ReportFormat::kText  ? render_report_text(report)
                : format == ReportFormat::kCsv ? render_report_csv(report)
                                               : render_report_svg(report));
      } else {
        emit_report(report, format, report_out);
      }
    }
  } catch (const UsageError& e) {
    const auto* sub = app.get_subcommands().empty() ? &app : app.get_subcommands().front();
    err << "error: " << e.what() << "\n\n" << sub->help();
    return 2;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}

}  // namespace fpdanet
