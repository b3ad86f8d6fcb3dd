#pragma once

#include <torch/torch.h>

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace fpdanet {

// Position of `label` when the row is sorted by descending score, ties broken
// by lower class index (0 = best). Throws InputError for labels out of range.
int64_t label_rank(std::span<const double> scores, int64_t label);

// Fraction of rows whose label is among the k highest scores (tie rule as in
// label_rank). logits: (batch, K). Requires 1 <= k <= K.
double topk_accuracy(const torch::Tensor& logits, std::span<const int64_t> labels, int64_t k);

// Arg-max per row, lowest index on ties.
std::vector<int64_t> predict_labels(const torch::Tensor& logits);

struct ConfusionResult {
  // confusion[truth][prediction]
  std::vector<std::vector<int64_t>> confusion;
  // diag / row sum; 1.0 for classes with no samples (see `absent`).
  std::vector<double> recall;
  std::vector<bool> absent;
};

ConfusionResult confusion_and_recall(std::span<const int64_t> predictions,
                                     std::span<const int64_t> labels, int64_t num_classes);

struct FnrResult {
  std::vector<double> per_class;  // 1 - recall
  double mean = 0.0;              // over classes not flagged absent
};

// `absent` may be empty (all classes present).
FnrResult false_negative_rates(std::span<const double> recall, const std::vector<bool>& absent = {});

struct EvalReport {
  int64_t num_classes = 0;
  int64_t n_samples = 0;
  double top1 = 0.0;
  double top5 = 0.0;
  std::vector<int64_t> support;
  std::vector<double> per_class_recall;
  std::vector<double> per_class_fnr;
  // Not the recall above: 2PR/(P+R), with precision 1.0 for never-predicted classes.
  std::vector<double> per_class_f1;
  std::vector<bool> absent;
  double mean_fnr = 0.0;
  std::vector<std::vector<int64_t>> confusion;

  bool operator==(const EvalReport&) const = default;
};

// Top-5 uses min(5, K).
EvalReport make_report(const torch::Tensor& logits, std::span<const int64_t> labels);

// Per-class fnr(a) - fnr(b), followed by the mean-FNR difference.
std::vector<double> fnr_difference(const EvalReport& a, const EvalReport& b);

enum class ReportFormat { kText, kCsv, kSvg };

// Throws InputError for anything but text/csv/svg.
ReportFormat parse_report_format(const std::string& name);

// Class rows follow label order; names come from the section taxonomy when K = 21.
std::string render_report_text(const EvalReport& r);
// Header: row,abbreviation,support,recall,fnr,f1,absent,top1,top5,mean_fnr
// then one row per class (row = class index, last three columns empty) and a
// final row "summary,ALL,<n_samples>,,,,,<top1>,<top5>,<mean_fnr>".
// Values are printed with 17 significant digits.
std::string render_report_csv(const EvalReport& r);
// Bar chart of per-class FNR: one <rect class="bar"> per class, height proportional to fnr.
std::string render_report_svg(const EvalReport& r);

void emit_report(const EvalReport& r, ReportFormat format, const std::filesystem::path& path);

// Reads the CSV layout back; the confusion matrix is not part of it and is left empty.
EvalReport parse_report_csv(const std::filesystem::path& path);

}  // namespace fpdanet
