#include "fpdanet/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "fpdanet/data.hpp"
#include "fpdanet/errors.hpp"

namespace fpdanet {

namespace {

std::vector<double> row_scores(const torch::Tensor& logits_cpu_double, int64_t row) {
  auto r = logits_cpu_double[row];
  const auto* p = r.data_ptr<double>();
  return std::vector<double>(p, p + r.numel());
}

torch::Tensor as_double_matrix(const torch::Tensor& logits) {
  if (logits.dim() != 2) throw InputError("metrics: logits must be (batch, classes)");
  return logits.detach().to(torch::kCPU, torch::kDouble).contiguous();
}

std::string class_name(int64_t c, int64_t num_classes) {
  if (num_classes == kNumSections) return std::string(section_taxonomy()[static_cast<size_t>(c)].abbreviation);
  return "class" + std::to_string(c);
}

std::string fmt(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace

int64_t label_rank(std::span<const double> scores, int64_t label) {
  const auto k = static_cast<int64_t>(scores.size());
  if (label < 0 || label >= k) {
    throw InputError("metrics: label " + std::to_string(label) + " outside [0, " + std::to_string(k) + ")");
  }
  const double truth = scores[static_cast<size_t>(label)];
  int64_t rank = 0;
  for (int64_t j = 0; j < k; ++j) {
    const double s = scores[static_cast<size_t>(j)];
    if (s > truth || (s == truth && j < label)) ++rank;
  }
  return rank;
}

double topk_accuracy(const torch::Tensor& logits, std::span<const int64_t> labels, int64_t k) {
  auto m = as_double_matrix(logits);
  if (m.size(0) != static_cast<int64_t>(labels.size())) {
    throw InputError("metrics: logits and labels differ in length");
  }
  if (k < 1 || k > m.size(1)) {
    throw InputError("metrics: k must lie in [1, " + std::to_string(m.size(1)) + "], got " + std::to_string(k));
  }
  if (labels.empty()) throw InputError("metrics: no samples");
  int64_t hits = 0;
  for (int64_t i = 0; i < m.size(0); ++i) {
    const auto scores = row_scores(m, i);
    if (label_rank(scores, labels[static_cast<size_t>(i)]) < k) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

std::vector<int64_t> predict_labels(const torch::Tensor& logits) {
  auto m = as_double_matrix(logits);
  std::vector<int64_t> out;
  out.reserve(static_cast<size_t>(m.size(0)));
  for (int64_t i = 0; i < m.size(0); ++i) {
    const auto scores = row_scores(m, i);
    out.push_back(std::max_element(scores.begin(), scores.end()) - scores.begin());
  }
  return out;
}

ConfusionResult confusion_and_recall(std::span<const int64_t> predictions,
                                     std::span<const int64_t> labels, int64_t num_classes) {
  if (predictions.size() != labels.size()) {
    throw InputError("metrics: predictions and labels differ in length");
  }
  if (num_classes < 1) throw InputError("metrics: num_classes must be >= 1");
  const auto k = static_cast<size_t>(num_classes);
  ConfusionResult r;
  r.confusion.assign(k, std::vector<int64_t>(k, 0));
  for (size_t i = 0; i < labels.size(); ++i) {
    const auto t = labels[i], p = predictions[i];
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes) {
      throw InputError("metrics: class index out of range at sample " + std::to_string(i));
    }
    ++r.confusion[static_cast<size_t>(t)][static_cast<size_t>(p)];
  }
  r.recall.resize(k);
  r.absent.resize(k);
  for (size_t c = 0; c < k; ++c) {
    int64_t row = 0;
    for (auto v : r.confusion[c]) row += v;
    r.absent[c] = row == 0;
    r.recall[c] = row == 0 ? 1.0 : static_cast<double>(r.confusion[c][c]) / static_cast<double>(row);
  }
  return r;
}

FnrResult false_negative_rates(std::span<const double> recall, const std::vector<bool>& absent) {
  if (!absent.empty() && absent.size() != recall.size()) {
    throw InputError("metrics: absent mask length differs from recall length");
  }
  FnrResult r;
  r.per_class.reserve(recall.size());
  double sum = 0.0;
  int64_t present = 0;
  for (size_t c = 0; c < recall.size(); ++c) {
    if (!(recall[c] >= 0.0 && recall[c] <= 1.0)) throw InputError("metrics: recall outside [0, 1]");
    r.per_class.push_back(1.0 - recall[c]);
    if (absent.empty() || !absent[c]) {
      sum += r.per_class.back();
      ++present;
    }
  }
  r.mean = present > 0 ? sum / static_cast<double>(present) : 0.0;
  return r;
}

EvalReport make_report(const torch::Tensor& logits, std::span<const int64_t> labels) {
  auto m = as_double_matrix(logits);
  EvalReport r;
  r.num_classes = m.size(1);
  r.n_samples = m.size(0);
  r.top1 = topk_accuracy(m, labels, 1);
  r.top5 = topk_accuracy(m, labels, std::min<int64_t>(5, r.num_classes));

  const auto preds = predict_labels(m);
  auto cr = confusion_and_recall(preds, labels, r.num_classes);
  const auto fnr = false_negative_rates(cr.recall, cr.absent);
  const auto k = static_cast<size_t>(r.num_classes);
  r.support.resize(k);
  r.per_class_f1.resize(k);
  for (size_t c = 0; c < k; ++c) {
    int64_t row = 0, col = 0;
    for (size_t j = 0; j < k; ++j) {
      row += cr.confusion[c][j];
      col += cr.confusion[j][c];
    }
    r.support[c] = row;
    const double precision = col == 0 ? 1.0 : static_cast<double>(cr.confusion[c][c]) / static_cast<double>(col);
    const double denom = precision + cr.recall[c];
    r.per_class_f1[c] = denom > 0.0 ? 2.0 * precision * cr.recall[c] / denom : 0.0;
  }
  r.per_class_recall = std::move(cr.recall);
  r.absent = std::move(cr.absent);
  r.confusion = std::move(cr.confusion);
  r.per_class_fnr = fnr.per_class;
  r.mean_fnr = fnr.mean;
  return r;
}

std::vector<double> fnr_difference(const EvalReport& a, const EvalReport& b) {
  if (a.num_classes != b.num_classes) throw InputError("metrics: reports differ in class count");
  std::vector<double> out;
  for (size_t c = 0; c < a.per_class_fnr.size(); ++c) out.push_back(a.per_class_fnr[c] - b.per_class_fnr[c]);
  out.push_back(a.mean_fnr - b.mean_fnr);
  return out;
}

ReportFormat parse_report_format(const std::string& name) {
  if (name == "text") return ReportFormat::kText;
  if (name == "csv") return ReportFormat::kCsv;
  if (name == "svg" || name == "svg-bars") return ReportFormat::kSvg;
  throw InputError("unknown report format '" + name + "' (expected text, csv or svg)");
}

std::string render_report_text(const EvalReport& r) {
  std::ostringstream os;
  char line[160];
  std::snprintf(line, sizeof(line), "%-8s %8s %8s %8s %8s\n", "class", "support", "recall", "fnr", "f1");
  os << line;
  for (int64_t c = 0; c < r.num_classes; ++c) {
    const auto i = static_cast<size_t>(c);
    std::snprintf(line, sizeof(line), "%-8s %8lld %8.4f %8.4f %8.4f%s\n", class_name(c, r.num_classes).c_str(),
                  static_cast<long long>(r.support[i]), r.per_class_recall[i], r.per_class_fnr[i],
                  r.per_class_f1[i], r.absent[i] ? "  (absent)" : "");
    os << line;
  }
  std::snprintf(line, sizeof(line), "samples=%lld top1=%.4f top5=%.4f mean_fnr=%.4f\n",
                static_cast<long long>(r.n_samples), r.top1, r.top5, r.mean_fnr);
  os << line;
  return os.str();
}

std::string render_report_csv(const EvalReport& r) {
  std::ostringstream os;
  os << "row,abbreviation,support,recall,fnr,f1,absent,top1,top5,mean_fnr\n";
  for (int64_t c = 0; c < r.num_classes; ++c) {
    const auto i = static_cast<size_t>(c);
    os << c << ',' << class_name(c, r.num_classes) << ',' << r.support[i] << ','
       << fmt(r.per_class_recall[i]) << ',' << fmt(r.per_class_fnr[i]) << ',' << fmt(r.per_class_f1[i])
       << ',' << (r.absent[i] ? 1 : 0) << ",,,\n";
  }
  os << "summary,ALL," << r.n_samples << ",,,,," << fmt(r.top1) << ',' << fmt(r.top5) << ','
     << fmt(r.mean_fnr) << '\n';
  return os.str();
}

std::string render_report_svg(const EvalReport& r) {
  constexpr double kBarWidth = 24, kGap = 6, kPlotHeight = 200, kMargin = 40;
  const double width = kMargin * 2 + static_cast<double>(r.num_classes) * (kBarWidth + kGap);
  const double height = kPlotHeight + kMargin * 2;
  std::ostringstream os;
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width << "\" height=\"" << height
     << "\" viewBox=\"0 0 " << width << ' ' << height << "\">\n";
  os << "  <title>False negative rate per class (mean " << fmt(r.mean_fnr) << ")</title>\n";
  os << "  <line x1=\"" << kMargin << "\" y1=\"" << kMargin + kPlotHeight << "\" x2=\"" << width - kMargin
     << "\" y2=\"" << kMargin + kPlotHeight << "\" stroke=\"black\"/>\n";
  for (int64_t c = 0; c < r.num_classes; ++c) {
    const double fnr = r.per_class_fnr[static_cast<size_t>(c)];
    const double h = fnr * kPlotHeight;
    const double x = kMargin + static_cast<double>(c) * (kBarWidth + kGap);
    os << "  <rect class=\"bar\" data-class=\"" << class_name(c, r.num_classes) << "\" data-fnr=\""
       << fmt(fnr) << "\" x=\"" << x << "\" y=\"" << kMargin + kPlotHeight - h << "\" width=\"" << kBarWidth
       << "\" height=\"" << fmt(h) << "\" fill=\"steelblue\"/>\n";
    os << "  <text x=\"" << x + kBarWidth / 2 << "\" y=\"" << kMargin + kPlotHeight + 14
       << "\" font-size=\"9\" text-anchor=\"middle\">" << class_name(c, r.num_classes) << "</text>\n";
  }
  os << "</svg>\n";
  return os.str();
}

void emit_report(const EvalReport& r, ReportFormat format, const std::filesystem::path& path) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw InputError("report: cannot open " + path.string() + " for writing");
  switch (format) {
    case ReportFormat::kText: os << render_report_text(r); break;
    case ReportFormat::kCsv: os << render_report_csv(r); break;
    case ReportFormat::kSvg: os << render_report_svg(r); break;
  }
  if (!os) throw InputError("report: write to " + path.string() + " failed");
}

EvalReport parse_report_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw LoadError("report: cannot open " + path.string());
  std::string line;
  if (!std::getline(is, line) || line.rfind("row,abbreviation,support", 0) != 0) {
    throw LoadError("report " + path.string() + ": missing CSV header");
  }
  EvalReport r;
  bool have_summary = false;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::istringstream fields(line);
    std::string cell;
    while (std::getline(fields, cell, ',')) cells.push_back(cell);
    while (cells.size() < 10) cells.emplace_back();
    try {
      if (cells[0] == "summary") {
        r.n_samples = std::stoll(cells[2]);
        r.top1 = std::stod(cells[7]);
        r.top5 = std::stod(cells[8]);
        r.mean_fnr = std::stod(cells[9]);
        have_summary = true;
      } else {
        if (std::stoll(cells[0]) != r.num_classes) throw LoadError("class rows out of order");
        r.support.push_back(std::stoll(cells[2]));
        r.per_class_recall.push_back(std::stod(cells[3]));
        r.per_class_fnr.push_back(std::stod(cells[4]));
        r.per_class_f1.push_back(std::stod(cells[5]));
        r.absent.push_back(cells[6] == "1");
        ++r.num_classes;
      }
    } catch (const std::exception& e) {
      throw LoadError("report " + path.string() + ": bad row '" + line + "': " + e.what());
    }
  }
  if (!have_summary) throw LoadError("report " + path.string() + ": missing summary row");
  return r;
}

}  // namespace fpdanet
