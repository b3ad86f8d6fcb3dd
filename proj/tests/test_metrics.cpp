#include <doctest.h>
#include <torch/torch.h>

#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <regex>

#include "fpdanet/errors.hpp"
#include "fpdanet/metrics.hpp"
#include "oracles.hpp"

using namespace fpdanet;
namespace fs = std::filesystem;

namespace {

torch::Tensor matrix(const std::vector<std::vector<double>>& rows) {
  auto t = torch::empty({static_cast<int64_t>(rows.size()), static_cast<int64_t>(rows[0].size())}, torch::kDouble);
  for (size_t i = 0; i < rows.size(); ++i) {
    for (size_t j = 0; j < rows[i].size(); ++j) t[static_cast<int64_t>(i)][static_cast<int64_t>(j)] = rows[i][j];
  }
  return t;
}

// Logits with integer-valued ties so the tie rule matters.
std::pair<std::vector<std::vector<double>>, std::vector<int64_t>> random_batch(std::mt19937_64& rng, int64_t n,
                                                                                int64_t k) {
  std::uniform_int_distribution<int> level(-3, 3);
  std::uniform_int_distribution<int64_t> cls(0, k - 1);
  std::vector<std::vector<double>> logits(static_cast<size_t>(n), std::vector<double>(static_cast<size_t>(k)));
  std::vector<int64_t> labels;
  for (auto& row : logits) {
    for (auto& v : row) v = level(rng);
    labels.push_back(cls(rng));
  }
  return {logits, labels};
}

}  // namespace

TEST_CASE("label rank and tie rule") {
  std::vector<double> s{0.5, 2.0, 0.5, -1.0};
  CHECK(label_rank(s, 1) == 0);
  CHECK(label_rank(s, 0) == 1);
  CHECK(label_rank(s, 2) == 2);
  CHECK(label_rank(s, 3) == 3);
  CHECK_THROWS_AS(label_rank(s, 4), InputError);
  CHECK_THROWS_AS(label_rank(s, -1), InputError);
}

TEST_CASE("top-k on hand-built logits") {
  // Truths rank 1st, 3rd and 7th.
  std::vector<std::vector<double>> rows(3, std::vector<double>(21, 0.0));
  for (int64_t j = 0; j < 21; ++j) {
    for (auto& row : rows) row[static_cast<size_t>(j)] = -static_cast<double>(j);
  }
  std::vector<int64_t> labels{0, 2, 6};
  auto logits = matrix(rows);
  CHECK(topk_accuracy(logits, labels, 1) == 1.0 / 3.0);
  CHECK(topk_accuracy(logits, labels, 5) == 2.0 / 3.0);
  CHECK(topk_accuracy(logits, labels, 21) == 1.0);
}

TEST_CASE("all-equal logits follow the lower-index rule") {
  auto logits = torch::zeros({2, 21}, torch::kDouble);
  std::vector<int64_t> truth0{0, 0}, truth20{20, 20};
  CHECK(topk_accuracy(logits, truth0, 1) == 1.0);
  CHECK(topk_accuracy(logits, truth20, 1) == 0.0);
  CHECK(topk_accuracy(logits, truth20, 20) == 0.0);
  CHECK(topk_accuracy(logits, truth20, 21) == 1.0);
  CHECK(predict_labels(logits) == std::vector<int64_t>{0, 0});
}

TEST_CASE("top-k argument errors") {
  auto logits = torch::zeros({2, 21});
  std::vector<int64_t> labels{0, 21};
  CHECK_THROWS_AS(topk_accuracy(logits, labels, 1), InputError);
  std::vector<int64_t> ok{0, 1};
  CHECK_THROWS_AS(topk_accuracy(logits, ok, 0), InputError);
  CHECK_THROWS_AS(topk_accuracy(logits, ok, 22), InputError);
  std::vector<int64_t> short_labels{0};
  CHECK_THROWS_AS(topk_accuracy(logits, short_labels, 1), InputError);
}

TEST_CASE("confusion and recall") {
  std::vector<int64_t> labels{0, 1, 2, 2, 2};
  std::vector<int64_t> perfect = labels;
  auto r = confusion_and_recall(perfect, labels, 4);
  CHECK(r.confusion[2][2] == 3);
  CHECK(r.recall == std::vector<double>{1.0, 1.0, 1.0, 1.0});
  CHECK(r.absent == std::vector<bool>{false, false, false, true});

  std::vector<int64_t> preds{0, 1, 2, 2, 0};
  r = confusion_and_recall(preds, labels, 4);
  CHECK(r.recall[2] == 2.0 / 3.0);
  CHECK(r.confusion[2][0] == 1);
  std::vector<int64_t> bad{0, 1, 2, 2, 9};
  CHECK_THROWS_AS(confusion_and_recall(bad, labels, 4), InputError);
}

TEST_CASE("false negative rates") {
  std::vector<double> recall{1.0, 0.5, 0.75};
  auto f = false_negative_rates(recall);
  CHECK(f.per_class == std::vector<double>{0.0, 0.5, 0.25});
  CHECK(f.mean == 0.25);
  auto masked = false_negative_rates(recall, {false, true, false});
  CHECK(masked.mean == 0.125);
  std::vector<double> bad{1.5};
  CHECK_THROWS_AS(false_negative_rates(bad), InputError);
}

TEST_CASE("report matches a brute-force reference on random batches") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 50; ++trial) {
    const int64_t n = 1 + static_cast<int64_t>(rng() % 100), k = trial % 3 == 0 ? 21 : 2 + static_cast<int64_t>(rng() % 8);
    auto [rows, labels] = random_batch(rng, n, k);
    auto report = make_report(matrix(rows), labels);

    int64_t top1 = 0, top5 = 0;
    std::vector<std::vector<int64_t>> confusion(static_cast<size_t>(k), std::vector<int64_t>(static_cast<size_t>(k), 0));
    for (int64_t i = 0; i < n; ++i) {
      const auto& row = rows[static_cast<size_t>(i)];
      top1 += oracle::in_top_k(row, labels[static_cast<size_t>(i)], 1);
      top5 += oracle::in_top_k(row, labels[static_cast<size_t>(i)], std::min<int64_t>(5, k));
      int64_t best = 0;
      for (int64_t j = 1; j < k; ++j) {
        if (row[static_cast<size_t>(j)] > row[static_cast<size_t>(best)]) best = j;
      }
      ++confusion[static_cast<size_t>(labels[static_cast<size_t>(i)])][static_cast<size_t>(best)];
    }
    CHECK(report.top1 == static_cast<double>(top1) / static_cast<double>(n));
    CHECK(report.top5 == static_cast<double>(top5) / static_cast<double>(n));
    CHECK(report.confusion == confusion);
    double fnr_sum = 0;
    int64_t present = 0;
    for (int64_t c = 0; c < k; ++c) {
      const auto ci = static_cast<size_t>(c);
      int64_t row_sum = 0;
      for (auto v : confusion[ci]) row_sum += v;
      const double recall = row_sum == 0 ? 1.0 : static_cast<double>(confusion[ci][ci]) / static_cast<double>(row_sum);
      CHECK(report.per_class_recall[ci] == recall);
      CHECK(report.per_class_fnr[ci] == 1.0 - recall);
      CHECK(report.support[ci] == row_sum);
      if (row_sum > 0) fnr_sum += 1.0 - recall, ++present;
    }
    CHECK(report.mean_fnr == fnr_sum / static_cast<double>(present));
    CHECK(report.top5 >= report.top1);
    for (int64_t k1 = 1; k1 < k; ++k1) {
      CHECK(topk_accuracy(matrix(rows), labels, k1) <= topk_accuracy(matrix(rows), labels, k1 + 1));
    }
  }
}

TEST_CASE("f1 uses precision one for never-predicted classes") {
  auto logits = matrix({{1, 0, 0}, {1, 0, 0}, {0, 0, 1}});
  std::vector<int64_t> labels{0, 1, 2};
  auto r = make_report(logits, labels);
  CHECK(r.per_class_f1[0] == doctest::Approx(2 * 0.5 * 1.0 / 1.5));
  CHECK(r.per_class_f1[1] == 0.0);
  CHECK(r.per_class_f1[2] == 1.0);
}

TEST_CASE("fnr difference") {
  auto a = make_report(matrix({{1, 0}, {1, 0}}), std::vector<int64_t>{0, 1});
  auto b = make_report(matrix({{1, 0}, {0, 1}}), std::vector<int64_t>{0, 1});
  CHECK(fnr_difference(a, b) == std::vector<double>{0.0, 1.0, 0.5});
}

TEST_CASE("csv round trip and layout") {
  std::mt19937_64 rng(3);
  auto [rows, labels] = random_batch(rng, 60, 21);
  for (auto& l : labels) if (l == 7) l = 8;  // leave class 7 absent
  auto report = make_report(matrix(rows), labels);
  const auto csv = render_report_csv(report);
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 23);
  CHECK(csv.rfind("row,abbreviation,support,recall,fnr,f1,absent,top1,top5,mean_fnr\n", 0) == 0);
  CHECK(csv.find("\n7,FL,0,1,0,") != std::string::npos);

  const auto path = fs::temp_directory_path() / "fpdanet_report.csv";
  emit_report(report, ReportFormat::kCsv, path);
  auto back = parse_report_csv(path);
  CHECK(back.num_classes == 21);
  CHECK(back.n_samples == report.n_samples);
  CHECK(back.top1 == report.top1);
  CHECK(back.top5 == report.top5);
  CHECK(back.mean_fnr == report.mean_fnr);
  CHECK(back.per_class_recall == report.per_class_recall);
  CHECK(back.per_class_fnr == report.per_class_fnr);
  CHECK(back.per_class_f1 == report.per_class_f1);
  CHECK(back.absent == report.absent);
  CHECK(back.support == report.support);

  std::ofstream(path) << "nonsense\n";
  CHECK_THROWS_AS(parse_report_csv(path), LoadError);
  CHECK_THROWS_AS(emit_report(report, ReportFormat::kCsv, "/nonexistent-dir/r.csv"), InputError);
}

TEST_CASE("svg has one bar per class with heights proportional to fnr") {
  std::mt19937_64 rng(4);
  auto [rows, labels] = random_batch(rng, 80, 21);
  auto report = make_report(matrix(rows), labels);
  const auto svg = render_report_svg(report);
  std::regex bar(R"re(<rect class="bar" data-class="([^"]+)" data-fnr="([^"]+)"[^>]*height="([^"]+)")re");
  int64_t bars = 0;
  for (auto it = std::sregex_iterator(svg.begin(), svg.end(), bar); it != std::sregex_iterator(); ++it, ++bars) {
    const double fnr = std::stod((*it)[2]);
    const double h = std::stod((*it)[3]);
    CHECK(fnr == report.per_class_fnr[static_cast<size_t>(bars)]);
    CHECK(h == doctest::Approx(200.0 * fnr));
  }
  CHECK(bars == 21);
}

TEST_CASE("text report and format names") {
  auto report = make_report(torch::eye(21, torch::kDouble), [] {
    std::vector<int64_t> l(21);
    std::iota(l.begin(), l.end(), 0);
    return l;
  }());
  CHECK(report.top1 == 1.0);
  const auto text = render_report_text(report);
  CHECK(text.find("RVOT") != std::string::npos);
  CHECK(text.find("top1=1.0000") != std::string::npos);
  CHECK(parse_report_format("csv") == ReportFormat::kCsv);
  CHECK(parse_report_format("svg") == ReportFormat::kSvg);
  CHECK_THROWS_AS(parse_report_format("pdf"), InputError);
}
