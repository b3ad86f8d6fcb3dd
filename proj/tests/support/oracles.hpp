#pragma once

// Straight-line reference implementations used as test oracles. They work on
// plain std::vector<double> with explicit loops and share no code with the
// library.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <vector>

namespace fpdanet::oracle {

// feature[c][n] with n = h * W + w.
using Map = std::vector<std::vector<double>>;

inline std::vector<double> softmax(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  std::vector<double> e(v.size());
  double s = 0;
  for (size_t i = 0; i < v.size(); ++i) s += (e[i] = std::exp(v[i] - m));
  for (double& x : e) x /= s;
  return e;
}

// 1x1 conv: out[o][n] = b[o] + sum_c w[o][c] * in[c][n].
inline Map pointwise(const Map& in, const std::vector<std::vector<double>>& w, const std::vector<double>& b) {
  const size_t n = in[0].size();
  Map out(w.size(), std::vector<double>(n, 0.0));
  for (size_t o = 0; o < w.size(); ++o) {
    for (size_t p = 0; p < n; ++p) {
      double acc = b[o];
      for (size_t c = 0; c < in.size(); ++c) acc += w[o][c] * in[c][p];
      out[o][p] = acc;
    }
  }
  return out;
}

// S[j][i] = exp(B_i . C_j) / sum_i exp(B_i . C_j).
inline Map position_map(const Map& bq, const Map& ck) {
  const size_t n = bq[0].size();
  Map s(n);
  for (size_t j = 0; j < n; ++j) {
    std::vector<double> row(n);
    for (size_t i = 0; i < n; ++i) {
      double dot = 0;
      for (size_t k = 0; k < bq.size(); ++k) dot += bq[k][i] * ck[k][j];
      row[i] = dot;
    }
    s[j] = softmax(row);
  }
  return s;
}

// E_j = alpha * sum_i S_ji D_i + A_j.
inline Map position_attention(const Map& a, const Map& bq, const Map& ck, const Map& d, double alpha) {
  const auto s = position_map(bq, ck);
  const size_t n = a[0].size();
  Map e = a;
  for (size_t c = 0; c < a.size(); ++c) {
    for (size_t j = 0; j < n; ++j) {
      double acc = 0;
      for (size_t i = 0; i < n; ++i) acc += s[j][i] * d[c][i];
      e[c][j] += alpha * acc;
    }
  }
  return e;
}

// X[j][i] = exp(A_i . A_j) / sum_i exp(A_i . A_j).
inline Map channel_map(const Map& a) {
  const size_t c = a.size();
  Map x(c);
  for (size_t j = 0; j < c; ++j) {
    std::vector<double> row(c);
    for (size_t i = 0; i < c; ++i) {
      double dot = 0;
      for (size_t n = 0; n < a[0].size(); ++n) dot += a[i][n] * a[j][n];
      row[i] = dot;
    }
    x[j] = softmax(row);
  }
  return x;
}

// E_j = beta * sum_i X_ji A_i + A_j.
inline Map channel_attention(const Map& a, double beta) {
  const auto x = channel_map(a);
  Map e = a;
  for (size_t j = 0; j < a.size(); ++j) {
    for (size_t n = 0; n < a[0].size(); ++n) {
      double acc = 0;
      for (size_t i = 0; i < a.size(); ++i) acc += x[j][i] * a[i][n];
      e[j][n] += beta * acc;
    }
  }
  return e;
}

// Global average pool of three levels, concatenated, then affine.
inline std::vector<double> pooled_head(const std::array<Map, 3>& levels, const std::vector<std::vector<double>>& w,
                                       const std::vector<double>& b) {
  std::vector<double> feat;
  for (const auto& level : levels) {
    for (const auto& ch : level) {
      double s = 0;
      for (double v : ch) s += v;
      feat.push_back(s / static_cast<double>(ch.size()));
    }
  }
  std::vector<double> out(b);
  for (size_t o = 0; o < w.size(); ++o) {
    for (size_t k = 0; k < feat.size(); ++k) out[o] += w[o][k] * feat[k];
  }
  return out;
}

inline double cross_entropy(const std::vector<std::vector<double>>& logits, const std::vector<int64_t>& labels) {
  double total = 0;
  for (size_t r = 0; r < logits.size(); ++r) {
    double m = logits[r][0];
    for (double v : logits[r]) m = std::max(m, v);
    double s = 0;
    for (double v : logits[r]) s += std::exp(v - m);
    total += m + std::log(s) - logits[r][static_cast<size_t>(labels[r])];
  }
  return total / static_cast<double>(logits.size());
}

// Brute-force top-k membership: sort class indices by (score desc, index asc).
inline bool in_top_k(const std::vector<double>& scores, int64_t label, int64_t k) {
  std::vector<int64_t> idx(scores.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::sort(idx.begin(), idx.end(), [&](int64_t a, int64_t b) {
    if (scores[static_cast<size_t>(a)] != scores[static_cast<size_t>(b)]) {
      return scores[static_cast<size_t>(a)] > scores[static_cast<size_t>(b)];
    }
    return a < b;
  });
  for (int64_t i = 0; i < k; ++i) {
    if (idx[static_cast<size_t>(i)] == label) return true;
  }
  return false;
}

struct Report {
  double top1 = 0, top5 = 0;
  std::vector<std::vector<int64_t>> confusion;
  std::vector<double> recall;
  std::vector<double> fnr;
};

// Counts by brute force; argmax keeps the first maximum.
inline Report report(const std::vector<std::vector<double>>& logits, const std::vector<int64_t>& labels) {
  const size_t k = logits[0].size();
  Report r;
  r.confusion.assign(k, std::vector<int64_t>(k, 0));
  int64_t hit1 = 0, hit5 = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    hit1 += in_top_k(logits[i], labels[i], 1);
    hit5 += in_top_k(logits[i], labels[i], std::min<int64_t>(5, static_cast<int64_t>(k)));
    size_t best = 0;
    for (size_t j = 1; j < k; ++j) {
      if (logits[i][j] > logits[i][best]) best = j;
    }
    ++r.confusion[static_cast<size_t>(labels[i])][best];
  }
  const double n = static_cast<double>(logits.size());
  r.top1 = static_cast<double>(hit1) / n;
  r.top5 = static_cast<double>(hit5) / n;
  for (size_t c = 0; c < k; ++c) {
    int64_t support = 0;
    for (auto v : r.confusion[c]) support += v;
    const double recall = support == 0 ? 1.0 : static_cast<double>(r.confusion[c][c]) / static_cast<double>(support);
    r.recall.push_back(recall);
    r.fnr.push_back(1.0 - recall);
  }
  return r;
}

// Learning-rate bounds evaluated term by term with the default constants.
struct Bounds {
  double lr_max, lr_min;
};
inline Bounds lr_bounds(double batch, double nbs = 64, double lr_max_init = 0.01, double lr_min_init = 0.0001,
                        double lr_max_lim = 0.001, double lr_min_lim = 0.0001) {
  double mid_max = batch / nbs * lr_max_init;
  if (mid_max < lr_min_lim) mid_max = lr_min_lim;
  double lr_max = mid_max;
  if (lr_max > lr_max_lim) lr_max = lr_max_lim;
  double mid_min = batch / nbs * lr_min_init;
  if (mid_min < lr_min_lim / 100) mid_min = lr_min_lim / 100;
  double lr_min = mid_min;
  if (lr_min > lr_max_lim / 100) lr_min = lr_max_lim / 100;
  return {lr_max, lr_min};
}

// Piecewise step schedule: lr_max until epoch 120, x0.1 until 170, x0.01 after,
// never below lr_min (defaults: 200 epochs, milestones 0.6 / 0.85).
inline double lr_piecewise(double lr_max, double lr_min, int64_t epoch) {
  double lr;
  if (epoch < 120) lr = lr_max;
  else if (epoch < 170) lr = lr_max * 0.1;
  else lr = lr_max * 0.1 * 0.1;
  return lr < lr_min ? lr_min : lr;
}

// Trainable parameter count of the desk preset, layer by layer:
// conv weights (no bias) + BN scale/shift for every conv-BN pair, 1x1
// attention projections with bias plus alpha/beta, FPAN convs, head.
inline int64_t desk_parameter_count(bool g4_attention, bool g5_attention) {
  auto conv_bn = [](int64_t in, int64_t out, int64_t k) { return in * out * k * k + 2 * out; };
  auto conv_bias = [](int64_t in, int64_t out, int64_t k) { return in * out * k * k + out; };
  int64_t total = conv_bn(3, 16, 7);  // stem
  const int64_t widths[4] = {32, 64, 128, 256};
  int64_t in = 16;
  for (int g = 0; g < 4; ++g) {  // depth 1: conv block only
    const int64_t out = widths[g], mid = out / 4;
    total += conv_bn(in, mid, 1) + conv_bn(mid, mid, 3) + conv_bn(mid, out, 1) + conv_bn(in, out, 1);
    in = out;
  }
  auto dan = [&](int64_t c) { return 2 * conv_bias(c, c / 8, 1) + conv_bias(c, c, 1) + 1 + 1; };
  if (g4_attention) total += dan(128);
  if (g5_attention) total += dan(256);
  const int64_t w = 64;
  total += conv_bias(64, w, 1) + conv_bias(128, w, 1) + conv_bias(256, w, 1);  // laterals
  total += 2 * conv_bn(w, w, 3);                                               // top-down smoothing
  total += 2 * conv_bias(w, w, 3);                                             // downsamplers
  total += 2 * conv_bn(w, w, 3);                                               // bottom-up smoothing
  total += 3 * w * 21 + 21;                                                    // head
  return total;
}

}  // namespace fpdanet::oracle
