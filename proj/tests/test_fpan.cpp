#include <doctest.h>
#include <torch/torch.h>

#include <numeric>
#include <random>

#include "fpdanet/errors.hpp"
#include "fpdanet/fpan.hpp"
#include "fpdanet/model.hpp"
#include "gradcheck.hpp"
#include "oracles.hpp"

using namespace fpdanet;

namespace {

const auto kF64 = torch::TensorOptions().dtype(torch::kDouble);

StagePyramid desk_pyramid(int64_t batch = 2, torch::Dtype dtype = torch::kFloat) {
  auto o = torch::TensorOptions().dtype(dtype);
  return {torch::randn({batch, 64, 8, 8}, o), torch::randn({batch, 128, 4, 4}, o), torch::randn({batch, 256, 2, 2}, o)};
}

oracle::Map to_map(const torch::Tensor& t) {
  auto flat = t.reshape({t.size(0), -1}).contiguous();
  oracle::Map m(static_cast<size_t>(flat.size(0)));
  for (int64_t c = 0; c < flat.size(0); ++c) {
    auto row = flat[c];
    m[static_cast<size_t>(c)] = std::vector<double>(row.data_ptr<double>(), row.data_ptr<double>() + row.numel());
  }
  return m;
}

void zero_conv(torch::nn::Conv2d& conv) {
  torch::NoGradGuard g;
  conv->weight.zero_();
  conv->bias.zero_();
}

}  // namespace

TEST_CASE("fpan shapes at the default width") {
  Fpan fpan(std::array<int64_t, 3>{512, 1024, 2048}, 256);
  fpan->eval();
  torch::NoGradGuard g;
  StagePyramid pyr{torch::randn({1, 512, 28, 28}), torch::randn({1, 1024, 14, 14}), torch::randn({1, 2048, 7, 7})};
  auto p = fpan->top_down(pyr);
  CHECK(p.l3.sizes() == torch::IntArrayRef({1, 256, 28, 28}));
  CHECK(p.l4.sizes() == torch::IntArrayRef({1, 256, 14, 14}));
  CHECK(p.l5.sizes() == torch::IntArrayRef({1, 256, 7, 7}));
  auto n = fpan->bottom_up(p);
  CHECK(n.l3.sizes() == torch::IntArrayRef({1, 256, 28, 28}));
  CHECK(n.l4.sizes() == torch::IntArrayRef({1, 256, 14, 14}));
  CHECK(n.l5.sizes() == torch::IntArrayRef({1, 256, 7, 7}));
}

TEST_CASE("stride-2 downsampler halves 28 to 14") {
  Fpan fpan(std::array<int64_t, 3>{8, 8, 8}, 16);
  CHECK(fpan->down3->forward(torch::randn({1, 16, 28, 28})).sizes() == torch::IntArrayRef({1, 16, 14, 14}));
}

TEST_CASE("nearest upsampling of a single value") {
  auto x = torch::full({1, 1, 1, 1}, 3.25);
  auto y = upsample2(x);
  CHECK(y.sizes() == torch::IntArrayRef({1, 1, 2, 2}));
  CHECK(torch::equal(y, torch::full({1, 1, 2, 2}, 3.25)));
  auto z = upsample2(torch::arange(4.0).reshape({1, 1, 2, 2}));
  CHECK(torch::equal(z[0][0][1][1], z[0][0][0][0]));
  CHECK(z[0][0][3][3].item<double>() == 3.0);
}

TEST_CASE("zero laterals leave only the smoothing path") {
  Fpan fpan(std::array<int64_t, 3>{64, 128, 256}, 64);
  fpan->to(torch::kDouble);
  testing::randomize_parameters(*fpan, 5);
  zero_conv(fpan->lateral3);
  zero_conv(fpan->lateral4);
  zero_conv(fpan->lateral5);
  fpan->eval();
  auto p = fpan->top_down(desk_pyramid(2, torch::kDouble));
  CHECK(p.l5.abs().max().item<double>() == 0.0);
  auto smooth_zero = fpan->smooth_td4->forward(torch::zeros({2, 64, 4, 4}, kF64));
  CHECK(torch::equal(torch::relu(smooth_zero), p.l4));
  // Constant per channel: a bias-free conv of zeros is zero everywhere.
  CHECK(torch::equal(p.l4, p.l4.amax({2, 3}, true).expand_as(p.l4)));
  CHECK(torch::allclose(p.l3, torch::relu(fpan->smooth_td3->forward(upsample2(p.l4))), 0, 1e-14));
}

TEST_CASE("zero laterals at init give a constant p3") {
  Fpan fpan(std::array<int64_t, 3>{64, 128, 256}, 64);
  init_parameters(*fpan, 0);
  zero_conv(fpan->lateral3);
  zero_conv(fpan->lateral4);
  zero_conv(fpan->lateral5);
  fpan->eval();
  auto p = fpan->top_down(desk_pyramid());
  auto expected = torch::relu(fpan->smooth_td3->forward(torch::zeros_like(p.l3)));
  CHECK(torch::equal(p.l3, expected));
  CHECK(torch::equal(p.l3, p.l3.amax({2, 3}, true).expand_as(p.l3)));
}

TEST_CASE("zero downsamplers reduce n4 to smooth(p4)") {
  Fpan fpan(std::array<int64_t, 3>{64, 128, 256}, 64);
  fpan->to(torch::kDouble);
  testing::randomize_parameters(*fpan, 6);
  zero_conv(fpan->down3);
  zero_conv(fpan->down4);
  fpan->eval();
  auto p = fpan->top_down(desk_pyramid(2, torch::kDouble));
  auto n = fpan->bottom_up(p);
  CHECK(torch::equal(n.l3, p.l3));
  CHECK(torch::equal(n.l4, torch::relu(fpan->smooth_bu4->forward(p.l4))));
  CHECK(torch::equal(n.l5, torch::relu(fpan->smooth_bu5->forward(p.l5))));
}

TEST_CASE("fpan rejects bad pyramids") {
  Fpan fpan(std::array<int64_t, 3>{64, 128, 256}, 64);
  auto pyr = desk_pyramid();
  pyr.c4 = torch::randn({2, 128, 5, 5});
  try {
    fpan->top_down(pyr);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("c4") != std::string::npos);
  }
  pyr = desk_pyramid();
  pyr.c5 = torch::randn({2, 255, 2, 2});
  CHECK_THROWS_AS(fpan->top_down(pyr), ShapeError);
  FusedLevels odd{torch::randn({1, 64, 8, 8}), torch::randn({1, 64, 4, 4}), torch::randn({1, 64, 3, 3})};
  CHECK_THROWS_AS(fpan->bottom_up(odd), ShapeError);
}

TEST_CASE("every fused level carries exactly W channels") {
  for (int64_t w : {16, 64, 96}) {
    Fpan fpan(std::array<int64_t, 3>{64, 128, 256}, w);
    fpan->eval();
    auto n = fpan->forward(desk_pyramid(1));
    for (const auto& t : {n.l3, n.l4, n.l5}) CHECK(t.size(1) == w);
    for (auto* conv : {&fpan->lateral3, &fpan->lateral4, &fpan->lateral5, &fpan->down3, &fpan->down4}) {
      CHECK((*conv)->weight.size(0) == w);
    }
    for (auto* s : {&fpan->smooth_td3, &fpan->smooth_td4, &fpan->smooth_bu4, &fpan->smooth_bu5}) {
      CHECK((*s)->in_channels() == w);
      CHECK((*s)->out_channels() == w);
    }
  }
}

TEST_CASE("head on constant levels") {
  ClassifierHead head(4, 3, 0.2);
  head->to(torch::kDouble);
  testing::randomize_parameters(*head, 1);
  head->eval();
  const double v = -1.5;
  FusedLevels lv{torch::full({2, 4, 8, 8}, v, kF64), torch::full({2, 4, 4, 4}, v, kF64),
                 torch::full({2, 4, 2, 2}, v, kF64)};
  auto pooled = head->pooled(lv);
  CHECK(torch::equal(pooled, torch::full({2, 12}, v, kF64)));
  auto expected = head->linear->forward(torch::full({2, 12}, v, kF64));
  CHECK(torch::equal(head->forward(lv), expected));
}

TEST_CASE("head with zero weights returns the bias") {
  ClassifierHead head(8, 21, 0.2);
  {
    torch::NoGradGuard g;
    head->linear->weight.zero_();
    head->linear->bias.copy_(torch::arange(21.0));
  }
  head->eval();
  auto levels = FusedLevels{torch::randn({3, 8, 8, 8}), torch::randn({3, 8, 4, 4}), torch::randn({3, 8, 2, 2})};
  CHECK(torch::equal(head->forward(levels), torch::arange(21.0).expand({3, 21})));
}

TEST_CASE("head matches the flat pool-concat-affine oracle") {
  ClassifierHead head(5, 7, 0.2);
  head->to(torch::kDouble);
  testing::randomize_parameters(*head, 2);
  head->eval();
  FusedLevels lv{torch::randn({2, 5, 8, 8}, kF64), torch::randn({2, 5, 4, 4}, kF64), torch::randn({2, 5, 2, 2}, kF64)};
  auto logits = head->forward(lv);
  auto w = head->linear->weight.contiguous();
  std::vector<std::vector<double>> wm;
  for (int64_t o = 0; o < 7; ++o) wm.emplace_back(w[o].data_ptr<double>(), w[o].data_ptr<double>() + 15);
  std::vector<double> b(head->linear->bias.data_ptr<double>(), head->linear->bias.data_ptr<double>() + 7);
  for (int64_t i = 0; i < 2; ++i) {
    auto ref = oracle::pooled_head({to_map(lv.l3[i]), to_map(lv.l4[i]), to_map(lv.l5[i])}, wm, b);
    for (int64_t k = 0; k < 7; ++k) CHECK(std::abs(logits[i][k].item<double>() - ref[static_cast<size_t>(k)]) < 1e-13);
  }
}

TEST_CASE("head dropout is active only in training") {
  ClassifierHead head(64, 21, 0.5);
  FusedLevels lv{torch::randn({4, 64, 8, 8}), torch::randn({4, 64, 4, 4}), torch::randn({4, 64, 2, 2})};
  head->eval();
  CHECK(torch::equal(head->forward(lv), head->forward(lv)));
  head->train();
  CHECK_FALSE(torch::equal(head->forward(lv), head->forward(lv)));
}

TEST_CASE("head is invariant to spatial permutations within each level") {
  ClassifierHead head(16, 21, 0.2);
  head->eval();
  std::mt19937 rng(4);
  FusedLevels lv{torch::randn({1, 16, 8, 8}), torch::randn({1, 16, 4, 4}), torch::randn({1, 16, 2, 2})};
  auto shuffle = [&](const torch::Tensor& t) {
    std::vector<int64_t> perm(static_cast<size_t>(t.size(2) * t.size(3)));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    return t.flatten(2).index_select(2, torch::tensor(perm)).reshape(t.sizes());
  };
  FusedLevels permuted{shuffle(lv.l3), shuffle(lv.l4), shuffle(lv.l5)};
  CHECK((head->forward(lv) - head->forward(permuted)).abs().max().item<double>() <= 1e-6);
}

TEST_CASE("fpan gradients match finite differences at desk scale") {
  Fpan fpan(std::array<int64_t, 3>{64, 128, 256}, 64);
  fpan->to(torch::kDouble);
  testing::randomize_parameters(*fpan, 12);
  fpan->eval();
  auto pyr = desk_pyramid(2, torch::kDouble);
  auto probe = desk_pyramid(2, torch::kDouble);
  auto p3 = torch::randn({2, 64, 8, 8}, kF64), p4 = torch::randn({2, 64, 4, 4}, kF64),
       p5 = torch::randn({2, 64, 2, 2}, kF64);
  auto loss = [&] {
    auto n = fpan->forward(pyr);
    return (n.l3 * p3).sum() + (n.l4 * p4).sum() + (n.l5 * p5).sum();
  };
  auto r = testing::check_gradients(*fpan, loss, 24, 13);
  INFO("max relative error " << r.max_rel_error);
  CHECK(r.max_rel_error < 1e-4);
}
