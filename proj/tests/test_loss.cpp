#include <cmath>
#include <vector>

#include <gtest/gtest.h>

#include "ahgs/gradcheck.hpp"
#include "ahgs/loss.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ahgs;
using ad::Tensor;

namespace {

std::vector<double> random_values(std::size_t n, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  Rng rng(seed);
  std::vector<double> v(n);
  for (auto& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST(L1, MeanAbsoluteDifference) {
  const Tensor a = Tensor::constant({1, 1, 4}, {0.0, 0.5, 1.0, 0.25});
  const Tensor b = Tensor::constant({1, 1, 4}, {1.0, 0.5, 0.0, 0.75});
  EXPECT_DOUBLE_EQ(loss::l1_loss(a, b).item(), 2.5 / 4.0);
  EXPECT_THROW(loss::l1_loss(a, Tensor::zeros({1, 1, 3})), ContractError);
}

TEST(Ssim, MatchesDirectWindowOracle) {
  const std::size_t C = 3, H = 17, W = 21;
  const auto a = random_values(C * H * W, 1), b = random_values(C * H * W, 2);
  const double got = loss::ssim(Tensor::constant({C, H, W}, a), Tensor::constant({C, H, W}, b)).item();
  EXPECT_NEAR(got, oracle::ssim(a, b, C, H, W), 1e-12);
}

TEST(Ssim, IdenticalImagesScoreOne) {
  const auto a = random_values(3 * 16 * 16, 3);
  const Tensor t = Tensor::constant({3, 16, 16}, a);
  EXPECT_NEAR(loss::ssim(t, t).item(), 1.0, 1e-12);
  EXPECT_NEAR(loss::ssim_loss(t, t).item(), 0.0, 1e-12);
}

TEST(Ssim, RejectsImagesSmallerThanWindow) {
  EXPECT_THROW(loss::ssim(Tensor::zeros({3, 10, 20}), Tensor::zeros({3, 10, 20})), ContractError);
}

TEST(Ssim, Gradient) {
  const Tensor target = Tensor::constant({3, 12, 13}, random_values(3 * 12 * 13, 4));
  const auto r = ad::finite_difference_check([&](const Tensor& x) { return loss::ssim(x, target); },
                                             Tensor::constant({3, 12, 13}, random_values(3 * 12 * 13, 5)), 1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(FeatureExtractor, MatchesConvolutionOracle) {
  const auto fe = loss::FeatureExtractor::builtin();
  const std::size_t H = 6, W = 7, C = loss::FeatureExtractor::kChannels;
  const auto img = random_values(3 * H * W, 6);
  const Tensor out = fe(Tensor::constant({3, H, W}, img));
  auto relu = [](std::vector<double> v) {
    for (auto& x : v) x = std::max(0.0, x);
    return v;
  };
  const auto h1 = relu(oracle::conv2d(img, 3, H, W, testutil::values(fe.conv1_weight()), testutil::values(fe.conv1_bias()),
                                      C, 3, 1));
  const auto h2 = relu(oracle::conv2d(h1, C, H, W, testutil::values(fe.conv2_weight()), testutil::values(fe.conv2_bias()),
                                      C, 3, 1));
  ASSERT_EQ(out.size(), h2.size());
  for (std::size_t i = 0; i < h2.size(); ++i) EXPECT_NEAR(out[i], h2[i], 1e-12);
}

TEST(FeatureExtractor, BuiltinIsSeeded) {
  EXPECT_EQ(testutil::values(loss::FeatureExtractor::builtin(3).conv2_weight()),
            testutil::values(loss::FeatureExtractor::builtin(3).conv2_weight()));
  EXPECT_NE(testutil::values(loss::FeatureExtractor::builtin(3).conv1_weight()),
            testutil::values(loss::FeatureExtractor::builtin(4).conv1_weight()));
  EXPECT_EQ(loss::FeatureExtractor::builtin().source(), loss::FeatureExtractor::Source::kBuiltinSeeded);
}

TEST(FeatureExtractor, WeightFileRoundTripAndErrors) {
  const auto fe = loss::FeatureExtractor::builtin(8);
  const std::string bytes = fe.encode();
  const auto back = loss::FeatureExtractor::decode(bytes);
  EXPECT_EQ(back.source(), loss::FeatureExtractor::Source::kLoadedFromFile);
  for (std::size_t i = 0; i < back.conv2_weight().size(); ++i) {
    EXPECT_EQ(back.conv2_weight()[i], static_cast<double>(static_cast<float>(fe.conv2_weight()[i])));
  }
  std::string bad = bytes;
  bad[0] = 'Z';
  EXPECT_THROW(loss::FeatureExtractor::decode(bad), LoadError);
  EXPECT_THROW(loss::FeatureExtractor::decode(bytes.substr(0, bytes.size() - 4)), LoadError);
  bad = bytes;
  bad[4] = 2;
  EXPECT_THROW(loss::FeatureExtractor::decode(bad), LoadError);
  EXPECT_THROW(loss::FeatureExtractor::load("/nonexistent/weights.bin"), LoadError);
}

TEST(Perceptual, ZeroForIdenticalAndPositiveOtherwise) {
  const auto fe = loss::FeatureExtractor::builtin();
  const Tensor a = Tensor::constant({3, 8, 8}, random_values(192, 7));
  const Tensor b = Tensor::constant({3, 8, 8}, random_values(192, 8));
  EXPECT_EQ(loss::perceptual_loss(a, a, fe).item(), 0.0);
  EXPECT_GT(loss::perceptual_loss(a, b, fe).item(), 0.0);
  EXPECT_DOUBLE_EQ(loss::perceptual_loss(a, b, fe).item(), loss::perceptual_loss_from_features(a, fe(b), fe).item());
}

TEST(Perceptual, Gradient) {
  const auto fe = loss::FeatureExtractor::builtin();
  const Tensor target = Tensor::constant({3, 5, 6}, random_values(90, 9));
  const auto r = ad::finite_difference_check([&](const Tensor& x) { return loss::perceptual_loss(x, target, fe); },
                                             Tensor::constant({3, 5, 6}, random_values(90, 10)), 1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}

TEST(Schedule, LinearDecayExact) {
  const loss::LossWeights w{0.2, 0.05, 2000};
  EXPECT_EQ(loss::perceptual_weight(0, w), 0.05);
  EXPECT_EQ(loss::perceptual_weight(1000, w), 0.025);
  EXPECT_EQ(loss::perceptual_weight(2000, w), 0.0);
  EXPECT_THROW(loss::perceptual_weight(2001, w), ContractError);
  EXPECT_GT(loss::perceptual_weight(500, w), loss::perceptual_weight(501, w));
}

TEST(TotalLoss, CombinesTerms) {
  const auto fe = loss::FeatureExtractor::builtin();
  const Tensor a = Tensor::constant({3, 12, 12}, random_values(432, 11));
  const Tensor b = Tensor::constant({3, 12, 12}, random_values(432, 12));
  const loss::LossWeights w{0.2, 0.05, 100};
  const auto t = loss::total_loss_terms(a, b, 50, w, fe);
  const double expect = loss::l1_loss(a, b).item() + 0.2 * loss::ssim_loss(a, b).item() +
                        0.025 * loss::perceptual_loss(a, b, fe).item();
  EXPECT_NEAR(t.total.item(), expect, 1e-14);
  const Tensor feats = fe(b);
  EXPECT_NEAR(loss::total_loss_terms(a, b, 50, w, fe, &feats).total.item(), expect, 1e-14);
  const auto end = loss::total_loss_terms(a, b, 100, w, fe);
  EXPECT_EQ(end.perceptual, 0.0);
  EXPECT_THROW(loss::total_loss_terms(a, b, 0, {-0.1, 0.05, 100}, fe), ContractError);
}

TEST(TotalLoss, Gradient) {
  const auto fe = loss::FeatureExtractor::builtin();
  const Tensor target = Tensor::constant({3, 11, 12}, random_values(396, 13));
  const loss::LossWeights w{0.2, 0.05, 10};
  const auto r = ad::finite_difference_check([&](const Tensor& x) { return loss::total_loss(x, target, 3, w, fe); },
                                             Tensor::constant({3, 11, 12}, random_values(396, 14, 0.05, 0.95)), 1e-6,
                                             1e-5);
  EXPECT_TRUE(r.passed) << r.max_rel_error;
}
