#include <cmath>
#include <cstdlib>
#include <vector>

#include <gtest/gtest.h>

#include "ahgs/gradcheck.hpp"
#include "ahgs/rasterizer.hpp"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace ahgs;
using ad::Tensor;

namespace {

double max_abs_diff(const ImageBuffer& a, const ImageBuffer& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.pixels.size(); ++i) m = std::max(m, std::abs(a.pixels[i] - b.pixels[i]));
  return m;
}

Projected2DGaussian disc(double x, double y, double var, double depth, double opacity, Eigen::Vector3d color,
                         std::size_t source) {
  Projected2DGaussian p;
  p.mean2d = {x, y};
  p.cov2d = Eigen::Matrix2d::Identity() * var;
  p.depth = depth;
  p.opacity = opacity;
  p.color = color;
  p.source = source;
  return p;
}

double weighted_sum(const ImageBuffer& img, const ImageBuffer& w) {
  double s = 0.0;
  for (std::size_t i = 0; i < img.pixels.size(); ++i) s += img.pixels[i] * w.pixels[i];
  return s;
}

ImageBuffer random_weights(std::size_t w, std::size_t h, std::uint64_t seed) {
  Rng rng(seed);
  ImageBuffer u(w, h);
  for (auto& v : u.pixels) v = rng.uniform(-1.0, 1.0);
  return u;
}

}  // namespace

TEST(Rasterizer, MatchesNaiveReference) {
  RasterSettings s;
  s.background = {0.1, 0.2, 0.3};
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const std::size_t n = 1 + rng.below(50);
    const auto prims = testutil::random_prims(rng, n, 32, 32);
    const ImageBuffer tiled = rasterize(prims, testutil::screen(32, 32), s);
    const ImageBuffer naive = oracle::naive_render(prims, 32, 32, s.background, s.t_min);
    EXPECT_LE(max_abs_diff(tiled, naive), 1e-12) << "seed " << seed;
  }
}

TEST(Rasterizer, HandComputedTwoPrimitives) {
  // red in front, green behind, both centered on pixel (0, 0)
  const std::vector<Projected2DGaussian> prims = {disc(0.5, 0.5, 1.0, 2.0, 0.5, {0, 1, 0}, 0),
                                                  disc(0.5, 0.5, 1.0, 1.0, 0.5, {1, 0, 0}, 1)};
  const ImageBuffer img = rasterize(prims, testutil::screen(4, 4), RasterSettings{});
  EXPECT_EQ(img.at(0, 0, 0), 0.5);
  EXPECT_EQ(img.at(0, 0, 1), 0.25);
  EXPECT_EQ(img.at(0, 0, 2), 0.0);
}

TEST(Rasterizer, EmptySceneIsBackground) {
  RasterSettings s;
  s.background = {0.25, 0.5, 1.0};
  const ImageBuffer img = rasterize({}, testutil::screen(20, 12), s);
  for (std::size_t y = 0; y < 12; ++y)
    for (std::size_t x = 0; x < 20; ++x) {
      EXPECT_EQ(img.at(x, y, 0), 0.25);
      EXPECT_EQ(img.at(x, y, 2), 1.0);
    }
}

TEST(Rasterizer, NoContributionBeyondThreeSigma) {
  // pixel (0,0) sits at Mahalanobis² 9.0001 from the mean
  const double d = std::sqrt(9.0001 / 2.0);
  const std::vector<Projected2DGaussian> prims = {disc(0.5 + d, 0.5 + d, 1.0, 1.0, 0.9, {1, 1, 1}, 0)};
  const ImageBuffer img = rasterize(prims, testutil::screen(8, 8), RasterSettings{});
  EXPECT_EQ(img.at(0, 0, 0), 0.0);
  EXPECT_GT(img.at(3, 3, 0), 0.0);
}

TEST(Rasterizer, SigmaClampedBelowOne) {
  const std::vector<Projected2DGaussian> prims = {disc(0.5, 0.5, 1.0, 1.0, 1.0, {1, 0, 0}, 0)};
  RasterSettings s;
  s.background = {0, 0, 1};
  const ImageBuffer img = rasterize(prims, testutil::screen(2, 2), s);
  EXPECT_DOUBLE_EQ(img.at(0, 0, 0), 0.99);
  EXPECT_NEAR(img.at(0, 0, 2), 0.01, 1e-15);
}

TEST(Rasterizer, StopsBelowMinimumTransmittance) {
  // after two clamped layers T = 1e-4, below t_min = 2e-4, so the third is skipped
  std::vector<Projected2DGaussian> prims = {disc(0.5, 0.5, 1.0, 1.0, 1.0, {0, 0, 0}, 0),
                                            disc(0.5, 0.5, 1.0, 2.0, 1.0, {0, 0, 0}, 1),
                                            disc(0.5, 0.5, 1.0, 3.0, 1.0, {1, 1, 1}, 2)};
  RasterSettings s;
  s.t_min = 2e-4;
  s.background = {1, 1, 1};
  const ImageBuffer img = rasterize(prims, testutil::screen(2, 2), s);
  EXPECT_NEAR(img.at(0, 0, 0), 1e-4, 1e-15);
}

TEST(Rasterizer, DepthTiesBrokenBySourceIndex) {
  std::vector<Projected2DGaussian> prims = {disc(4, 4, 4.0, 1.0, 0.6, {1, 0, 0}, 0),
                                            disc(4, 4, 4.0, 1.0, 0.6, {0, 0, 1}, 1)};
  const ImageBuffer a = rasterize(prims, testutil::screen(8, 8), RasterSettings{});
  std::swap(prims[0], prims[1]);
  const ImageBuffer b = rasterize(prims, testutil::screen(8, 8), RasterSettings{});
  EXPECT_EQ(a, b);
  EXPECT_GT(a.at(3, 3, 0), a.at(3, 3, 2));
}

TEST(Rasterizer, ThreadCountDoesNotChangeResults) {
  Rng rng(77);
  const auto prims = testutil::random_prims(rng, 60, 48, 40);
  const Camera cam = testutil::screen(48, 40);
  const ImageBuffer up = random_weights(48, 40, 3);
  RasterSettings one, many;
  one.threads = 1;
  many.threads = 5;
  EXPECT_EQ(rasterize(prims, cam, one), rasterize(prims, cam, many));
  const ProjectedGrads g1 = rasterize_backward(prims, cam, one, up), g5 = rasterize_backward(prims, cam, many, up);
  for (std::size_t i = 0; i < prims.size(); ++i) {
    EXPECT_EQ(g1.mean2d[i], g5.mean2d[i]);
    EXPECT_EQ(g1.cov2d[i], g5.cov2d[i]);
    EXPECT_EQ(g1.opacity[i], g5.opacity[i]);
    EXPECT_EQ(g1.color[i], g5.color[i]);
  }
}

TEST(Rasterizer, WorkerThreadsFromEnvironment) {
  EXPECT_EQ(worker_threads(3), 3u);
  ::setenv("AHGS_THREADS", "2", 1);
  EXPECT_EQ(worker_threads(0), 2u);
  ::unsetenv("AHGS_THREADS");
  EXPECT_GE(worker_threads(0), 1u);
}

TEST(RasterizerBackward, MatchesCentralDifferences) {
  Rng rng(5);
  auto prims = testutil::random_prims(rng, 12, 16, 16);
  for (auto& p : prims) p.opacity = std::min(p.opacity, 0.9);
  const Camera cam = testutil::screen(16, 16);
  RasterSettings s;
  s.background = {0.3, 0.6, 0.1};
  const ImageBuffer up = random_weights(16, 16, 9);
  const ProjectedGrads g = rasterize_backward(prims, cam, s, up);
  const double h = 1e-6;
  auto loss = [&] { return weighted_sum(rasterize(prims, cam, s), up); };
  auto fd = [&](double& v) {
    const double old = v;
    v = old + h;
    const double a = loss();
    v = old - h;
    const double b = loss();
    v = old;
    return (a - b) / (2 * h);
  };
  auto near = [](double analytic, double numeric) {
    return std::abs(analytic - numeric) <= 1e-5 * std::max({std::abs(analytic), std::abs(numeric), 1e-2});
  };
  for (std::size_t i = 0; i < prims.size(); ++i) {
    auto& p = prims[i];
    EXPECT_TRUE(near(g.opacity[i], fd(p.opacity))) << i;
    for (int c = 0; c < 3; ++c) EXPECT_TRUE(near(g.color[i][c], fd(p.color[c]))) << i;
    for (int c = 0; c < 2; ++c) EXPECT_TRUE(near(g.mean2d[i][c], fd(p.mean2d[c]))) << i;
    EXPECT_TRUE(near(g.cov2d[i](0, 0), fd(p.cov2d(0, 0)))) << i;
    EXPECT_TRUE(near(g.cov2d[i](1, 1), fd(p.cov2d(1, 1)))) << i;
    // symmetric perturbation of the off-diagonal pair
    const double old = p.cov2d(0, 1);
    p.cov2d(0, 1) = p.cov2d(1, 0) = old + h;
    const double a = loss();
    p.cov2d(0, 1) = p.cov2d(1, 0) = old - h;
    const double b = loss();
    p.cov2d(0, 1) = p.cov2d(1, 0) = old;
    EXPECT_TRUE(near(g.cov2d[i](0, 1) + g.cov2d[i](1, 0), (a - b) / (2 * h))) << i;
  }
}

TEST(Projection, PinholeMeanAndEwaCovariance) {
  const Camera cam = look_at({0, 0, -4}, {0, 0, 0}, {0, -1, 0}, 50, 60, 40, 30);
  NeuralGaussian g;
  g.mean = {0.2, -0.1, 0.5};
  g.scale = {0.1, 0.2, 0.3};
  const auto p = project(g, cam, 0.3, 7);
  ASSERT_TRUE(p.has_value());
  const Eigen::Vector3d t = cam.to_camera(g.mean);
  EXPECT_NEAR(p->mean2d.x(), 50 * t.x() / t.z() + 20, 1e-12);
  EXPECT_NEAR(p->mean2d.y(), 60 * t.y() / t.z() + 15, 1e-12);
  EXPECT_NEAR(p->depth, t.z(), 1e-12);
  EXPECT_EQ(p->source, 7u);
  EXPECT_TRUE(p->cov2d.isApprox(p->cov2d.transpose(), 1e-14));
  EXPECT_GT(p->cov2d.determinant(), 0.0);
  g.mean = {0, 0, -5};
  EXPECT_FALSE(project(g, cam, 0.3, 0).has_value());
}

TEST(Projection, BackwardMatchesCentralDifferences) {
  const Camera cam = look_at({0.5, -0.3, -4}, {0, 0, 0}, {0, -1, 0}, 50, 45, 40, 30);
  NeuralGaussian g;
  g.mean = {0.2, -0.1, 0.5};
  g.rotation = Eigen::Vector4d(0.9, 0.2, -0.3, 0.25).normalized();
  g.scale = {0.1, 0.2, 0.3};
  const Eigen::Vector2d a(0.7, -1.3);
  Eigen::Matrix2d B;
  B << 0.4, -0.8, 0.3, 1.1;
  auto loss = [&] {
    const auto p = project(g, cam, 0.3, 0);
    return a.dot(p->mean2d) + (B.array() * p->cov2d.array()).sum();
  };
  const ProjectionGrads pj = project_backward(g, cam, a, B);
  const CovarianceGrads cg = covariance3d_backward(g.rotation, g.scale, pj.cov3d);
  const double h = 1e-6;
  auto fd = [&](double& v) {
    const double old = v;
    v = old + h;
    const double p = loss();
    v = old - h;
    const double m = loss();
    v = old;
    return (p - m) / (2 * h);
  };
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(pj.mean[c], fd(g.mean[c]), 1e-6 * std::max(1.0, std::abs(pj.mean[c])));
  for (int c = 0; c < 3; ++c) EXPECT_NEAR(cg.scale[c], fd(g.scale[c]), 1e-6 * std::max(1.0, std::abs(cg.scale[c])));
  for (int c = 0; c < 4; ++c)
    EXPECT_NEAR(cg.rotation[c], fd(g.rotation[c]), 1e-6 * std::max(1.0, std::abs(cg.rotation[c])));
}

TEST(Covariance, IsRotatedDiagonal) {
  const Eigen::Vector4d q = Eigen::Vector4d(0.8, -0.1, 0.4, 0.3).normalized();
  const Eigen::Vector3d s(0.5, 1.5, 2.0);
  const Eigen::Matrix3d sigma = covariance3d(q, s);
  const Eigen::Matrix3d r = quaternion_to_rotation(q);
  EXPECT_TRUE((r * r.transpose()).isApprox(Eigen::Matrix3d::Identity(), 1e-14));
  EXPECT_NEAR(sigma.trace(), s.squaredNorm(), 1e-12);
  EXPECT_NEAR(sigma.determinant(), std::pow(s.prod(), 2), 1e-12);
}

TEST(RenderOp, GradientThroughProjectionAndRasterization) {
  const Camera cam = look_at({0.4, -0.2, -3}, {0, 0, 0}, {0, -1, 0}, 14, 14, 12, 12, 0.1, 10);
  Rng rng(21);
  const std::size_t m = 5;
  std::vector<double> mu, op, q, sc, col;
  for (std::size_t i = 0; i < m; ++i) {
    for (int c = 0; c < 3; ++c) mu.push_back(rng.uniform(-0.4, 0.4));
    op.push_back(rng.uniform(0.2, 0.8));
    for (int c = 0; c < 4; ++c) q.push_back(rng.uniform(-1, 1));
    for (int c = 0; c < 3; ++c) sc.push_back(rng.uniform(0.15, 0.35));
    for (int c = 0; c < 3; ++c) col.push_back(rng.uniform());
  }
  Tensor means = Tensor::parameter({m, 3}, mu), opacity = Tensor::parameter({m, 1}, op),
         rot = Tensor::parameter({m, 4}, q), scale = Tensor::parameter({m, 3}, sc), color = Tensor::parameter({m, 3}, col);
  const ImageBuffer w = random_weights(12, 12, 4);
  const Tensor weights = to_tensor(w);
  RasterSettings s;
  s.background = {0.2, 0.2, 0.2};
  auto fn = [&] { return ad::sum(render(means, opacity, ad::normalize(rot), scale, color, cam, s) * weights); };
  const auto r = ad::finite_difference_check(fn, {means, opacity, rot, scale, color}, 1e-6, 1e-5);
  EXPECT_TRUE(r.passed) << "param " << r.worst_param << " index " << r.worst_index << " analytic " << r.worst_analytic
                        << " numeric " << r.worst_numeric;
}

TEST(RenderOp, AuxFlagsAndGradientNorms) {
  const Camera cam = look_at({0, 0, -3}, {0, 0, 0}, {0, -1, 0}, 14, 14, 12, 12, 0.1, 10);
  Tensor means = Tensor::parameter({2, 3}, {0, 0, 0, 0, 0, -5});
  const Tensor op = Tensor::constant({2, 1}, {0.7, 0.7});
  const Tensor rot = Tensor::constant({2, 4}, {1, 0, 0, 0, 1, 0, 0, 0});
  const Tensor sc = Tensor::constant({2, 3}, {0.3, 0.3, 0.3, 0.3, 0.3, 0.3});
  const Tensor col = Tensor::constant({2, 3}, {1, 0, 0, 0, 1, 0});
  auto aux = std::make_shared<RenderAux>();
  const Tensor img = render(means, op, rot, sc, col, cam, RasterSettings{}, aux);
  EXPECT_EQ(img.shape(), (ad::Shape{3, 12, 12}));
  EXPECT_TRUE(aux->projected[0]);
  EXPECT_FALSE(aux->projected[1]);
  ad::backward(ad::sum(img * to_tensor(random_weights(12, 12, 1))));
  EXPECT_GT(aux->mean2d_grad_norm[0], 0.0);
  EXPECT_EQ(aux->mean2d_grad_norm[1], 0.0);
  EXPECT_EQ(means.grad()[3], 0.0);
  EXPECT_THROW(render(means, Tensor::constant({1, 1}, {0.5}), rot, sc, col, cam, RasterSettings{}), ShapeError);
}
