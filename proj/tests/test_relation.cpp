#include <gtest/gtest.h>

#include <cmath>

#include "srl/relation/relation.hpp"
#include "support.hpp"

using srl::Array;
using srl::CropGeometry;
using srl::EncodedView;
using srl::OverlapRect;
using srl::Rng;

namespace {

CropGeometry geom(double x0, double y0, double x1, double y1, bool flip = false,
                  int out = 64) {
  CropGeometry g;
  g.x0 = x0;
  g.y0 = y0;
  g.x1 = x1;
  g.y1 = y1;
  g.hflip = flip;
  g.out_size = out;
  return g;
}

EncodedView<double> fake_view(Array<double> feats, int grid, CropGeometry g) {
  EncodedView<double> v;
  v.feats = std::move(feats);
  v.grid_h = v.grid_w = grid;
  v.geometry = g;
  return v;
}

CropGeometry random_geom(Rng& rng) {
  CropGeometry g;
  const double w = rng.uniform(0.2, 0.9);
  const double h = rng.uniform(0.2, 0.9);
  g.x0 = rng.uniform(0.0, 1.0 - w);
  g.y0 = rng.uniform(0.0, 1.0 - h);
  g.x1 = g.x0 + w;
  g.y1 = g.y0 + h;
  g.hflip = rng.bernoulli(0.5);
  return g;
}

}  // namespace

TEST(OverlapRect, IdenticalGeometriesCoverFullCrop) {
  CropGeometry g = geom(0.1, 0.2, 0.7, 0.9);
  auto ov = srl::overlap_rect(g, g, 4, 4);
  ASSERT_TRUE(ov.has_value());
  EXPECT_DOUBLE_EQ(ov->ox0, 0.1);
  EXPECT_DOUBLE_EQ(ov->oy0, 0.2);
  EXPECT_DOUBLE_EQ(ov->ox1, 0.7);
  EXPECT_DOUBLE_EQ(ov->oy1, 0.9);
  EXPECT_NEAR(ov->v1x0, 0.0, 1e-12);
  EXPECT_NEAR(ov->v1y0, 0.0, 1e-12);
  EXPECT_NEAR(ov->v1x1, 1.0, 1e-12);
  EXPECT_NEAR(ov->v1y1, 1.0, 1e-12);
}

TEST(OverlapRect, IntervalArithmeticExample) {
  auto ov = srl::overlap_rect(geom(0, 0, 0.5, 0.5), geom(0.25, 0.25, 0.75, 0.75), 4, 4);
  ASSERT_TRUE(ov.has_value());
  EXPECT_DOUBLE_EQ(ov->ox0, 0.25);
  EXPECT_DOUBLE_EQ(ov->oy0, 0.25);
  EXPECT_DOUBLE_EQ(ov->ox1, 0.5);
  EXPECT_DOUBLE_EQ(ov->oy1, 0.5);
  EXPECT_NEAR(ov->v1x0, 0.5, 1e-12);
  EXPECT_NEAR(ov->v1x1, 1.0, 1e-12);
  EXPECT_NEAR(ov->v2x0, 0.0, 1e-12);
  EXPECT_NEAR(ov->v2x1, 0.5, 1e-12);
}

TEST(OverlapRect, DisjointRectsAreAbsent) {
  EXPECT_FALSE(srl::overlap_rect(geom(0, 0, 0.4, 0.4), geom(0.6, 0.6, 1, 1), 4, 4));
  // below the 1% area threshold
  EXPECT_FALSE(srl::overlap_rect(geom(0, 0, 0.505, 0.5), geom(0.5, 0.45, 1, 1), 4, 4)
                   .has_value());
}

TEST(SampleOverlap, FullGridIdentitySampling) {
  Rng rng(1);
  const int grid = 4;
  Array<double> feats = srl::test::random_array({3, grid * grid}, rng);
  CropGeometry g = geom(0.2, 0.2, 0.8, 0.8);
  auto ov = srl::overlap_rect(g, g, grid, grid);
  ASSERT_TRUE(ov.has_value());
  Array<double> sampled = srl::sample_overlap(fake_view(feats, grid, g), *ov);
  ASSERT_EQ(sampled.shape(), feats.shape());
  for (std::size_t i = 0; i < feats.numel(); ++i)
    EXPECT_EQ(sampled.data()[i], feats.data()[i]);  // exact lattice alignment
}

TEST(SampleOverlap, ConstantFeaturesAnyRect) {
  const int grid = 5;
  Array<double> feats = Array<double>::full({2, grid * grid}, 3.25);
  CropGeometry g1 = geom(0.0, 0.0, 0.8, 0.9);
  CropGeometry g2 = geom(0.3, 0.2, 1.0, 1.0, true);
  auto ov = srl::overlap_rect(g1, g2, 3, 3);
  ASSERT_TRUE(ov.has_value());
  Array<double> s = srl::sample_overlap(fake_view(feats, grid, g1), *ov);
  for (double v : s.values()) EXPECT_DOUBLE_EQ(v, 3.25);
}

// Point correspondence against a from-scratch coordinate oracle: the k-th
// sample of both views must name the same original-image point.
TEST(SampleOverlap, CoordinateCorrespondenceOracle) {
  Rng rng(2);
  const int grid_feat = 8;
  int checked = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    CropGeometry g1 = random_geom(rng);
    CropGeometry g2 = random_geom(rng);
    auto ov = srl::overlap_rect(g1, g2, 5, 5);
    if (!ov) continue;
    ++checked;
    auto pts1 = srl::overlap_sample_points(*ov, g1, grid_feat, grid_feat);
    auto pts2 = srl::overlap_sample_points(*ov, g2, grid_feat, grid_feat);
    for (int sy = 0; sy < 5; ++sy)
      for (int sx = 0; sx < 5; ++sx) {
        const std::size_t k = static_cast<std::size_t>(sy * 5 + sx);
        // oracle: lattice point in original coordinates
        const double ox = ov->ox0 + (sx + 0.5) * (ov->ox1 - ov->ox0) / 5.0;
        const double oy = ov->oy0 + (sy + 0.5) * (ov->oy1 - ov->oy0) / 5.0;
        // map each view's feature coordinate back to original coordinates
        for (const auto& [pts, g] : {std::pair(pts1, g1), std::pair(pts2, g2)}) {
          double u = (pts[k].x + 0.5) / grid_feat;
          double v = (pts[k].y + 0.5) / grid_feat;
          if (g.hflip) u = 1.0 - u;
          EXPECT_NEAR(g.x0 + u * (g.x1 - g.x0), ox, 1e-6);
          EXPECT_NEAR(g.y0 + v * (g.y1 - g.y0), oy, 1e-6);
        }
      }
  }
  EXPECT_GT(checked, 300);
}

TEST(PixelRelation, IdenticalPixelsGiveUniformRows) {
  Array<double> samples = Array<double>::zeros({4, 3});
  for (int c = 0; c < 4; ++c)
    for (int n = 0; n < 3; ++n) samples.at(c, n) = 0.7 * c;
  auto rel = srl::pixel_self_relation(samples, 2, 0.5);
  ASSERT_EQ(rel.size(), 2u);
  for (const auto& r : rel)
    for (double v : r.values.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(PixelRelation, ClosedFormTwoPixels) {
  Array<double> samples = Array<double>::from({1, 2}, {1.0, -1.0});
  auto rel = srl::pixel_self_relation(samples, 1, 1.0);
  ASSERT_EQ(rel.size(), 1u);
  EXPECT_NEAR(rel[0].values.at(0, 0), 0.88080, 1e-4);
  EXPECT_NEAR(rel[0].values.at(0, 1), 0.11920, 1e-4);
  EXPECT_NEAR(rel[0].values.at(1, 1), 0.88080, 1e-4);
}

TEST(PixelRelation, PermutingPixelsConjugatesMatrix) {
  Rng rng(3);
  const int c = 6, n = 5;
  Array<double> x = srl::test::random_array({c, n}, rng);
  std::vector<int> perm{3, 0, 4, 1, 2};
  Array<double> xp = Array<double>::zeros({c, n});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < n; ++j) xp.at(i, j) = x.at(i, perm[static_cast<std::size_t>(j)]);
  auto ra = srl::pixel_self_relation(x, 3, 0.7);
  auto rb = srl::pixel_self_relation(xp, 3, 0.7);
  for (int h = 0; h < 3; ++h)
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        EXPECT_NEAR(rb[static_cast<std::size_t>(h)].values.at(i, j),
                    ra[static_cast<std::size_t>(h)].values.at(perm[static_cast<std::size_t>(i)],
                                                              perm[static_cast<std::size_t>(j)]),
                    1e-12);
}

TEST(PixelRelation, SingleHeadEqualsMultiHeadWithM1) {
  Rng rng(4);
  Array<double> x = srl::test::random_array({6, 4}, rng);
  auto multi = srl::pixel_self_relation(x, 1, 0.5);
  // single-head definition computed directly: softmax(X^T X / sqrt(C) / t)
  Array<double> gram = Array<double>::zeros({4, 4});
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      double acc = 0.0;
      for (int c = 0; c < 6; ++c) acc += x.at(c, i) * x.at(c, j);
      gram.at(i, j) = acc / std::sqrt(6.0);
    }
  Array<double> want = srl::softmax_rows(gram, 0.5);
  for (std::size_t i = 0; i < want.numel(); ++i)
    EXPECT_NEAR(multi[0].values.data()[i], want.data()[i], 1e-12);
}

TEST(PixelRelation, HeadCountMustDivideChannels) {
  Array<double> x = Array<double>::zeros({5, 3});
  EXPECT_THROW(srl::pixel_self_relation(x, 2, 1.0), srl::ConfigError);
}

TEST(PixelRelation, ScalingEqualsTemperatureChange) {
  Rng rng(5);
  Array<double> x = srl::test::random_array({4, 6}, rng);
  const double s = 1.7;
  Array<double> xs = srl::scale(x, s);
  auto a = srl::pixel_self_relation(xs, 2, 1.3);
  auto b = srl::pixel_self_relation(x, 2, 1.3 / (s * s));
  for (int h = 0; h < 2; ++h)
    for (std::size_t i = 0; i < a[static_cast<std::size_t>(h)].values.numel(); ++i)
      EXPECT_NEAR(a[static_cast<std::size_t>(h)].values.data()[i],
                  b[static_cast<std::size_t>(h)].values.data()[i], 1e-8);
}

TEST(ChannelRelation, IdenticalChannelsGiveUniformRows) {
  Array<double> x = Array<double>::zeros({3, 4});
  for (int c = 0; c < 3; ++c)
    for (int n = 0; n < 4; ++n) x.at(c, n) = 0.3 * n;
  auto rel = srl::channel_self_relation(x, 0.1);
  for (double v : rel.values.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-12);
}

TEST(ChannelRelation, ZeroFeaturesGiveUniformRows) {
  auto rel = srl::channel_self_relation(Array<double>::zeros({5, 7}), 0.1);
  for (double v : rel.values.values()) EXPECT_NEAR(v, 0.2, 1e-12);
}

TEST(ChannelRelation, ClosedFormOrthogonalRows) {
  Array<double> x = Array<double>::from({2, 2}, {1, 1, 1, -1});
  auto rel = srl::channel_self_relation(x, 1.0);
  EXPECT_NEAR(rel.values.at(0, 0), 0.73106, 1e-4);
  EXPECT_NEAR(rel.values.at(1, 1), 0.73106, 1e-4);
  EXPECT_NEAR(rel.values.at(0, 1), 0.26894, 1e-4);
}

TEST(ChannelRelation, ExactlyInvariantToPixelPermutation) {
  // integer-valued features make the dot products exact, so reordering the
  // summation cannot change them
  Rng rng(6);
  const int c = 5, n = 8;
  Array<double> x = Array<double>::zeros({c, n});
  for (auto& v : x.values()) v = static_cast<double>(rng.next_below(5)) - 2.0;
  std::vector<int> perm(n);
  for (int i = 0; i < n; ++i) perm[static_cast<std::size_t>(i)] = i;
  for (std::size_t i = n; i > 1; --i)
    std::swap(perm[i - 1], perm[rng.next_below(i)]);
  Array<double> xp = Array<double>::zeros({c, n});
  for (int i = 0; i < c; ++i)
    for (int j = 0; j < n; ++j) xp.at(i, j) = x.at(i, perm[static_cast<std::size_t>(j)]);
  auto ra = srl::channel_self_relation(x, 0.3);
  auto rb = srl::channel_self_relation(xp, 0.3);
  for (std::size_t i = 0; i < ra.values.numel(); ++i)
    EXPECT_EQ(ra.values.data()[i], rb.values.data()[i]);
}

TEST(RelationMatrices, RowStochasticProperty) {
  Rng rng(7);
  for (int trial = 0; trial < 300; ++trial) {
    const int m_choices[4] = {1, 2, 3, 6};
    const int m = m_choices[rng.next_below(4)];
    const int c = m * (1 + static_cast<int>(rng.next_below(3)));
    const int n = 2 + static_cast<int>(rng.next_below(7));
    Array<double> x = srl::test::random_array({c, n}, rng, -3.0, 3.0);
    auto pix = srl::pixel_self_relation(x, m, rng.uniform(0.1, 2.0));
    for (const auto& r : pix) {
      for (int i = 0; i < n; ++i) {
        double sum = 0.0;
        for (int j = 0; j < n; ++j) {
          EXPECT_GE(r.values.at(i, j), 0.0);
          sum += r.values.at(i, j);
        }
        EXPECT_NEAR(sum, 1.0, 1e-6);
      }
    }
    auto ch = srl::channel_self_relation(x, rng.uniform(0.05, 1.0));
    for (int i = 0; i < c; ++i) {
      double sum = 0.0;
      for (int j = 0; j < c; ++j) sum += ch.values.at(i, j);
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(RelationGradients, FiniteDifferenceChecks) {
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Rng rng(100 + seed);
    Array<double> x = srl::test::random_array({4, 5}, rng);
    Array<double> wp = srl::test::random_array({5, 5}, rng);
    Array<double> wc = srl::test::random_array({4, 4}, rng);
    x.set_param();
    auto res = srl::test::check_gradients({&x}, [&]() {
      auto pix = srl::pixel_self_relation(x, 2, 0.7);
      Array<double> acc = srl::sum_all(srl::mul(pix[0].values, wp));
      acc = srl::add(acc, srl::sum_all(srl::mul(pix[1].values, wp)));
      auto ch = srl::channel_self_relation(x, 0.3);
      return srl::add(acc, srl::sum_all(srl::mul(ch.values, wc)));
    });
    EXPECT_TRUE(res.ok) << "seed " << seed << " max err " << res.max_abs_err;
  }
}

TEST(SampleOverlap, GradientFlowsThroughSampling) {
  Rng rng(8);
  const int grid = 4;
  Array<double> feats = srl::test::random_array({3, grid * grid}, rng);
  CropGeometry g1 = geom(0.0, 0.0, 0.7, 0.7);
  CropGeometry g2 = geom(0.3, 0.3, 1.0, 1.0, true);
  auto ov = srl::overlap_rect(g1, g2, 3, 3);
  ASSERT_TRUE(ov.has_value());
  Array<double> w = srl::test::random_array({3, 9}, rng);
  feats.set_param();
  auto res = srl::test::check_gradients({&feats}, [&]() {
    Array<double> s = srl::sample_overlap(feats, grid, grid, g1, *ov);
    return srl::sum_all(srl::mul(s, w));
  });
  EXPECT_TRUE(res.ok) << "max err " << res.max_abs_err;
}
