#include <gtest/gtest.h>

#include <cmath>

#include "srl/model/vit.hpp"
#include "support.hpp"

using srl::Array;
using srl::AttnProbe;
using srl::Rng;
using srl::View;
using srl::ViTConfig;
using srl::VitParams;

namespace {

View<double> view_of(Array<double> pixels) {
  View<double> v;
  v.pixels = std::move(pixels);
  v.geometry.out_size = v.pixels.dim(1);
  return v;
}

Array<double> random_image(int s, Rng& rng) {
  Array<double> img = Array<double>::zeros({3, s, s});
  for (auto& v : img.values()) v = rng.uniform(-1.0, 1.0);
  return img;
}

ViTConfig tiny_cfg() {
  ViTConfig cfg;
  cfg.image_size = 16;
  cfg.patch_size = 8;
  cfg.embed_dim = 8;
  cfg.depth = 1;
  cfg.attn_heads = 2;
  cfg.mlp_ratio = 2;
  return cfg;
}

}  // namespace

TEST(PatchEmbed, TokenCounts) {
  Rng rng(1);
  ViTConfig cfg;  // 64 / patch 8
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  Array<double> tokens = srl::patch_embed(p, random_image(64, rng));
  EXPECT_EQ(tokens.rows(), 65);
  EXPECT_EQ(tokens.cols(), 96);
  // larger input resolution: positional embedding interpolated 8x8 -> 12x12
  Array<double> large = srl::patch_embed(p, random_image(96, rng));
  EXPECT_EQ(large.rows(), 145);
  EXPECT_TRUE(srl::all_finite(large));
}

TEST(PatchEmbed, ZeroImageGivesPositionalEmbeddings) {
  Rng rng(2);
  ViTConfig cfg;
  VitParams<double> p = VitParams<double>::init(cfg, rng);  // biases zero
  Array<double> tokens = srl::patch_embed(p, Array<double>::zeros({3, 64, 64}));
  for (int i = 0; i < 64; ++i)
    for (int j = 0; j < 96; ++j)
      EXPECT_DOUBLE_EQ(tokens.at(1 + i, j), p.pos_grid.at(i, j));
  for (int j = 0; j < 96; ++j)
    EXPECT_DOUBLE_EQ(tokens.at(0, j), p.cls_token.at(0, j) + p.pos_cls.at(0, j));
}

TEST(PatchEmbed, SizeMismatchRejected) {
  Rng rng(3);
  ViTConfig cfg;
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  EXPECT_THROW(srl::patch_embed(p, random_image(65, rng)), srl::ShapeError);
}

TEST(Encode, OutputShapeContract) {
  Rng rng(4);
  ViTConfig cfg = tiny_cfg();
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  auto enc = srl::encode(p, view_of(random_image(16, rng)));
  EXPECT_EQ(enc.feats.rows(), 8);
  EXPECT_EQ(enc.feats.cols(), 4);  // (16/8)^2
  EXPECT_EQ(enc.grid_h, 2);
  EXPECT_EQ(enc.cls.rows(), 1);
  EXPECT_EQ(enc.cls.cols(), 8);
}

TEST(Encode, PermutationEquivariantWithoutPositional) {
  Rng rng(5);
  ViTConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;  // 4x4 = 16 patches
  cfg.embed_dim = 24;
  cfg.depth = 2;
  cfg.attn_heads = 3;
  cfg.pos_embed = false;
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  Array<double> img = random_image(32, rng);

  // permute patch blocks spatially: patch (gy, gx) -> (gx, gy)
  Array<double> perm_img = Array<double>::zeros({3, 32, 32});
  for (int c = 0; c < 3; ++c)
    for (int gy = 0; gy < 4; ++gy)
      for (int gx = 0; gx < 4; ++gx)
        for (int py = 0; py < 8; ++py)
          for (int px = 0; px < 8; ++px)
            perm_img.at(c * 1024 + (gx * 8 + py) * 32 + (gy * 8 + px)) =
                img.at(c * 1024 + (gy * 8 + py) * 32 + (gx * 8 + px));

  auto a = srl::encode(p, view_of(img));
  auto b = srl::encode(p, view_of(perm_img));
  // image token unchanged
  for (int j = 0; j < 24; ++j)
    EXPECT_NEAR(a.cls.at(0, j), b.cls.at(0, j), 1e-10);
  // patch features permuted identically (token (gy,gx) -> (gx,gy))
  for (int c = 0; c < 24; ++c)
    for (int gy = 0; gy < 4; ++gy)
      for (int gx = 0; gx < 4; ++gx)
        EXPECT_NEAR(a.feats.at(c, gy * 4 + gx), b.feats.at(c, gx * 4 + gy), 1e-10);
}

TEST(Encode, DepthZeroIsNormalizedPatchEmbed) {
  Rng rng(6);
  ViTConfig cfg = tiny_cfg();
  cfg.depth = 0;
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  Array<double> img = random_image(16, rng);
  auto enc = srl::encode(p, view_of(img));
  Array<double> want =
      srl::layer_norm_rows(srl::patch_embed(p, img), p.lnf_g, p.lnf_b);
  for (int j = 0; j < 8; ++j) EXPECT_DOUBLE_EQ(enc.cls.at(0, j), want.at(0, j));
  for (int n = 0; n < 4; ++n)
    for (int c = 0; c < 8; ++c)
      EXPECT_DOUBLE_EQ(enc.feats.at(c, n), want.at(1 + n, c));
}

TEST(Encode, AttentionRowsAreStochastic) {
  Rng rng(7);
  ViTConfig cfg;
  cfg.image_size = 32;
  cfg.patch_size = 8;
  cfg.embed_dim = 24;
  cfg.depth = 2;
  cfg.attn_heads = 3;
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  AttnProbe<double> probe;
  srl::encode(p, view_of(random_image(32, rng)), &probe);
  ASSERT_EQ(probe.matrices.size(), 6u);  // depth 2 x 3 heads
  for (const auto& a : probe.matrices) {
    ASSERT_EQ(a.rows(), 17);
    for (int i = 0; i < a.rows(); ++i) {
      double sum = 0.0;
      for (int j = 0; j < a.cols(); ++j) {
        EXPECT_GE(a.at(i, j), 0.0);
        sum += a.at(i, j);
      }
      EXPECT_NEAR(sum, 1.0, 1e-6);
    }
  }
}

TEST(Encode, BatchedViewsMatchShapes) {
  Rng rng(8);
  ViTConfig cfg = tiny_cfg();
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  std::vector<View<double>> views;
  views.push_back(view_of(random_image(16, rng)));
  views.push_back(view_of(random_image(8, rng)));  // local-size view
  views.push_back(view_of(random_image(16, rng)));
  auto enc = srl::encode_batch(p, views);
  ASSERT_EQ(enc.size(), 3u);
  EXPECT_EQ(enc[0].feats.cols(), 4);
  EXPECT_EQ(enc[1].feats.cols(), 1);
  EXPECT_EQ(enc[2].feats.cols(), 4);
}

TEST(Encode, NonFiniteParamsSurfaceAsTrainError) {
  Rng rng(9);
  ViTConfig cfg = tiny_cfg();
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  p.lnf_b.at(0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(srl::encode(p, view_of(random_image(16, rng))), srl::TrainError);
}

TEST(Encode, EndToEndGradientCheck) {
  for (std::uint64_t seed = 0; seed < 2; ++seed) {
    Rng rng(10 + seed);
    ViTConfig cfg = tiny_cfg();
    VitParams<double> p = VitParams<double>::init(cfg, rng);
    Array<double> img = random_image(16, rng);
    Array<double> wf = srl::test::random_array({8, 4}, rng);
    Array<double> wc = srl::test::random_array({1, 8}, rng);
    std::vector<srl::Array<double>*> params;
    p.visit([&params](const std::string&, Array<double>& a) {
      a.set_param();
      params.push_back(&a);
    });
    auto res = srl::test::check_gradients(params, [&]() {
      auto enc = srl::encode(p, view_of(img));
      return srl::add(srl::sum_all(srl::mul(enc.feats, wf)),
                      srl::sum_all(srl::mul(enc.cls, wc)));
    });
    EXPECT_TRUE(res.ok) << "seed " << seed << " max err " << res.max_abs_err
                        << " (analytic " << res.worst_analytic << ", numeric "
                        << res.worst_numeric << ")";
  }
}

TEST(Encode, PositionalInterpolationGradFlows) {
  Rng rng(12);
  ViTConfig cfg = tiny_cfg();
  VitParams<double> p = VitParams<double>::init(cfg, rng);
  Array<double> img = random_image(8, rng);  // grid 1 vs stored grid 2
  p.pos_grid.set_param();
  auto res = srl::test::check_gradients({&p.pos_grid}, [&]() {
    auto enc = srl::encode(p, view_of(img));
    return srl::sum_all(enc.feats);
  });
  EXPECT_TRUE(res.ok) << "max err " << res.max_abs_err;
}
