#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"
#include "srl/core/ops.hpp"
#include "srl/core/rng.hpp"
#include "srl/data/augment.hpp"

namespace srl {

struct ViTConfig {
  int image_size = 64;
  int patch_size = 8;
  int embed_dim = 96;
  int depth = 4;
  int attn_heads = 4;
  int mlp_ratio = 4;
  bool pos_embed = true;

  int base_grid() const { return image_size / patch_size; }

  void validate() const {
    if (image_size % patch_size != 0)
      throw ConfigError("ViTConfig: image_size not divisible by patch_size");
    if (embed_dim % attn_heads != 0)
      throw ConfigError("ViTConfig: embed_dim not divisible by attn_heads");
  }
};

template <typename T>
struct BlockParams {
  Array<T> ln1_g, ln1_b;
  Array<T> qkv_w, qkv_b;
  Array<T> proj_w, proj_b;
  Array<T> ln2_g, ln2_b;
  Array<T> fc1_w, fc1_b;
  Array<T> fc2_w, fc2_b;

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "ln1_g", ln1_g);
    f(prefix + "ln1_b", ln1_b);
    f(prefix + "qkv_w", qkv_w);
    f(prefix + "qkv_b", qkv_b);
    f(prefix + "proj_w", proj_w);
    f(prefix + "proj_b", proj_b);
    f(prefix + "ln2_g", ln2_g);
    f(prefix + "ln2_b", ln2_b);
    f(prefix + "fc1_w", fc1_w);
    f(prefix + "fc1_b", fc1_b);
    f(prefix + "fc2_w", fc2_w);
    f(prefix + "fc2_b", fc2_b);
  }
};

template <typename T>
struct VitParams {
  ViTConfig cfg;
  Array<T> patch_w, patch_b;  // (3*P*P) x C, C
  Array<T> cls_token;         // 1 x C
  Array<T> pos_cls;           // 1 x C
  Array<T> pos_grid;          // (G*G) x C for the base grid
  std::vector<BlockParams<T>> blocks;
  Array<T> lnf_g, lnf_b;

  /// Truncated-normal (std 0.02) projections, zero biases, unit norm scales.
  static VitParams init(const ViTConfig& cfg, Rng& rng) {
    cfg.validate();
    VitParams p;
    p.cfg = cfg;
    const int c = cfg.embed_dim;
    const int pd = 3 * cfg.patch_size * cfg.patch_size;
    const int g2 = cfg.base_grid() * cfg.base_grid();
    auto tn = [&rng](Shape s) {
      Array<T> a = Array<T>::zeros(std::move(s));
      for (T& v : a.values()) v = static_cast<T>(rng.truncated_normal(0.02));
      return a;
    };
    p.patch_w = tn({pd, c});
    p.patch_b = Array<T>::zeros({c});
    p.cls_token = tn({1, c});
    p.pos_cls = tn({1, c});
    p.pos_grid = tn({g2, c});
    p.blocks.resize(static_cast<std::size_t>(cfg.depth));
    for (auto& b : p.blocks) {
      b.ln1_g = Array<T>::full({c}, T(1));
      b.ln1_b = Array<T>::zeros({c});
      b.qkv_w = tn({c, 3 * c});
      b.qkv_b = Array<T>::zeros({3 * c});
      b.proj_w = tn({c, c});
      b.proj_b = Array<T>::zeros({c});
      b.ln2_g = Array<T>::full({c}, T(1));
      b.ln2_b = Array<T>::zeros({c});
      b.fc1_w = tn({c, cfg.mlp_ratio * c});
      b.fc1_b = Array<T>::zeros({cfg.mlp_ratio * c});
      b.fc2_w = tn({cfg.mlp_ratio * c, c});
      b.fc2_b = Array<T>::zeros({c});
    }
    p.lnf_g = Array<T>::full({c}, T(1));
    p.lnf_b = Array<T>::zeros({c});
    return p;
  }

  template <typename F>
  void visit(F&& f) {
    f("patch_w", patch_w);
    f("patch_b", patch_b);
    f("cls_token", cls_token);
    f("pos_cls", pos_cls);
    f("pos_grid", pos_grid);
    for (std::size_t i = 0; i < blocks.size(); ++i)
      blocks[i].visit("blocks." + std::to_string(i) + ".", f);
    f("lnf_g", lnf_g);
    f("lnf_b", lnf_b);
  }
};

/// Dense per-view output: patch features as C x N (N = grid_h * grid_w,
/// row-major over the feature grid) plus the image-level token.
template <typename T>
struct EncodedView {
  Array<T> feats;  // C x N
  Array<T> cls;    // 1 x C
  int grid_h = 0, grid_w = 0;
  CropGeometry geometry;
};

/// Optional capture of MHSA attention matrices (tests only).
template <typename T>
struct AttnProbe {
  std::vector<Array<T>> matrices;
};

namespace detail {

/// Rearranges 3 x S x S pixels into an N x (3*P*P) patch matrix. Pure data
/// movement on constant inputs; not differentiable (images are not tracked).
template <typename T>
Array<T> patchify(const Array<T>& image, int patch) {
  if (image.rank() != 3 || image.dim(0) != 3 || image.dim(1) != image.dim(2))
    throw ShapeError("patchify: expected 3 x S x S image, got " +
                     shape_str(image.shape()));
  const int s = image.dim(1);
  if (s % patch != 0)
    throw ShapeError("patchify: image side " + std::to_string(s) +
                     " not divisible by patch size " + std::to_string(patch));
  const int g = s / patch;
  const int pd = 3 * patch * patch;
  Array<T> out = Array<T>::zeros({g * g, pd});
  const std::size_t plane = static_cast<std::size_t>(s) * s;
  for (int gy = 0; gy < g; ++gy)
    for (int gx = 0; gx < g; ++gx) {
      T* row = out.data() + static_cast<std::size_t>(gy * g + gx) * pd;
      std::size_t k = 0;
      for (int c = 0; c < 3; ++c)
        for (int py = 0; py < patch; ++py)
          for (int px = 0; px < patch; ++px)
            row[k++] = image.data()[static_cast<std::size_t>(c) * plane +
                                    static_cast<std::size_t>(gy * patch + py) * s +
                                    (gx * patch + px)];
    }
  return out;
}

/// Positional embeddings for an arbitrary grid size, bilinearly interpolated
/// from the stored base grid. Differentiable in the stored embedding.
template <typename T>
Array<T> interp_pos_grid(VitParams<T>& p, int grid) {
  const int base = p.cfg.base_grid();
  if (grid == base) return p.pos_grid;
  Array<T> chw = reshape(transpose2d(p.pos_grid), {p.cfg.embed_dim, base, base});
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(grid) * grid);
  const double scale = static_cast<double>(base) / grid;
  for (int y = 0; y < grid; ++y)
    for (int x = 0; x < grid; ++x)
      pts.push_back({(x + 0.5) * scale - 0.5, (y + 0.5) * scale - 0.5});
  return transpose2d(grid_sample_bilinear(chw, pts));
}

}  // namespace detail

/// Linear patch projection + learnable class token + positional embeddings
/// (interpolated when the view grid differs from the stored grid).
/// Returns the (1 + N) x C token sequence.
template <typename T>
Array<T> patch_embed(VitParams<T>& p, const Array<T>& image) {
  Array<T> pm = detail::patchify(image, p.cfg.patch_size);
  Array<T> e = add_rowvec(matmul(pm, p.patch_w), p.patch_b);
  Array<T> tokens = concat_rows<T>({p.cls_token, e});
  if (p.cfg.pos_embed) {
    const int grid = image.dim(1) / p.cfg.patch_size;
    Array<T> pos = concat_rows<T>({p.pos_cls, detail::interp_pos_grid(p, grid)});
    tokens = add(tokens, pos);
  }
  return tokens;
}

/// Encodes a batch of views jointly: token-wise ops (projections, norms, FFN)
/// run on the concatenated token matrix, attention runs per view. All views
/// must come from the same parameter set.
template <typename T>
std::vector<EncodedView<T>> encode_batch(VitParams<T>& p,
                                         const std::vector<View<T>>& views,
                                         AttnProbe<T>* probe = nullptr) {
  const int c = p.cfg.embed_dim;
  const int heads = p.cfg.attn_heads;
  const int dh = c / heads;
  const T attn_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(dh)));

  std::vector<int> grids, offsets, lengths;
  std::vector<Array<T>> patch_mats;
  for (const auto& v : views) {
    const int s = v.pixels.dim(1);
    const int grid = s / p.cfg.patch_size;
    grids.push_back(grid);
    patch_mats.push_back(detail::patchify(v.pixels, p.cfg.patch_size));
  }
  Array<T> embedded = add_rowvec(matmul(concat_rows(patch_mats), p.patch_w), p.patch_b);

  std::vector<Array<T>> token_list;
  int eoff = 0, toff = 0;
  for (std::size_t i = 0; i < views.size(); ++i) {
    const int n = grids[i] * grids[i];
    Array<T> tok = concat_rows<T>({p.cls_token, slice_rows(embedded, eoff, eoff + n)});
    if (p.cfg.pos_embed) {
      Array<T> pos = concat_rows<T>({p.pos_cls, detail::interp_pos_grid(p, grids[i])});
      tok = add(tok, pos);
    }
    offsets.push_back(toff);
    lengths.push_back(1 + n);
    toff += 1 + n;
    eoff += n;
    token_list.push_back(std::move(tok));
  }
  Array<T> y = concat_rows(token_list);

  for (auto& blk : p.blocks) {
    Array<T> h = layer_norm_rows(y, blk.ln1_g, blk.ln1_b);
    Array<T> qkv = add_rowvec(matmul(h, blk.qkv_w), blk.qkv_b);
    std::vector<Array<T>> view_outs;
    for (std::size_t i = 0; i < views.size(); ++i) {
      Array<T> rows = slice_rows(qkv, offsets[i], offsets[i] + lengths[i]);
      std::vector<Array<T>> head_outs;
      for (int hd = 0; hd < heads; ++hd) {
        Array<T> q = slice_cols(rows, hd * dh, (hd + 1) * dh);
        Array<T> k = slice_cols(rows, c + hd * dh, c + (hd + 1) * dh);
        Array<T> v = slice_cols(rows, 2 * c + hd * dh, 2 * c + (hd + 1) * dh);
        Array<T> a = softmax_rows(scale(matmul(q, transpose2d(k)), attn_scale), T(1));
        if (probe) probe->matrices.push_back(a);
        head_outs.push_back(matmul(a, v));
      }
      view_outs.push_back(concat_cols(head_outs));
    }
    y = add(y, add_rowvec(matmul(concat_rows(view_outs), blk.proj_w), blk.proj_b));
    Array<T> h2 = layer_norm_rows(y, blk.ln2_g, blk.ln2_b);
    Array<T> f = gelu(add_rowvec(matmul(h2, blk.fc1_w), blk.fc1_b));
    y = add(y, add_rowvec(matmul(f, blk.fc2_w), blk.fc2_b));
  }
  y = layer_norm_rows(y, p.lnf_g, p.lnf_b);
  if (!all_finite(y))
    throw TrainError("encoder produced non-finite activations");

  std::vector<EncodedView<T>> out;
  out.reserve(views.size());
  for (std::size_t i = 0; i < views.size(); ++i) {
    EncodedView<T> ev;
    ev.cls = slice_rows(y, offsets[i], offsets[i] + 1);
    ev.feats = transpose2d(slice_rows(y, offsets[i] + 1, offsets[i] + lengths[i]));
    ev.grid_h = ev.grid_w = grids[i];
    ev.geometry = views[i].geometry;
    out.push_back(std::move(ev));
  }
  return out;
}

/// Single-view convenience wrapper.
template <typename T>
EncodedView<T> encode(VitParams<T>& p, const View<T>& view,
                      AttnProbe<T>* probe = nullptr) {
  return encode_batch(p, std::vector<View<T>>{view}, probe)[0];
}

}  // namespace srl
