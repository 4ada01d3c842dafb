#pragma once

#include <cmath>
#include <optional>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"
#include "srl/core/ops.hpp"
#include "srl/data/augment.hpp"
#include "srl/model/vit.hpp"

namespace srl {

/// The shared region of two crops of the same image, with a fixed sampling
/// lattice. The canonical H_s x W_s lattice of cell centers lives in
/// original-image coordinates; each view maps those points into its own
/// feature grid (flip-resolved), so samples of the two views correspond
/// pointwise.
struct OverlapRect {
  double ox0 = 0, oy0 = 0, ox1 = 0, oy1 = 0;  // original-image normalized
  double v1x0 = 0, v1y0 = 0, v1x1 = 0, v1y1 = 0;  // view-1 normalized frame
  double v2x0 = 0, v2y0 = 0, v2x1 = 0, v2y1 = 0;  // view-2 normalized frame
  int grid_h = 0, grid_w = 0;                     // H_s, W_s
};

/// Intersection of two crop rectangles. Absent when the intersection covers
/// less than min_area of the original image.
inline std::optional<OverlapRect> overlap_rect(const CropGeometry& g1,
                                               const CropGeometry& g2,
                                               int grid_h, int grid_w,
                                               double min_area = 0.01) {
  OverlapRect ov;
  ov.ox0 = std::max(g1.x0, g2.x0);
  ov.oy0 = std::max(g1.y0, g2.y0);
  ov.ox1 = std::min(g1.x1, g2.x1);
  ov.oy1 = std::min(g1.y1, g2.y1);
  if (ov.ox1 <= ov.ox0 || ov.oy1 <= ov.oy0) return std::nullopt;
  if ((ov.ox1 - ov.ox0) * (ov.oy1 - ov.oy0) < min_area) return std::nullopt;
  ov.grid_h = grid_h;
  ov.grid_w = grid_w;
  auto to_view = [](const CropGeometry& g, double ox0, double oy0, double ox1,
                    double oy1, double& x0, double& y0, double& x1, double& y1) {
    double ua, va, ub, vb;
    original_to_view(g, ox0, oy0, ua, va);
    original_to_view(g, ox1, oy1, ub, vb);
    x0 = std::min(ua, ub);
    x1 = std::max(ua, ub);
    y0 = std::min(va, vb);
    y1 = std::max(va, vb);
  };
  to_view(g1, ov.ox0, ov.oy0, ov.ox1, ov.oy1, ov.v1x0, ov.v1y0, ov.v1x1, ov.v1y1);
  to_view(g2, ov.ox0, ov.oy0, ov.ox1, ov.oy1, ov.v2x0, ov.v2y0, ov.v2x1, ov.v2y1);
  return ov;
}

/// Feature-grid pixel coordinates (for grid_sample_bilinear) of the overlap
/// lattice, as seen by the given view. Row-major over the original-image
/// lattice, so both views enumerate the same original points in the same
/// order.
inline std::vector<Point2> overlap_sample_points(const OverlapRect& ov,
                                                 const CropGeometry& geom,
                                                 int feat_h, int feat_w) {
  std::vector<Point2> pts;
  pts.reserve(static_cast<std::size_t>(ov.grid_h) * ov.grid_w);
  for (int sy = 0; sy < ov.grid_h; ++sy)
    for (int sx = 0; sx < ov.grid_w; ++sx) {
      const double ox = ov.ox0 + (sx + 0.5) * (ov.ox1 - ov.ox0) / ov.grid_w;
      const double oy = ov.oy0 + (sy + 0.5) * (ov.oy1 - ov.oy0) / ov.grid_h;
      double u, v;
      original_to_view(geom, ox, oy, u, v);
      if (u < -1e-6 || u > 1.0 + 1e-6 || v < -1e-6 || v > 1.0 + 1e-6)
        throw ShapeError("overlap_sample_points: rect outside the view's feature grid");
      pts.push_back({u * feat_w - 0.5, v * feat_h - 0.5});
    }
  return pts;
}

/// Region-aligned sampling: bilinear samples of the view's C x H_f x W_f
/// patch features at the overlap lattice. Returns C x (H_s * W_s);
/// differentiable in the feature values.
template <typename T>
Array<T> sample_overlap(const Array<T>& feats, int grid_h, int grid_w,
                        const CropGeometry& geom, const OverlapRect& ov) {
  Array<T> grid = reshape(feats, {feats.rows(), grid_h, grid_w});
  return grid_sample_bilinear(grid,
                              overlap_sample_points(ov, geom, grid_h, grid_w));
}

template <typename T>
Array<T> sample_overlap(const EncodedView<T>& view, const OverlapRect& ov) {
  return sample_overlap(view.feats, view.grid_h, view.grid_w, view.geometry, ov);
}

enum class RelationKind { Pixel, Channel };

/// Square row-stochastic similarity matrix: N x N per head for the pixel
/// kind, C x C for the channel kind.
template <typename T>
struct RelationMatrix {
  Array<T> values;
  RelationKind kind = RelationKind::Pixel;
  int head = 0;
};

/// Pixel-level self-relation: channels are split into M contiguous blocks of
/// C/M; per head, the Gram matrix of pixel vectors is scaled by
/// 1/sqrt(C/M) and row-softmaxed at the given temperature (teacher branches
/// pass t_p, student branches pass 1).
template <typename T>
std::vector<RelationMatrix<T>> pixel_self_relation(const Array<T>& samples,
                                                   int heads, T temperature) {
  if (samples.rank() != 2)
    throw ShapeError("pixel_self_relation: expected C x N samples");
  const int c = samples.rows();
  if (heads <= 0 || c % heads != 0)
    throw ConfigError("pixel_self_relation: channel count " +
                      std::to_string(c) + " not divisible by " +
                      std::to_string(heads) + " heads");
  const int ch = c / heads;
  const T gram_scale = static_cast<T>(1.0 / std::sqrt(static_cast<double>(ch)));
  std::vector<RelationMatrix<T>> out;
  out.reserve(static_cast<std::size_t>(heads));
  for (int h = 0; h < heads; ++h) {
    Array<T> block = heads == 1 ? samples : slice_rows(samples, h * ch, (h + 1) * ch);
    Array<T> gram = scale(matmul(transpose2d(block), block), gram_scale);
    out.push_back({softmax_rows(gram, temperature), RelationKind::Pixel, h});
  }
  return out;
}

/// Channel-level self-relation: the Gram matrix over channels normalized by
/// the pixel count, then row-softmaxed. Uses all pixels of the view.
template <typename T>
RelationMatrix<T> channel_self_relation(const Array<T>& feats, T temperature) {
  if (feats.rank() != 2)
    throw ShapeError("channel_self_relation: expected C x N features");
  const T inv_n = static_cast<T>(1.0 / static_cast<double>(feats.cols()));
  Array<T> gram = scale(matmul(feats, transpose2d(feats)), inv_n);
  return {softmax_rows(gram, temperature), RelationKind::Channel, 0};
}

}  // namespace srl
