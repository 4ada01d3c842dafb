#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"
#include "srl/core/rng.hpp"

namespace srl {

enum class CropKind { Global, Local };

/// Exact record of how a view was cut from its source image: the normalized
/// source rectangle, the horizontal-flip flag and the output resolution.
/// Together these make the crop transform invertible, which is what the
/// overlap-aligned sampling needs.
struct CropGeometry {
  double x0 = 0, y0 = 0, x1 = 1, y1 = 1;  // normalized, x0 < x1, y0 < y1
  bool hflip = false;
  int out_size = 0;
  CropKind kind = CropKind::Global;

  double width() const { return x1 - x0; }
  double height() const { return y1 - y0; }
  double area() const { return width() * height(); }
};

/// Maps view-normalized coordinates (u, v in [0,1]) to original-image
/// normalized coordinates, resolving the flip.
inline void view_to_original(const CropGeometry& g, double u, double v,
                             double& ox, double& oy) {
  if (g.hflip) u = 1.0 - u;
  ox = g.x0 + u * (g.x1 - g.x0);
  oy = g.y0 + v * (g.y1 - g.y0);
}

/// Inverse of view_to_original.
inline void original_to_view(const CropGeometry& g, double ox, double oy,
                             double& u, double& v) {
  u = (ox - g.x0) / (g.x1 - g.x0);
  v = (oy - g.y0) / (g.y1 - g.y0);
  if (g.hflip) u = 1.0 - u;
}

struct AugConfig {
  int global_size = 64;
  int local_size = 32;
  int n_local = 4;
  double global_ratio_min = 0.35;
  double global_ratio_max = 1.0;
  double local_ratio_min = 0.05;
  double local_ratio_max = 0.35;
  double aspect_min = 0.75;
  double aspect_max = 4.0 / 3.0;
  double hflip_prob = 0.5;
  double color_jitter_prob = 0.8;
  double grayscale_prob = 0.2;
  double blur_prob = 0.5;
  int min_source_side = 8;
};

template <typename T>
struct View {
  Array<T> pixels;  // 3 x out_size x out_size, values in [0, 1]
  CropGeometry geometry;
};

namespace detail {

template <typename T>
inline T sample_border_clamped(const Array<T>& img, int c, double y, double x) {
  const int h = img.dim(1), w = img.dim(2);
  x = std::min(std::max(x, 0.0), static_cast<double>(w - 1));
  y = std::min(std::max(y, 0.0), static_cast<double>(h - 1));
  const int x0 = static_cast<int>(std::floor(x));
  const int y0 = static_cast<int>(std::floor(y));
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double wx = x - x0, wy = y - y0;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const T* p = img.data() + static_cast<std::size_t>(c) * plane;
  const double v00 = p[static_cast<std::size_t>(y0) * w + x0];
  const double v01 = p[static_cast<std::size_t>(y0) * w + x1];
  const double v10 = p[static_cast<std::size_t>(y1) * w + x0];
  const double v11 = p[static_cast<std::size_t>(y1) * w + x1];
  return static_cast<T>((v00 * (1 - wx) + v01 * wx) * (1 - wy) +
                        (v10 * (1 - wx) + v11 * wx) * wy);
}

template <typename T>
void apply_color_jitter(Array<T>& view, Rng& rng) {
  const double brightness = rng.uniform(0.6, 1.4);
  const double contrast = rng.uniform(0.6, 1.4);
  const double saturation = rng.uniform(0.6, 1.4);
  const int n = view.dim(1) * view.dim(2);
  T* r = view.data();
  T* g = view.data() + n;
  T* b = view.data() + 2 * n;
  double mean_lum = 0.0;
  for (int i = 0; i < n; ++i)
    mean_lum += 0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i];
  mean_lum /= n;
  for (int i = 0; i < n; ++i) {
    double cr = r[i] * brightness;
    double cg = g[i] * brightness;
    double cb = b[i] * brightness;
    cr = (cr - mean_lum) * contrast + mean_lum;
    cg = (cg - mean_lum) * contrast + mean_lum;
    cb = (cb - mean_lum) * contrast + mean_lum;
    const double lum = 0.299 * cr + 0.587 * cg + 0.114 * cb;
    cr = lum + (cr - lum) * saturation;
    cg = lum + (cg - lum) * saturation;
    cb = lum + (cb - lum) * saturation;
    r[i] = static_cast<T>(std::min(std::max(cr, 0.0), 1.0));
    g[i] = static_cast<T>(std::min(std::max(cg, 0.0), 1.0));
    b[i] = static_cast<T>(std::min(std::max(cb, 0.0), 1.0));
  }
}

template <typename T>
void apply_grayscale(Array<T>& view) {
  const int n = view.dim(1) * view.dim(2);
  T* r = view.data();
  T* g = view.data() + n;
  T* b = view.data() + 2 * n;
  for (int i = 0; i < n; ++i) {
    const T lum = static_cast<T>(0.299 * r[i] + 0.587 * g[i] + 0.114 * b[i]);
    r[i] = g[i] = b[i] = lum;
  }
}

template <typename T>
void apply_gaussian_blur(Array<T>& view, double sigma) {
  const int s = view.dim(1);
  const int radius = std::max(1, static_cast<int>(std::ceil(2.0 * sigma)));
  std::vector<double> kernel(static_cast<std::size_t>(2 * radius + 1));
  double ksum = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    kernel[static_cast<std::size_t>(i + radius)] = std::exp(-0.5 * i * i / (sigma * sigma));
    ksum += kernel[static_cast<std::size_t>(i + radius)];
  }
  for (auto& k : kernel) k /= ksum;
  std::vector<double> tmp(static_cast<std::size_t>(s) * s);
  for (int c = 0; c < 3; ++c) {
    T* plane = view.data() + static_cast<std::size_t>(c) * s * s;
    // horizontal
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int xx = std::min(std::max(x + k, 0), s - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * plane[static_cast<std::size_t>(y) * s + xx];
        }
        tmp[static_cast<std::size_t>(y) * s + x] = acc;
      }
    // vertical
    for (int y = 0; y < s; ++y)
      for (int x = 0; x < s; ++x) {
        double acc = 0.0;
        for (int k = -radius; k <= radius; ++k) {
          const int yy = std::min(std::max(y + k, 0), s - 1);
          acc += kernel[static_cast<std::size_t>(k + radius)] * tmp[static_cast<std::size_t>(yy) * s + x];
        }
        plane[static_cast<std::size_t>(y) * s + x] = static_cast<T>(acc);
      }
  }
}

}  // namespace detail

/// Draws a random crop: area ratio uniform in the kind's range, aspect ratio
/// uniform in [aspect_min, aspect_max], bilinear resize to the kind's output
/// size, horizontal flip with the configured probability. Geometry is
/// recorded before photometric jitter is applied. Up to 10 attempts to fit
/// the sampled rectangle, then a maximal centered crop.
template <typename T>
View<T> sample_crop(const Array<T>& image, CropKind kind, const AugConfig& cfg,
                    Rng& rng) {
  if (image.rank() != 3 || image.dim(0) != 3)
    throw ShapeError("sample_crop: expected 3 x H x W image");
  const int ih = image.dim(1), iw = image.dim(2);
  if (ih < cfg.min_source_side || iw < cfg.min_source_side)
    throw ValueError("sample_crop: degenerate image (" + std::to_string(iw) +
                     "x" + std::to_string(ih) + ")");
  const bool global = kind == CropKind::Global;
  const double rlo = global ? cfg.global_ratio_min : cfg.local_ratio_min;
  const double rhi = global ? cfg.global_ratio_max : cfg.local_ratio_max;

  CropGeometry g;
  g.kind = kind;
  g.out_size = global ? cfg.global_size : cfg.local_size;

  bool placed = false;
  for (int attempt = 0; attempt < 10 && !placed; ++attempt) {
    const double ratio = rng.uniform(rlo, rhi);
    const double area = ratio * iw * ih;  // pixel-space target, w/h = aspect
    // Aspect is drawn from the subrange that fits inside the image, keeping
    // the accepted area ratios exactly uniform.
    const double a_lo = std::max(cfg.aspect_min, area / (static_cast<double>(ih) * ih));
    const double a_hi = std::min(cfg.aspect_max, (static_cast<double>(iw) * iw) / area);
    if (a_lo > a_hi) continue;
    const double aspect = rng.uniform(a_lo, a_hi);
    const double wn = std::sqrt(area * aspect) / iw;
    const double hn = std::sqrt(area / aspect) / ih;
    if (wn > 1.0 || hn > 1.0) continue;
    g.x0 = rng.uniform(0.0, 1.0 - wn);
    g.y0 = rng.uniform(0.0, 1.0 - hn);
    g.x1 = g.x0 + wn;
    g.y1 = g.y0 + hn;
    placed = true;
  }
  if (!placed) {
    // Centered fallback of maximal valid area at aspect 1.
    const double side = std::sqrt(rhi * iw * ih);
    const double wn = std::min(side / iw, 1.0);
    const double hn = std::min(side / ih, 1.0);
    g.x0 = 0.5 - wn / 2;
    g.x1 = 0.5 + wn / 2;
    g.y0 = 0.5 - hn / 2;
    g.y1 = 0.5 + hn / 2;
  }
  g.hflip = rng.bernoulli(cfg.hflip_prob);

  // Resample the view: output cell centers mapped through the geometry.
  View<T> view;
  view.geometry = g;
  const int os = g.out_size;
  view.pixels = Array<T>::zeros({3, os, os});
  const std::size_t plane = static_cast<std::size_t>(os) * os;
  for (int y = 0; y < os; ++y)
    for (int x = 0; x < os; ++x) {
      const double u = (x + 0.5) / os;
      const double v = (y + 0.5) / os;
      double ox, oy;
      view_to_original(g, u, v, ox, oy);
      const double sx = ox * iw - 0.5;
      const double sy = oy * ih - 0.5;
      for (int c = 0; c < 3; ++c)
        view.pixels.data()[static_cast<std::size_t>(c) * plane + static_cast<std::size_t>(y) * os + x] =
            detail::sample_border_clamped(image, c, sy, sx);
    }

  // Photometric jitter. Geometry above is final.
  if (rng.bernoulli(cfg.color_jitter_prob))
    detail::apply_color_jitter(view.pixels, rng);
  if (rng.bernoulli(cfg.grayscale_prob)) detail::apply_grayscale(view.pixels);
  if (rng.bernoulli(cfg.blur_prob))
    detail::apply_gaussian_blur(view.pixels, rng.uniform(0.1, 2.0));
  return view;
}

/// 2 global + n_local local views. Per-view RNG streams are derived from the
/// per-image seed by the documented splitting rule seed_v = mix64(seed, v),
/// so views are independent of evaluation order.
template <typename T>
std::vector<View<T>> make_views(const Array<T>& image, const AugConfig& cfg,
                                std::uint64_t image_seed) {
  std::vector<View<T>> views;
  views.reserve(2 + static_cast<std::size_t>(cfg.n_local));
  for (int v = 0; v < 2 + cfg.n_local; ++v) {
    Rng rng(mix64(image_seed, static_cast<std::uint64_t>(v)));
    views.push_back(sample_crop(image, v < 2 ? CropKind::Global : CropKind::Local, cfg, rng));
  }
  return views;
}

}  // namespace srl
