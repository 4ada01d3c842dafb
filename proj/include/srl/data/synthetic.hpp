#pragma once

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "srl/core/error.hpp"
#include "srl/core/rng.hpp"
#include "srl/data/dataset.hpp"
#include "srl/data/image.hpp"

namespace srl {

/// Deterministic synthetic-shapes dataset: each image holds 1-3 anti-aliased
/// shapes on a textured background. The class label is the dominant (largest)
/// shape's kind; colors are drawn from one shared palette so color is a
/// nuisance factor rather than a class cue.
struct SyntheticShapesSpec {
  int image_size = 64;
  int classes = 8;  // shape kinds; at most 8
  int per_class_train = 256;
  int per_class_val = 64;
  std::uint64_t seed = 1234;
};

namespace detail {

inline void hsv_to_rgb(double h, double s, double v, double rgb[3]) {
  const double c = v * s;
  const double hp = h * 6.0;
  const double x = c * (1.0 - std::fabs(std::fmod(hp, 2.0) - 1.0));
  double r = 0, g = 0, b = 0;
  if (hp < 1) { r = c; g = x; }
  else if (hp < 2) { r = x; g = c; }
  else if (hp < 3) { g = c; b = x; }
  else if (hp < 4) { g = x; b = c; }
  else if (hp < 5) { r = x; b = c; }
  else { r = c; b = x; }
  const double m = v - c;
  rgb[0] = r + m;
  rgb[1] = g + m;
  rgb[2] = b + m;
}

// Signed distance of point p (relative to shape center, in pixels) to the
// boundary of each shape kind with nominal radius r. Negative inside.
inline double shape_sdf(int kind, double px, double py, double r) {
  const double ax = std::fabs(px), ay = std::fabs(py);
  switch (kind) {
    case 0:  // circle
      return std::sqrt(px * px + py * py) - r;
    case 1: {  // ring
      const double d = std::sqrt(px * px + py * py);
      return std::fabs(d - 0.75 * r) - 0.3 * r;
    }
    case 2:  // square
      return std::max(ax, ay) - r * 0.85;
    case 3:  // diamond
      return (ax + ay) - r * 1.15;
    case 4: {  // triangle (pointing up)
      const double k = 1.7320508075688772;  // sqrt(3)
      double x = ax, y = -py + r * 0.5;
      if (x + k * y > 0.0) {
        const double nx = (x - k * y) / 2.0;
        y = (-k * x - y) / 2.0;
        x = nx;
      }
      x -= std::min(std::max(x, -2.0 * r), 0.0);
      return -std::sqrt(x * x + y * y) * ((y < 0.0) ? -1.0 : 1.0) - 0.15 * r;
    }
    case 5: {  // cross (plus sign)
      const double arm = 0.35 * r;
      const double h = std::max(ax - r, ay - arm);
      const double v = std::max(ay - r, ax - arm);
      return std::min(h, v);
    }
    case 6: {  // hexagon (flat top)
      const double kx = -0.8660254037844386, ky = 0.5;
      double x = ax, y = ay;
      const double dot = kx * x + ky * y;
      if (dot > 0.0) {
        x -= 2.0 * dot * kx;
        y -= 2.0 * dot * ky;
      }
      x -= std::min(std::max(x, -0.5 * r), 0.5 * r);
      y -= 0.8660254037844386 * r;
      return std::sqrt(x * x + y * y) * ((y > 0.0) ? 1.0 : -1.0);
    }
    default: {  // four-point star (concave diamond)
      return ax + ay + 1.2 * std::min(ax, ay) - r * 1.1;
    }
  }
}

struct ShapeInstance {
  int kind = 0;
  double cx = 0, cy = 0, r = 0, rot = 0;
  double color[3] = {0, 0, 0};
};

inline void draw_shape(std::vector<double>& canvas, int s,
                       const ShapeInstance& sh) {
  const double aa = 1.0;  // anti-alias band, pixels
  const double cr = std::cos(-sh.rot), sr = std::sin(-sh.rot);
  const int x0 = std::max(0, static_cast<int>(sh.cx - sh.r * 1.8));
  const int x1 = std::min(s - 1, static_cast<int>(sh.cx + sh.r * 1.8));
  const int y0 = std::max(0, static_cast<int>(sh.cy - sh.r * 1.8));
  const int y1 = std::min(s - 1, static_cast<int>(sh.cy + sh.r * 1.8));
  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      const double dx = (x + 0.5) - sh.cx;
      const double dy = (y + 0.5) - sh.cy;
      const double px = dx * cr - dy * sr;
      const double py = dx * sr + dy * cr;
      const double d = shape_sdf(sh.kind, px, py, sh.r);
      double cov = 0.5 - d / aa;
      cov = cov < 0.0 ? 0.0 : (cov > 1.0 ? 1.0 : cov);
      if (cov <= 0.0) continue;
      double* px3 = canvas.data() + 3 * (static_cast<std::size_t>(y) * s + x);
      for (int c = 0; c < 3; ++c)
        px3[c] = px3[c] * (1.0 - cov) + sh.color[c] * cov;
    }
}

inline void fill_background(std::vector<double>& canvas, int s, Rng& rng) {
  double base[3];
  hsv_to_rgb(rng.uniform(), rng.uniform(0.1, 0.4), rng.uniform(0.2, 0.5), base);
  // Two octaves of bilinear lattice noise modulating luminance.
  const int g1 = 5, g2 = 11;
  std::vector<double> n1(static_cast<std::size_t>(g1) * g1), n2(static_cast<std::size_t>(g2) * g2);
  for (auto& v : n1) v = rng.uniform(-1.0, 1.0);
  for (auto& v : n2) v = rng.uniform(-1.0, 1.0);
  auto lattice = [](const std::vector<double>& n, int g, double u, double v) {
    const double x = u * (g - 1), y = v * (g - 1);
    const int xi = std::min(static_cast<int>(x), g - 2);
    const int yi = std::min(static_cast<int>(y), g - 2);
    const double fx = x - xi, fy = y - yi;
    const double a = n[static_cast<std::size_t>(yi) * g + xi];
    const double b = n[static_cast<std::size_t>(yi) * g + xi + 1];
    const double c = n[static_cast<std::size_t>(yi + 1) * g + xi];
    const double d = n[static_cast<std::size_t>(yi + 1) * g + xi + 1];
    return (a * (1 - fx) + b * fx) * (1 - fy) + (c * (1 - fx) + d * fx) * fy;
  };
  for (int y = 0; y < s; ++y)
    for (int x = 0; x < s; ++x) {
      const double u = (x + 0.5) / s, v = (y + 0.5) / s;
      const double tex = 0.06 * lattice(n1, g1, u, v) + 0.03 * lattice(n2, g2, u, v);
      double* p = canvas.data() + 3 * (static_cast<std::size_t>(y) * s + x);
      for (int c = 0; c < 3; ++c) {
        double val = base[c] + tex;
        p[c] = val < 0.0 ? 0.0 : (val > 1.0 ? 1.0 : val);
      }
    }
}

}  // namespace detail

/// Renders one image of the given class. Deterministic in (spec, seed).
inline ImageU8 render_synthetic_image(const SyntheticShapesSpec& spec,
                                      int class_id, std::uint64_t seed) {
  const int s = spec.image_size;
  Rng rng(seed);
  std::vector<double> canvas(3 * static_cast<std::size_t>(s) * s, 0.0);
  detail::fill_background(canvas, s, rng);

  const int n_distractors = static_cast<int>(rng.next_below(3));  // 0..2
  // Distractors first (strictly smaller), dominant shape drawn last on top.
  for (int i = 0; i < n_distractors; ++i) {
    detail::ShapeInstance sh;
    sh.kind = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(spec.classes - 1)));
    if (sh.kind >= class_id) ++sh.kind;  // any kind but the class kind
    sh.r = rng.uniform(0.07, 0.12) * s;
    sh.cx = rng.uniform(sh.r + 1.0, s - sh.r - 1.0);
    sh.cy = rng.uniform(sh.r + 1.0, s - sh.r - 1.0);
    sh.rot = rng.uniform(-0.26, 0.26);
    detail::hsv_to_rgb(rng.uniform(), rng.uniform(0.6, 0.95), rng.uniform(0.7, 1.0), sh.color);
    detail::draw_shape(canvas, s, sh);
  }
  detail::ShapeInstance main;
  main.kind = class_id;
  main.r = rng.uniform(0.16, 0.27) * s;
  main.cx = rng.uniform(main.r + 2.0, s - main.r - 2.0);
  main.cy = rng.uniform(main.r + 2.0, s - main.r - 2.0);
  main.rot = rng.uniform(-0.26, 0.26);
  detail::hsv_to_rgb(rng.uniform(), rng.uniform(0.6, 0.95), rng.uniform(0.7, 1.0), main.color);
  detail::draw_shape(canvas, s, main);

  ImageU8 img;
  img.width = s;
  img.height = s;
  img.rgb.resize(canvas.size());
  for (std::size_t i = 0; i < canvas.size(); ++i)
    img.rgb[i] = static_cast<unsigned char>(canvas[i] * 255.0 + 0.5);
  return img;
}

struct SyntheticDataset {
  DatasetManifest train;
  DatasetManifest val;
};

/// Generates the dataset under `root` (PNG files + train/val manifests).
/// Identical spec and seed produce bit-identical files.
inline SyntheticDataset generate_synthetic(const SyntheticShapesSpec& spec,
                                           const std::string& root) {
  if (spec.classes <= 0) throw ConfigError("synthetic dataset: zero classes");
  if (spec.classes > 8) throw ConfigError("synthetic dataset: at most 8 shape kinds");
  namespace fs = std::filesystem;
  fs::create_directories(fs::path(root) / "images");
  SyntheticDataset ds;
  ds.train.root = root;
  ds.val.root = root;
  char name[96];
  for (int split = 0; split < 2; ++split) {
    const int per_class = split == 0 ? spec.per_class_train : spec.per_class_val;
    DatasetManifest& man = split == 0 ? ds.train : ds.val;
    for (int cls = 0; cls < spec.classes; ++cls) {
      for (int i = 0; i < per_class; ++i) {
        const std::uint64_t img_seed =
            mix64(mix64(mix64(spec.seed, static_cast<std::uint64_t>(split)),
                        static_cast<std::uint64_t>(cls)),
                  static_cast<std::uint64_t>(i));
        std::snprintf(name, sizeof(name), "images/%s_c%d_%04d.png",
                      split == 0 ? "train" : "val", cls, i);
        const std::string rel(name);
        save_png((fs::path(root) / rel).string(),
                 render_synthetic_image(spec, cls, img_seed));
        man.entries.push_back({rel, cls});
      }
    }
  }
  write_manifest(ds.train, (fs::path(root) / "train.txt").string());
  write_manifest(ds.val, (fs::path(root) / "val.txt").string());
  return ds;
}

}  // namespace srl
