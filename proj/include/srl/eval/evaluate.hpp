#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "srl/config.hpp"
#include "srl/core/optim.hpp"
#include "srl/core/rng.hpp"
#include "srl/data/augment.hpp"
#include "srl/data/image.hpp"
#include "srl/model/model.hpp"
#include "srl/relation/relation.hpp"
#include "srl/train/trainer.hpp"

namespace srl {

/// FNV-1a over all parameter bytes; evaluation paths must leave it unchanged.
template <typename T>
std::uint64_t parameters_digest(Model<T>& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  model.visit([&h](const std::string&, Array<T>& a) {
    const unsigned char* bytes =
        reinterpret_cast<const unsigned char*>(a.data());
    for (std::size_t i = 0; i < a.numel() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 0x100000001b3ULL;
    }
  });
  return h;
}

struct RelationDiffReport {
  double pixel_diff = 0.0;
  double channel_diff = 0.0;
  int pairs = 0;
  std::uint64_t config_digest = 0;
};

namespace detail {

template <typename T>
double mean_abs_diff(const Array<T>& a, const Array<T>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i)
    acc += std::fabs(static_cast<double>(a.data()[i]) -
                     static_cast<double>(b.data()[i]));
  return acc / static_cast<double>(a.numel());
}

}  // namespace detail

/// Cross-view self-relation difference: for each sampled pair of global
/// views, the mean absolute elementwise difference of the two views' pixel
/// self-relation matrices on the overlap lattice (temperature 1, averaged
/// over relation heads) and of the full-view channel self-relation matrices.
/// Relations are computed on raw backbone features. Pairs without overlap
/// are resampled.
template <typename T>
RelationDiffReport relation_difference(Model<T>& model, const TrainConfig& cfg,
                                       const std::vector<Array<T>>& images,
                                       int n_pairs, std::uint64_t seed) {
  if (images.empty())
    throw ValueError("relation_difference: empty dataset");
  NoGradScope<T> nograd;
  AugConfig aug = aug_config_from(cfg);
  if (!cfg.eval_photometric)
    aug.color_jitter_prob = aug.grayscale_prob = aug.blur_prob = 0.0;
  const int grid = cfg.relation_grid_global;
  RelationDiffReport rep;
  rep.config_digest = config_digest(cfg);
  for (int p = 0; p < n_pairs; ++p) {
    const Array<T>& image = images[static_cast<std::size_t>(p) % images.size()];
    for (int attempt = 0;; ++attempt) {
      if (attempt >= 64)
        throw ValueError("relation_difference: could not sample overlapping views");
      const std::uint64_t ps =
          mix64(mix64(seed, static_cast<std::uint64_t>(p)),
                static_cast<std::uint64_t>(attempt));
      Rng ra(mix64(ps, 0));
      Rng rb(mix64(ps, 1));
      View<T> va = sample_crop(image, CropKind::Global, aug, ra);
      View<T> vb = sample_crop(image, CropKind::Global, aug, rb);
      auto ov = overlap_rect(va.geometry, vb.geometry, grid, grid,
                             cfg.relation_min_overlap);
      if (!ov) continue;
      va.pixels = normalize_pixels(va.pixels);
      vb.pixels = normalize_pixels(vb.pixels);
      auto enc = encode_batch(model.vit, {va, vb});
      Array<T> sa = sample_overlap(enc[0], *ov);
      Array<T> sb = sample_overlap(enc[1], *ov);
      auto rel_a = pixel_self_relation(sa, cfg.relation_heads, T(1));
      auto rel_b = pixel_self_relation(sb, cfg.relation_heads, T(1));
      double pd = 0.0;
      for (int h = 0; h < cfg.relation_heads; ++h)
        pd += detail::mean_abs_diff(rel_a[static_cast<std::size_t>(h)].values,
                                    rel_b[static_cast<std::size_t>(h)].values);
      rep.pixel_diff += pd / cfg.relation_heads;
      rep.channel_diff += detail::mean_abs_diff(
          channel_self_relation(enc[0].feats, T(1)).values,
          channel_self_relation(enc[1].feats, T(1)).values);
      ++rep.pairs;
      break;
    }
  }
  rep.pixel_diff /= std::max(rep.pairs, 1);
  rep.channel_diff /= std::max(rep.pairs, 1);
  return rep;
}

/// Frozen image-level token features for a whole dataset (identity views).
template <typename T>
std::vector<std::vector<T>> extract_cls_features(Model<T>& model,
                                                 const TrainConfig& cfg,
                                                 const std::vector<Array<T>>& images) {
  NoGradScope<T> nograd;
  std::vector<std::vector<T>> feats;
  feats.reserve(images.size());
  const int chunk = 32;
  for (std::size_t base = 0; base < images.size(); base += chunk) {
    std::vector<View<T>> views;
    for (std::size_t i = base; i < std::min(images.size(), base + chunk); ++i) {
      View<T> v = make_identity_view(images[i], cfg.model_image_size);
      v.pixels = normalize_pixels(v.pixels);
      views.push_back(std::move(v));
    }
    auto enc = encode_batch(model.vit, views);
    for (auto& e : enc) feats.push_back(e.cls.values());
  }
  return feats;
}

/// Top-1 accuracy of a single linear layer trained on frozen cls-token
/// features with the engine's own AdamW (cosine LR, no augmentation).
template <typename T>
double linear_probe(Model<T>& model, const TrainConfig& cfg,
                    const std::vector<Array<T>>& train_images,
                    const std::vector<int>& train_labels,
                    const std::vector<Array<T>>& val_images,
                    const std::vector<int>& val_labels) {
  if (train_images.size() != train_labels.size() ||
      val_images.size() != val_labels.size())
    throw ValueError("linear_probe: image/label count mismatch");
  if (train_images.empty() || val_images.empty())
    throw ValueError("linear_probe: empty split");
  const int classes = 1 + *std::max_element(train_labels.begin(), train_labels.end());
  auto tr_feats = extract_cls_features(model, cfg, train_images);
  auto va_feats = extract_cls_features(model, cfg, val_images);
  const int dim = static_cast<int>(tr_feats[0].size());
  const int n = static_cast<int>(tr_feats.size());

  Array<T> w = Array<T>::zeros({dim, classes});
  Array<T> b = Array<T>::zeros({classes});
  w.set_param();
  b.set_param();
  std::vector<Array<T>*> params{&w, &b};
  AdamWConfig oc;
  oc.weight_decay = 0.0;
  AdamW<T> opt(params, oc);

  const int bs = std::min(cfg.probe_batch_size, n);
  const int steps_per_epoch = n / bs;
  const std::int64_t total = static_cast<std::int64_t>(cfg.probe_epochs) * steps_per_epoch;
  std::int64_t step = 0;
  for (int epoch = 0; epoch < cfg.probe_epochs; ++epoch) {
    std::vector<int> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), 0);
    Rng rng(mix64(mix64(static_cast<std::uint64_t>(cfg.probe_seed), 0x9e0b),
                  static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i)
      std::swap(order[i - 1], order[rng.next_below(i)]);
    for (int sb = 0; sb < steps_per_epoch; ++sb) {
      Array<T> x = Array<T>::zeros({bs, dim});
      Array<T> onehot = Array<T>::zeros({bs, classes});
      for (int i = 0; i < bs; ++i) {
        const int idx = order[static_cast<std::size_t>(sb * bs + i)];
        std::copy(tr_feats[static_cast<std::size_t>(idx)].begin(),
                  tr_feats[static_cast<std::size_t>(idx)].end(),
                  x.data() + static_cast<std::size_t>(i) * dim);
        onehot.at(i, train_labels[static_cast<std::size_t>(idx)]) = T(1);
      }
      Tape<T> tape;
      {
        TapeScope<T> scope(tape);
        Array<T> logits = add_rowvec(matmul(x, w), b);
        Array<T> probs = softmax_rows(logits, T(1));
        Array<T> loss = cross_entropy_rows(onehot, probs);
        tape.backward(loss);
      }
      const double lr = cfg.probe_lr * 0.5 *
                        (1.0 + std::cos(M_PI * static_cast<double>(step) /
                                        static_cast<double>(total)));
      opt.step(lr);
      w.zero_grad();
      b.zero_grad();
      ++step;
    }
  }

  int correct = 0;
  for (std::size_t i = 0; i < va_feats.size(); ++i) {
    int best = 0;
    double best_v = -1e300;
    for (int k = 0; k < classes; ++k) {
      double v = static_cast<double>(b.at(k));
      for (int d = 0; d < dim; ++d)
        v += static_cast<double>(va_feats[i][static_cast<std::size_t>(d)]) *
             static_cast<double>(w.at(d, k));
      if (v > best_v) {
        best_v = v;
        best = k;
      }
    }
    if (best == val_labels[i]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(va_feats.size());
}

// ---------------------------------------------------------------------------
// Relation heatmaps
// ---------------------------------------------------------------------------

/// Fixed colormap: piecewise-linear heat ramp (v in [0,1] -> RGB). The
/// mapping is exact and invertible at the 8-bit grid used by the renderer.
inline void colormap_heat(double v, unsigned char rgb[3]) {
  v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  auto clamp01 = [](double x) { return x < 0.0 ? 0.0 : (x > 1.0 ? 1.0 : x); };
  const double r = clamp01(1.5 - std::fabs(4.0 * v - 3.0));
  const double g = clamp01(1.5 - std::fabs(4.0 * v - 2.0));
  const double b = clamp01(1.5 - std::fabs(4.0 * v - 1.0));
  rgb[0] = static_cast<unsigned char>(r * 255.0 + 0.5);
  rgb[1] = static_cast<unsigned char>(g * 255.0 + 0.5);
  rgb[2] = static_cast<unsigned char>(b * 255.0 + 0.5);
}

inline constexpr int kPixelHeatmapCell = 16;
inline constexpr int kChannelHeatmapCell = 4;

/// Renders a matrix of values in [0, 1] as a cell grid through the fixed
/// colormap.
template <typename T>
ImageU8 render_value_grid(const Array<T>& values, int rows, int cols,
                          int cell) {
  ImageU8 img;
  img.width = cols * cell;
  img.height = rows * cell;
  img.rgb.resize(3 * static_cast<std::size_t>(img.width) * img.height);
  for (int r = 0; r < rows; ++r)
    for (int c = 0; c < cols; ++c) {
      unsigned char rgb[3];
      colormap_heat(static_cast<double>(values.data()[static_cast<std::size_t>(r) * cols + c]), rgb);
      for (int y = r * cell; y < (r + 1) * cell; ++y)
        for (int x = c * cell; x < (c + 1) * cell; ++x) {
          unsigned char* px = img.pixel(y, x);
          px[0] = rgb[0];
          px[1] = rgb[1];
          px[2] = rgb[2];
        }
    }
  return img;
}

struct HeatmapQuery {
  RelationKind kind = RelationKind::Pixel;
  int pixel_index = 0;  // used by the pixel kind
};

/// Renders the selected self-relation of an image: for a pixel query, row
/// `pixel_index` of the head-averaged pixel self-relation over the feature
/// grid; for the channel kind, the full C x C channel self-relation.
template <typename T>
ImageU8 render_relation_heatmap(Model<T>& model, const TrainConfig& cfg,
                                const Array<T>& image, const HeatmapQuery& q) {
  NoGradScope<T> nograd;
  View<T> v = make_identity_view(image, cfg.model_image_size);
  v.pixels = normalize_pixels(v.pixels);
  EncodedView<T> enc = encode(model.vit, v);
  const int n = enc.grid_h * enc.grid_w;
  if (q.kind == RelationKind::Pixel) {
    if (q.pixel_index < 0 || q.pixel_index >= n)
      throw ValueError("heatmap: pixel query " + std::to_string(q.pixel_index) +
                       " out of range for " + std::to_string(n) + " cells");
    auto rel = pixel_self_relation(enc.feats, cfg.relation_heads, T(1));
    Array<T> row = Array<T>::zeros({1, n});
    for (const auto& r : rel)
      for (int j = 0; j < n; ++j)
        row.data()[j] += r.values.at(q.pixel_index, j) / static_cast<T>(cfg.relation_heads);
    return render_value_grid(row, enc.grid_h, enc.grid_w, kPixelHeatmapCell);
  }
  auto rel = channel_self_relation(enc.feats, T(1));
  const int c = rel.values.rows();
  return render_value_grid(rel.values, c, c, kChannelHeatmapCell);
}

/// Writes the heatmap as a binary PPM (8-bit per channel portable pixmap).
template <typename T>
void export_relation_heatmap(Model<T>& model, const TrainConfig& cfg,
                             const Array<T>& image, const HeatmapQuery& q,
                             const std::string& path) {
  save_ppm(path, render_relation_heatmap(model, cfg, image, q));
}

}  // namespace srl
