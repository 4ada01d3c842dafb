#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "srl/config.hpp"
#include "srl/core/array.hpp"
#include "srl/core/error.hpp"
#include "srl/core/ops.hpp"
#include "srl/model/heads.hpp"
#include "srl/model/vit.hpp"
#include "srl/relation/relation.hpp"

namespace srl {

/// One (student view, teacher view) pairing. View indices enumerate the
/// per-image view list (0, 1 are the global crops); teacher views index the
/// global crops only.
struct PairSpec {
  int student_view = 0;
  int teacher_view = 0;
  bool local = false;
};

/// Both ordered global-global pairs, plus each local view matched against
/// each global view. Local-local pairs are skipped; teacher views are always
/// global.
inline std::vector<PairSpec> make_pair_schedule(int n_local) {
  std::vector<PairSpec> pairs;
  pairs.push_back({0, 1, false});
  pairs.push_back({1, 0, false});
  for (int l = 0; l < n_local; ++l)
    for (int g = 0; g < 2; ++g) pairs.push_back({2 + l, g, true});
  return pairs;
}

struct LossSettings {
  bool enable_image = true;
  bool enable_pixel = true;
  bool enable_channel = true;
  double weight_image = 1.0;
  double weight_pixel = 1.0;
  double weight_channel = 1.0;
  bool asymmetric = true;
  double t_p = 0.5;
  double t_c = 0.1;
  int relation_heads = 6;
  int grid_global = 7;
  int grid_local = 4;
  double min_overlap = 0.01;
  double student_temp = 0.1;
  double teacher_temp = 0.04;
  double center_momentum = 0.9;

  static LossSettings from(const TrainConfig& c) {
    LossSettings s;
    s.enable_image = c.losses_enable_image;
    s.enable_pixel = c.losses_enable_pixel;
    s.enable_channel = c.losses_enable_channel;
    s.weight_image = c.losses_weight_image;
    s.weight_pixel = c.losses_weight_pixel;
    s.weight_channel = c.losses_weight_channel;
    s.asymmetric = c.losses_asymmetric;
    s.t_p = c.relation_t_p;
    s.t_c = c.relation_t_c;
    s.relation_heads = c.relation_heads;
    s.grid_global = c.relation_grid_global;
    s.grid_local = c.relation_grid_local;
    s.min_overlap = c.relation_min_overlap;
    s.student_temp = c.losses_student_temp;
    s.teacher_temp = c.losses_teacher_temp;
    s.center_momentum = c.losses_center_momentum;
    return s;
  }
};

struct LossReport {
  double image = 0.0;
  double pixel = 0.0;
  double channel = 0.0;
  double total = 0.0;
  int pixel_pairs_present = 0;
  int pixel_pairs_total = 0;
};

template <typename T>
struct LossOutput {
  Array<T> total;  // scalar, tracked when any student path is
  LossReport report;
};

/// Per-image encodings for one training step.
template <typename T>
struct ImageForward {
  std::vector<EncodedView<T>> student;  // 2 global + n locals
  std::vector<EncodedView<T>> teacher;  // 2 global
};

namespace detail {

/// Concatenates per-view C x N features along the token axis, applies the
/// head(s), and slices the result back per view. Batch-norm statistics are
/// shared across the whole population of tokens.
template <typename T, typename HeadFn>
std::vector<std::vector<Array<T>>> apply_head_per_view(
    const std::vector<ImageForward<T>>& batch, bool teacher_branch,
    HeadFn&& head) {
  std::vector<Array<T>> cols;
  for (const auto& img : batch)
    for (const auto& v : (teacher_branch ? img.teacher : img.student))
      cols.push_back(v.feats);
  Array<T> joined = concat_cols(cols);
  Array<T> out = head(joined);
  std::vector<std::vector<Array<T>>> sliced;
  int off = 0;
  for (const auto& img : batch) {
    std::vector<Array<T>> per_view;
    for (const auto& v : (teacher_branch ? img.teacher : img.student)) {
      const int n = v.feats.cols();
      per_view.push_back(slice_cols(out, off, off + n));
      off += n;
    }
    sliced.push_back(std::move(per_view));
  }
  return sliced;
}

/// Teacher image-loss targets: logits centered by the EMA center, sharpened
/// at the teacher temperature. Plain value computation, no gradients.
template <typename T>
std::vector<double> teacher_image_probs(const Array<T>& logits,
                                        const std::vector<T>& center,
                                        double temp) {
  const int rows = logits.rows(), k = logits.cols();
  std::vector<double> probs(static_cast<std::size_t>(rows) * k);
  for (int r = 0; r < rows; ++r) {
    double mx = -1e300;
    for (int j = 0; j < k; ++j) {
      const double z = (static_cast<double>(logits.at(r, j)) -
                        static_cast<double>(center[static_cast<std::size_t>(j)])) / temp;
      probs[static_cast<std::size_t>(r) * k + j] = z;
      mx = std::max(mx, z);
    }
    double sum = 0.0;
    for (int j = 0; j < k; ++j) {
      double& p = probs[static_cast<std::size_t>(r) * k + j];
      p = std::exp(p - mx);
      sum += p;
    }
    for (int j = 0; j < k; ++j) probs[static_cast<std::size_t>(r) * k + j] /= sum;
  }
  return probs;
}

template <typename T>
Array<T> mean_of_scalars(std::vector<Array<T>>& terms) {
  Array<T> acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = add(acc, terms[i]);
  return scale(acc, static_cast<T>(1.0 / static_cast<double>(terms.size())));
}

}  // namespace detail

/// Asymmetric pixel-relation loss for one pair: the student path runs
/// predict(project(feats)) and relates at temperature 1; the teacher path
/// runs project(feats) and relates at t_p; cross-entropy of teacher vs
/// student distributions, averaged over relation heads and rows.
template <typename T>
Array<T> pixel_loss_pair(const Array<T>& student_feats,
                         const EncodedView<T>& student_view,
                         const Array<T>& teacher_feats,
                         const EncodedView<T>& teacher_view,
                         const OverlapRect& ov, const LossSettings& s) {
  Array<T> ss = sample_overlap(student_feats, student_view.grid_h,
                               student_view.grid_w, student_view.geometry, ov);
  Array<T> ts = sample_overlap(teacher_feats, teacher_view.grid_h,
                               teacher_view.grid_w, teacher_view.geometry, ov);
  auto rel_s = pixel_self_relation(ss, s.relation_heads, T(1));
  auto rel_t = pixel_self_relation(ts, s.relation_heads, static_cast<T>(s.t_p));
  Array<T> acc;
  for (int h = 0; h < s.relation_heads; ++h) {
    Array<T> ce = cross_entropy_rows(rel_t[static_cast<std::size_t>(h)].values,
                                     rel_s[static_cast<std::size_t>(h)].values);
    acc = h == 0 ? ce : add(acc, ce);
  }
  return scale(acc, static_cast<T>(1.0 / s.relation_heads));
}

/// Channel-relation loss for one pair, on full views (channel relations need
/// no spatial alignment).
template <typename T>
Array<T> channel_loss_pair(const Array<T>& student_feats,
                           const Array<T>& teacher_feats,
                           const LossSettings& s) {
  auto rel_s = channel_self_relation(student_feats, T(1));
  auto rel_t = channel_self_relation(teacher_feats, static_cast<T>(s.t_c));
  return cross_entropy_rows(rel_t.values, rel_s.values);
}

/// Combines L_I, L_p and L_c over the batch on a shared pair schedule.
/// `center` is the image-loss EMA center; it is updated from the teacher
/// batch mean when `update_center` is set.
template <typename T>
LossOutput<T> compute_total_loss(const std::vector<ImageForward<T>>& batch,
                                 Heads<T>& student_heads,
                                 Heads<T>& teacher_heads,
                                 std::vector<T>& center,
                                 const LossSettings& s, bool training = true,
                                 bool update_center = true) {
  if (!s.enable_image && !s.enable_pixel && !s.enable_channel)
    throw ConfigError("total_loss: all loss components are disabled");
  if (batch.empty()) throw ValueError("total_loss: empty batch");
  const int n_local = static_cast<int>(batch[0].student.size()) - 2;
  const std::vector<PairSpec> pairs = make_pair_schedule(n_local);

  LossOutput<T> out;
  std::vector<Array<T>> components;

  if (s.enable_image) {
    std::vector<Array<T>> s_cls, t_cls;
    for (const auto& img : batch) {
      for (const auto& v : img.student) s_cls.push_back(v.cls);
      for (const auto& v : img.teacher) t_cls.push_back(v.cls);
    }
    Array<T> s_logits = student_heads.image.forward(concat_rows(s_cls));
    Array<T> t_logits = teacher_heads.image.forward(concat_rows(t_cls));
    const int k = t_logits.cols();
    std::vector<double> probs =
        detail::teacher_image_probs(t_logits, center, s.teacher_temp);
    const int views_per_img = static_cast<int>(batch[0].student.size());
    std::vector<Array<T>> terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (const PairSpec& pr : pairs) {
        const int srow = static_cast<int>(i) * views_per_img + pr.student_view;
        const int trow = static_cast<int>(i) * 2 + pr.teacher_view;
        Array<T> p = Array<T>::zeros({1, k});
        for (int j = 0; j < k; ++j)
          p.data()[j] = static_cast<T>(probs[static_cast<std::size_t>(trow) * k + j]);
        Array<T> q = softmax_rows(slice_rows(s_logits, srow, srow + 1),
                                  static_cast<T>(s.student_temp));
        terms.push_back(cross_entropy_rows(p, q));
      }
    }
    Array<T> li = detail::mean_of_scalars(terms);
    out.report.image = static_cast<double>(li.item());
    if (update_center) {
      // center <- m * center + (1 - m) * batch mean of teacher logits
      const int rows = t_logits.rows();
      for (int j = 0; j < k; ++j) {
        double mean = 0.0;
        for (int r = 0; r < rows; ++r) mean += static_cast<double>(t_logits.at(r, j));
        mean /= rows;
        center[static_cast<std::size_t>(j)] = static_cast<T>(
            s.center_momentum * static_cast<double>(center[static_cast<std::size_t>(j)]) +
            (1.0 - s.center_momentum) * mean);
      }
    }
    components.push_back(s.weight_image == 1.0
                             ? li
                             : scale(li, static_cast<T>(s.weight_image)));
  }

  if (s.enable_pixel) {
    auto s_feats = detail::apply_head_per_view(batch, false, [&](const Array<T>& x) {
      Array<T> y = student_heads.proj_pixel.forward(x, training);
      return s.asymmetric ? student_heads.pred_pixel.forward(y, training) : y;
    });
    auto t_feats = detail::apply_head_per_view(batch, true, [&](const Array<T>& x) {
      return teacher_heads.proj_pixel.forward(x, false);
    });
    std::vector<Array<T>> terms;
    for (std::size_t i = 0; i < batch.size(); ++i) {
      for (const PairSpec& pr : pairs) {
        ++out.report.pixel_pairs_total;
        const EncodedView<T>& sv = batch[i].student[static_cast<std::size_t>(pr.student_view)];
        const EncodedView<T>& tv = batch[i].teacher[static_cast<std::size_t>(pr.teacher_view)];
        const int grid = pr.local ? s.grid_local : s.grid_global;
        auto ov = overlap_rect(sv.geometry, tv.geometry, grid, grid, s.min_overlap);
        if (!ov) continue;  // contributes exactly zero, not an error
        ++out.report.pixel_pairs_present;
        terms.push_back(pixel_loss_pair(s_feats[i][static_cast<std::size_t>(pr.student_view)], sv,
                                        t_feats[i][static_cast<std::size_t>(pr.teacher_view)], tv,
                                        *ov, s));
      }
    }
    Array<T> lp = terms.empty() ? Array<T>::scalar(T(0))
                                : detail::mean_of_scalars(terms);
    out.report.pixel = static_cast<double>(lp.item());
    components.push_back(s.weight_pixel == 1.0
                             ? lp
                             : scale(lp, static_cast<T>(s.weight_pixel)));
  }

  if (s.enable_channel) {
    auto s_feats = detail::apply_head_per_view(batch, false, [&](const Array<T>& x) {
      Array<T> y = student_heads.proj_channel.forward(x, training);
      return s.asymmetric ? student_heads.pred_channel.forward(y, training) : y;
    });
    auto t_feats = detail::apply_head_per_view(batch, true, [&](const Array<T>& x) {
      return teacher_heads.proj_channel.forward(x, false);
    });
    std::vector<Array<T>> terms;
    for (std::size_t i = 0; i < batch.size(); ++i)
      for (const PairSpec& pr : pairs)
        terms.push_back(channel_loss_pair(
            s_feats[i][static_cast<std::size_t>(pr.student_view)],
            t_feats[i][static_cast<std::size_t>(pr.teacher_view)], s));
    Array<T> lc = detail::mean_of_scalars(terms);
    out.report.channel = static_cast<double>(lc.item());
    components.push_back(s.weight_channel == 1.0
                             ? lc
                             : scale(lc, static_cast<T>(s.weight_channel)));
  }

  out.total = components[0];
  for (std::size_t i = 1; i < components.size(); ++i)
    out.total = add(out.total, components[i]);
  out.report.total = static_cast<double>(out.total.item());
  return out;
}

}  // namespace srl
