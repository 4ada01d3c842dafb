#pragma once

#include <string>

#include "srl/core/array.hpp"
#include "srl/core/ops.hpp"
#include "srl/core/rng.hpp"

namespace srl {

/// Projection head h_p / h_c: batch normalization over the token axis
/// followed by ReLU. No linear layer.
template <typename T>
struct ProjectionHead {
  Array<T> gamma, beta;
  BatchNormStats<T> stats;

  static ProjectionHead init(int channels) {
    ProjectionHead h;
    h.gamma = Array<T>::full({channels}, T(1));
    h.beta = Array<T>::zeros({channels});
    h.stats = BatchNormStats<T>(channels);
    return h;
  }

  Array<T> forward(const Array<T>& x, bool training) {
    return relu(batch_norm_channels(x, gamma, beta, stats, training));
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
  template <typename F>
  void visit_stats(const std::string& prefix, F&& f) {
    f(prefix + "running_mean", stats.running_mean);
    f(prefix + "running_var", stats.running_var);
  }
};

/// Prediction head g_p / g_c: pointwise (1x1) linear map across channels,
/// batch normalization, ReLU. Student branch only.
template <typename T>
struct PredictionHead {
  Array<T> w, b;  // C x C, C
  Array<T> gamma, beta;
  BatchNormStats<T> stats;

  static PredictionHead init(int channels, Rng& rng) {
    PredictionHead h;
    h.w = Array<T>::zeros({channels, channels});
    for (T& v : h.w.values()) v = static_cast<T>(rng.truncated_normal(0.02));
    h.b = Array<T>::zeros({channels});
    h.gamma = Array<T>::full({channels}, T(1));
    h.beta = Array<T>::zeros({channels});
    h.stats = BatchNormStats<T>(channels);
    return h;
  }

  Array<T> forward(const Array<T>& x, bool training) {
    Array<T> y = add_colvec(matmul(w, x), b);
    return relu(batch_norm_channels(y, gamma, beta, stats, training));
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "w", w);
    f(prefix + "b", b);
    f(prefix + "gamma", gamma);
    f(prefix + "beta", beta);
  }
  template <typename F>
  void visit_stats(const std::string& prefix, F&& f) {
    f(prefix + "running_mean", stats.running_mean);
    f(prefix + "running_var", stats.running_var);
  }
};

/// Image-level head: 3-layer MLP with GELU, L2-normalized bottleneck, linear
/// map to K prototypes. Operates on tokens as rows (V x C -> V x K).
template <typename T>
struct ImageHead {
  Array<T> w1, b1;  // C x hidden
  Array<T> w2, b2;  // hidden x hidden
  Array<T> w3, b3;  // hidden x bottleneck
  Array<T> proto;   // bottleneck x K

  static ImageHead init(int channels, int hidden, int bottleneck, int k,
                        Rng& rng) {
    ImageHead h;
    auto tn = [&rng](Shape s) {
      Array<T> a = Array<T>::zeros(std::move(s));
      for (T& v : a.values()) v = static_cast<T>(rng.truncated_normal(0.02));
      return a;
    };
    h.w1 = tn({channels, hidden});
    h.b1 = Array<T>::zeros({hidden});
    h.w2 = tn({hidden, hidden});
    h.b2 = Array<T>::zeros({hidden});
    h.w3 = tn({hidden, bottleneck});
    h.b3 = Array<T>::zeros({bottleneck});
    h.proto = tn({bottleneck, k});
    return h;
  }

  /// Returns the V x K prototype logits.
  Array<T> forward(const Array<T>& tokens) {
    Array<T> x = gelu(add_rowvec(matmul(tokens, w1), b1));
    x = gelu(add_rowvec(matmul(x, w2), b2));
    x = add_rowvec(matmul(x, w3), b3);
    x = l2_normalize_rows(x);
    return matmul(x, proto);
  }

  /// The L2-normalized bottleneck embedding (exposed for tests).
  Array<T> bottleneck(const Array<T>& tokens) {
    Array<T> x = gelu(add_rowvec(matmul(tokens, w1), b1));
    x = gelu(add_rowvec(matmul(x, w2), b2));
    x = add_rowvec(matmul(x, w3), b3);
    return l2_normalize_rows(x);
  }

  template <typename F>
  void visit(const std::string& prefix, F&& f) {
    f(prefix + "w1", w1);
    f(prefix + "b1", b1);
    f(prefix + "w2", w2);
    f(prefix + "b2", b2);
    f(prefix + "w3", w3);
    f(prefix + "b3", b3);
    f(prefix + "proto", proto);
  }
};

/// All heads of one branch. Pixel and channel heads are disjoint parameter
/// sets; the prediction heads are only ever run on the student branch.
template <typename T>
struct Heads {
  ProjectionHead<T> proj_pixel, proj_channel;
  PredictionHead<T> pred_pixel, pred_channel;
  ImageHead<T> image;

  static Heads init(int channels, int hidden, int bottleneck, int prototypes,
                    Rng& rng) {
    Heads h;
    h.proj_pixel = ProjectionHead<T>::init(channels);
    h.proj_channel = ProjectionHead<T>::init(channels);
    h.pred_pixel = PredictionHead<T>::init(channels, rng);
    h.pred_channel = PredictionHead<T>::init(channels, rng);
    h.image = ImageHead<T>::init(channels, hidden, bottleneck, prototypes, rng);
    return h;
  }

  template <typename F>
  void visit(F&& f) {
    proj_pixel.visit("proj_pixel.", f);
    proj_channel.visit("proj_channel.", f);
    pred_pixel.visit("pred_pixel.", f);
    pred_channel.visit("pred_channel.", f);
    image.visit("image.", f);
  }

  template <typename F>
  void visit_stats(F&& f) {
    proj_pixel.visit_stats("proj_pixel.", f);
    proj_channel.visit_stats("proj_channel.", f);
    pred_pixel.visit_stats("pred_pixel.", f);
    pred_channel.visit_stats("pred_channel.", f);
  }
};

}  // namespace srl
