#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"

namespace srl {

struct Point2 {
  double x = 0.0;
  double y = 0.0;
};

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <typename T>
inline void record(Array<T>& out, bool any_tracked, std::function<void()> bw) {
  Tape<T>* tape = current_tape<T>();
  if (tape && any_tracked) {
    out.node()->tracked = true;
    out.node()->g.assign(out.numel(), T(0));
    tape->push(std::move(bw));
  }
}

template <typename T>
inline void require_rank2(const Array<T>& x, const char* op) {
  if (x.rank() != 2)
    throw ShapeError(std::string(op) + ": expected rank-2 array, got " +
                     shape_str(x.shape()));
}

template <typename T>
inline void require_same_shape(const Array<T>& a, const Array<T>& b,
                               const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " +
                     shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

template <typename T>
inline bool all_finite(const Array<T>& x) {
  for (const T& v : x.values())
    if (!std::isfinite(static_cast<double>(v))) return false;
  return true;
}

// ---------------------------------------------------------------------------
// Structure ops
// ---------------------------------------------------------------------------

template <typename T>
Array<T> reshape(const Array<T>& x, Shape shape) {
  if (shape_numel(shape) != x.numel())
    throw ShapeError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                     shape_str(shape));
  Array<T> out = Array<T>::from(std::move(shape), x.values());
  detail::record<T>(out, x.tracked(), [x, out]() mutable {
    const T* go = out.grad();
    T* gx = x.grad();
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go[i];
  });
  return out;
}

template <typename T>
Array<T> transpose2d(const Array<T>& x) {
  detail::require_rank2(x, "transpose2d");
  const int m = x.rows(), n = x.cols();
  Array<T> out = Array<T>::zeros({n, m});
  const T* xv = x.data();
  T* ov = out.data();
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) ov[static_cast<std::size_t>(j) * m + i] = xv[static_cast<std::size_t>(i) * n + j];
  detail::record<T>(out, x.tracked(), [x, out, m, n]() mutable {
    const T* go = out.grad();
    T* gx = x.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < n; ++j)
        gx[static_cast<std::size_t>(i) * n + j] += go[static_cast<std::size_t>(j) * m + i];
  });
  return out;
}

template <typename T>
Array<T> slice_rows(const Array<T>& x, int r0, int r1) {
  detail::require_rank2(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1)
    throw ShapeError("slice_rows: range [" + std::to_string(r0) + "," +
                     std::to_string(r1) + ") out of " +
                     std::to_string(x.rows()) + " rows");
  const int n = x.cols();
  Array<T> out = Array<T>::zeros({r1 - r0, n});
  std::copy(x.data() + static_cast<std::size_t>(r0) * n,
            x.data() + static_cast<std::size_t>(r1) * n, out.data());
  detail::record<T>(out, x.tracked(), [x, out, r0, n]() mutable {
    const T* go = out.grad();
    T* gx = x.grad() + static_cast<std::size_t>(r0) * n;
    for (std::size_t i = 0; i < out.numel(); ++i) gx[i] += go[i];
  });
  return out;
}

template <typename T>
Array<T> slice_cols(const Array<T>& x, int c0, int c1) {
  detail::require_rank2(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1)
    throw ShapeError("slice_cols: range [" + std::to_string(c0) + "," +
                     std::to_string(c1) + ") out of " +
                     std::to_string(x.cols()) + " cols");
  const int m = x.rows(), n = x.cols(), w = c1 - c0;
  Array<T> out = Array<T>::zeros({m, w});
  for (int i = 0; i < m; ++i)
    std::copy(x.data() + static_cast<std::size_t>(i) * n + c0,
              x.data() + static_cast<std::size_t>(i) * n + c1,
              out.data() + static_cast<std::size_t>(i) * w);
  detail::record<T>(out, x.tracked(), [x, out, m, n, c0, w]() mutable {
    const T* go = out.grad();
    T* gx = x.grad();
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < w; ++j)
        gx[static_cast<std::size_t>(i) * n + c0 + j] += go[static_cast<std::size_t>(i) * w + j];
  });
  return out;
}

template <typename T>
Array<T> concat_rows(const std::vector<Array<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_rows: empty input list");
  const int n = xs[0].cols();
  int m = 0;
  bool tracked = false;
  for (const auto& x : xs) {
    detail::require_rank2(x, "concat_rows");
    if (x.cols() != n)
      throw ShapeError("concat_rows: column mismatch " +
                       shape_str(x.shape()));
    m += x.rows();
    tracked = tracked || x.tracked();
  }
  Array<T> out = Array<T>::zeros({m, n});
  std::size_t off = 0;
  for (const auto& x : xs) {
    std::copy(x.data(), x.data() + x.numel(), out.data() + off);
    off += x.numel();
  }
  detail::record<T>(out, tracked, [xs, out]() mutable {
    const T* go = out.grad();
    std::size_t off = 0;
    for (auto& x : xs) {
      if (x.tracked()) {
        T* gx = x.grad();
        for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go[off + i];
      }
      off += x.numel();
    }
  });
  return out;
}

template <typename T>
Array<T> concat_cols(const std::vector<Array<T>>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input list");
  const int m = xs[0].rows();
  int n = 0;
  bool tracked = false;
  for (const auto& x : xs) {
    detail::require_rank2(x, "concat_cols");
    if (x.rows() != m)
      throw ShapeError("concat_cols: row mismatch " + shape_str(x.shape()));
    n += x.cols();
    tracked = tracked || x.tracked();
  }
  Array<T> out = Array<T>::zeros({m, n});
  int coff = 0;
  for (const auto& x : xs) {
    const int w = x.cols();
    for (int i = 0; i < m; ++i)
      std::copy(x.data() + static_cast<std::size_t>(i) * w,
                x.data() + static_cast<std::size_t>(i) * w + w,
                out.data() + static_cast<std::size_t>(i) * n + coff);
    coff += w;
  }
  detail::record<T>(out, tracked, [xs, out, m, n]() mutable {
    const T* go = out.grad();
    int coff = 0;
    for (auto& x : xs) {
      const int w = x.cols();
      if (x.tracked()) {
        T* gx = x.grad();
        for (int i = 0; i < m; ++i)
          for (int j = 0; j < w; ++j)
            gx[static_cast<std::size_t>(i) * w + j] += go[static_cast<std::size_t>(i) * n + coff + j];
      }
      coff += w;
    }
  });
  return out;
}

/// Value copy that is disconnected from the tape (stop-gradient).
template <typename T>
Array<T> detach(const Array<T>& x) {
  return Array<T>::from(x.shape(), x.values());
}

// ---------------------------------------------------------------------------
// Elementwise / arithmetic ops
// ---------------------------------------------------------------------------

template <typename T>
Array<T> add(const Array<T>& a, const Array<T>& b) {
  detail::require_same_shape(a, b, "add");
  Array<T> out = Array<T>::zeros(a.shape());
  const T* av = a.data();
  const T* bv = b.data();
  T* ov = out.data();
  for (std::size_t i = 0; i < a.numel(); ++i) ov[i] = av[i] + bv[i];
  detail::record<T>(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    const T* go = out.grad();
    if (a.tracked()) {
      T* ga = a.grad();
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i];
    }
    if (b.tracked()) {
      T* gb = b.grad();
      for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += go[i];
    }
  });
  return out;
}

template <typename T>
Array<T> sub(const Array<T>& a, const Array<T>& b) {
  detail::require_same_shape(a, b, "sub");
  Array<T> out = Array<T>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] - b.data()[i];
  detail::record<T>(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    const T* go = out.grad();
    if (a.tracked()) {
      T* ga = a.grad();
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i];
    }
    if (b.tracked()) {
      T* gb = b.grad();
      for (std::size_t i = 0; i < b.numel(); ++i) gb[i] -= go[i];
    }
  });
  return out;
}

template <typename T>
Array<T> mul(const Array<T>& a, const Array<T>& b) {
  detail::require_same_shape(a, b, "mul");
  Array<T> out = Array<T>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i)
    out.data()[i] = a.data()[i] * b.data()[i];
  detail::record<T>(out, a.tracked() || b.tracked(), [a, b, out]() mutable {
    const T* go = out.grad();
    if (a.tracked()) {
      T* ga = a.grad();
      const T* bv = b.data();
      for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i] * bv[i];
    }
    if (b.tracked()) {
      T* gb = b.grad();
      const T* av = a.data();
      for (std::size_t i = 0; i < b.numel(); ++i) gb[i] += go[i] * av[i];
    }
  });
  return out;
}

template <typename T>
Array<T> scale(const Array<T>& a, T s) {
  Array<T> out = Array<T>::zeros(a.shape());
  for (std::size_t i = 0; i < a.numel(); ++i) out.data()[i] = a.data()[i] * s;
  detail::record<T>(out, a.tracked(), [a, out, s]() mutable {
    const T* go = out.grad();
    T* ga = a.grad();
    for (std::size_t i = 0; i < a.numel(); ++i) ga[i] += go[i] * s;
  });
  return out;
}

/// y[r, c] = x[r, c] + b[c]; bias broadcast over rows.
template <typename T>
Array<T> add_rowvec(const Array<T>& x, const Array<T>& b) {
  detail::require_rank2(x, "add_rowvec");
  if (static_cast<int>(b.numel()) != x.cols())
    throw ShapeError("add_rowvec: bias length " + std::to_string(b.numel()) +
                     " != cols " + std::to_string(x.cols()));
  const int m = x.rows(), n = x.cols();
  Array<T> out = Array<T>::zeros(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] =
          x.data()[static_cast<std::size_t>(i) * n + j] + b.data()[j];
  detail::record<T>(out, x.tracked() || b.tracked(), [x, b, out, m, n]() mutable {
    const T* go = out.grad();
    if (x.tracked()) {
      T* gx = x.grad();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go[i];
    }
    if (b.tracked()) {
      T* gb = b.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[j] += go[static_cast<std::size_t>(i) * n + j];
    }
  });
  return out;
}

/// y[r, c] = x[r, c] + b[r]; bias broadcast over columns.
template <typename T>
Array<T> add_colvec(const Array<T>& x, const Array<T>& b) {
  detail::require_rank2(x, "add_colvec");
  if (static_cast<int>(b.numel()) != x.rows())
    throw ShapeError("add_colvec: bias length " + std::to_string(b.numel()) +
                     " != rows " + std::to_string(x.rows()));
  const int m = x.rows(), n = x.cols();
  Array<T> out = Array<T>::zeros(x.shape());
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] =
          x.data()[static_cast<std::size_t>(i) * n + j] + b.data()[i];
  detail::record<T>(out, x.tracked() || b.tracked(), [x, b, out, m, n]() mutable {
    const T* go = out.grad();
    if (x.tracked()) {
      T* gx = x.grad();
      for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go[i];
    }
    if (b.tracked()) {
      T* gb = b.grad();
      for (int i = 0; i < m; ++i)
        for (int j = 0; j < n; ++j) gb[i] += go[static_cast<std::size_t>(i) * n + j];
    }
  });
  return out;
}

template <typename T>
Array<T> relu(const Array<T>& x) {
  Array<T> out = Array<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i)
    out.data()[i] = x.data()[i] > T(0) ? x.data()[i] : T(0);
  detail::record<T>(out, x.tracked(), [x, out]() mutable {
    const T* go = out.grad();
    const T* xv = x.data();
    T* gx = x.grad();
    for (std::size_t i = 0; i < x.numel(); ++i)
      if (xv[i] > T(0)) gx[i] += go[i];
  });
  return out;
}

/// Exact GELU: 0.5 * x * (1 + erf(x / sqrt(2))). Evaluated in T's precision.
template <typename T>
Array<T> gelu(const Array<T>& x) {
  const T inv_sqrt2 = static_cast<T>(0.70710678118654752440);
  const T inv_sqrt2pi = static_cast<T>(0.39894228040143267794);
  Array<T> out = Array<T>::zeros(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const T v = x.data()[i];
    out.data()[i] = T(0.5) * v * (T(1) + std::erf(v * inv_sqrt2));
  }
  detail::record<T>(out, x.tracked(), [x, out, inv_sqrt2, inv_sqrt2pi]() mutable {
    const T* go = out.grad();
    const T* xv = x.data();
    T* gx = x.grad();
    for (std::size_t i = 0; i < x.numel(); ++i) {
      const T v = xv[i];
      const T cdf = T(0.5) * (T(1) + std::erf(v * inv_sqrt2));
      const T pdf = inv_sqrt2pi * std::exp(T(-0.5) * v * v);
      gx[i] += go[i] * (cdf + v * pdf);
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Matrix multiply (Eigen-backed kernels)
// ---------------------------------------------------------------------------

template <typename T>
Array<T> matmul(const Array<T>& a, const Array<T>& b) {
  detail::require_rank2(a, "matmul");
  detail::require_rank2(b, "matmul");
  if (a.cols() != b.rows())
    throw ShapeError("matmul: inner extents disagree, " +
                     shape_str(a.shape()) + " x " + shape_str(b.shape()));
  const int m = a.rows(), k = a.cols(), n = b.cols();
  Array<T> out = Array<T>::zeros({m, n});
  {
    Eigen::Map<const detail::EMat<T>> A(a.data(), m, k);
    Eigen::Map<const detail::EMat<T>> B(b.data(), k, n);
    Eigen::Map<detail::EMat<T>> O(out.data(), m, n);
    O.noalias() = A * B;
  }
  detail::record<T>(out, a.tracked() || b.tracked(), [a, b, out, m, k, n]() mutable {
    Eigen::Map<const detail::EMat<T>> GO(out.grad(), m, n);
    if (a.tracked()) {
      Eigen::Map<const detail::EMat<T>> B(b.data(), k, n);
      Eigen::Map<detail::EMat<T>> GA(a.grad(), m, k);
      GA.noalias() += GO * B.transpose();
    }
    if (b.tracked()) {
      Eigen::Map<const detail::EMat<T>> A(a.data(), m, k);
      Eigen::Map<detail::EMat<T>> GB(b.grad(), k, n);
      GB.noalias() += A.transpose() * GO;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Normalizations
// ---------------------------------------------------------------------------

/// Layer normalization across each row, with per-column affine parameters.
template <typename T>
Array<T> layer_norm_rows(const Array<T>& x, const Array<T>& gamma,
                         const Array<T>& beta, T eps = T(1e-5)) {
  detail::require_rank2(x, "layer_norm_rows");
  const int m = x.rows(), n = x.cols();
  if (static_cast<int>(gamma.numel()) != n || static_cast<int>(beta.numel()) != n)
    throw ShapeError("layer_norm_rows: affine parameters must have length " +
                     std::to_string(n));
  Array<T> out = Array<T>::zeros(x.shape());
  std::vector<T> xhat(x.numel());
  std::vector<T> inv(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + static_cast<std::size_t>(i) * n;
    T mu = T(0);
    for (int j = 0; j < n; ++j) mu += row[j];
    mu /= T(n);
    T var = T(0);
    for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= T(n);
    const T iv = T(1) / std::sqrt(var + eps);
    inv[static_cast<std::size_t>(i)] = iv;
    for (int j = 0; j < n; ++j) {
      const T xh = (row[j] - mu) * iv;
      xhat[static_cast<std::size_t>(i) * n + j] = xh;
      out.data()[static_cast<std::size_t>(i) * n + j] = xh * gamma.data()[j] + beta.data()[j];
    }
  }
  detail::record<T>(
      out, x.tracked() || gamma.tracked() || beta.tracked(),
      [x, gamma, beta, out, m, n, xhat = std::move(xhat), inv = std::move(inv)]() mutable {
        const T* go = out.grad();
        for (int i = 0; i < m; ++i) {
          const T* goi = go + static_cast<std::size_t>(i) * n;
          const T* xh = xhat.data() + static_cast<std::size_t>(i) * n;
          if (x.tracked()) {
            // dxhat = go * gamma; dx = inv*(dxhat - mean(dxhat) - xhat*mean(dxhat*xhat))
            T s1 = T(0), s2 = T(0);
            for (int j = 0; j < n; ++j) {
              const T dxh = goi[j] * gamma.data()[j];
              s1 += dxh;
              s2 += dxh * xh[j];
            }
            s1 /= T(n);
            s2 /= T(n);
            T* gx = x.grad() + static_cast<std::size_t>(i) * n;
            const T iv = inv[static_cast<std::size_t>(i)];
            for (int j = 0; j < n; ++j) {
              const T dxh = goi[j] * gamma.data()[j];
              gx[j] += iv * (dxh - s1 - xh[j] * s2);
            }
          }
          if (gamma.tracked()) {
            T* gg = gamma.grad();
            for (int j = 0; j < n; ++j) gg[j] += goi[j] * xh[j];
          }
          if (beta.tracked()) {
            T* gb = beta.grad();
            for (int j = 0; j < n; ++j) gb[j] += goi[j];
          }
        }
      });
  return out;
}

/// Mutable per-channel running statistics for batch normalization.
template <typename T>
struct BatchNormStats {
  std::vector<T> running_mean;
  std::vector<T> running_var;

  explicit BatchNormStats(int channels = 0)
      : running_mean(static_cast<std::size_t>(channels), T(0)),
        running_var(static_cast<std::size_t>(channels), T(1)) {}
};

/// Batch normalization for channels-by-tokens arrays (C x N): statistics are
/// taken per channel across the token axis. In training mode batch statistics
/// normalize and update the running buffers; in eval mode the running buffers
/// are used. Biased variance throughout, momentum 0.1 convention:
/// running = (1 - momentum) * running + momentum * batch.
template <typename T>
Array<T> batch_norm_channels(const Array<T>& x, const Array<T>& gamma,
                             const Array<T>& beta, BatchNormStats<T>& stats,
                             bool training, T momentum = T(0.1),
                             T eps = T(1e-5)) {
  detail::require_rank2(x, "batch_norm_channels");
  const int c = x.rows(), n = x.cols();
  if (static_cast<int>(gamma.numel()) != c || static_cast<int>(beta.numel()) != c ||
      static_cast<int>(stats.running_mean.size()) != c)
    throw ShapeError("batch_norm_channels: parameter length mismatch for " +
                     std::to_string(c) + " channels");
  Array<T> out = Array<T>::zeros(x.shape());
  std::vector<T> mean(static_cast<std::size_t>(c));
  std::vector<T> inv(static_cast<std::size_t>(c));
  if (training) {
    for (int i = 0; i < c; ++i) {
      const T* row = x.data() + static_cast<std::size_t>(i) * n;
      T mu = T(0);
      for (int j = 0; j < n; ++j) mu += row[j];
      mu /= T(n);
      T var = T(0);
      for (int j = 0; j < n; ++j) var += (row[j] - mu) * (row[j] - mu);
      var /= T(n);
      mean[static_cast<std::size_t>(i)] = mu;
      inv[static_cast<std::size_t>(i)] = T(1) / std::sqrt(var + eps);
      stats.running_mean[static_cast<std::size_t>(i)] =
          (T(1) - momentum) * stats.running_mean[static_cast<std::size_t>(i)] + momentum * mu;
      stats.running_var[static_cast<std::size_t>(i)] =
          (T(1) - momentum) * stats.running_var[static_cast<std::size_t>(i)] + momentum * var;
    }
  } else {
    for (int i = 0; i < c; ++i) {
      mean[static_cast<std::size_t>(i)] = stats.running_mean[static_cast<std::size_t>(i)];
      inv[static_cast<std::size_t>(i)] =
          T(1) / std::sqrt(stats.running_var[static_cast<std::size_t>(i)] + eps);
    }
  }
  std::vector<T> xhat(x.numel());
  for (int i = 0; i < c; ++i) {
    const T* row = x.data() + static_cast<std::size_t>(i) * n;
    T* orow = out.data() + static_cast<std::size_t>(i) * n;
    const T mu = mean[static_cast<std::size_t>(i)];
    const T iv = inv[static_cast<std::size_t>(i)];
    for (int j = 0; j < n; ++j) {
      const T xh = (row[j] - mu) * iv;
      xhat[static_cast<std::size_t>(i) * n + j] = xh;
      orow[j] = xh * gamma.data()[i] + beta.data()[i];
    }
  }
  detail::record<T>(
      out, x.tracked() || gamma.tracked() || beta.tracked(),
      [x, gamma, beta, out, c, n, training, xhat = std::move(xhat),
       inv = std::move(inv)]() mutable {
        const T* go = out.grad();
        for (int i = 0; i < c; ++i) {
          const T* goi = go + static_cast<std::size_t>(i) * n;
          const T* xh = xhat.data() + static_cast<std::size_t>(i) * n;
          const T g = gamma.data()[i];
          const T iv = inv[static_cast<std::size_t>(i)];
          if (x.tracked()) {
            T* gx = x.grad() + static_cast<std::size_t>(i) * n;
            if (training) {
              T s1 = T(0), s2 = T(0);
              for (int j = 0; j < n; ++j) {
                s1 += goi[j];
                s2 += goi[j] * xh[j];
              }
              s1 = s1 * g / T(n);
              s2 = s2 * g / T(n);
              for (int j = 0; j < n; ++j)
                gx[j] += iv * (goi[j] * g - s1 - xh[j] * s2);
            } else {
              for (int j = 0; j < n; ++j) gx[j] += goi[j] * g * iv;
            }
          }
          if (gamma.tracked()) {
            T s = T(0);
            for (int j = 0; j < n; ++j) s += goi[j] * xh[j];
            gamma.grad()[i] += s;
          }
          if (beta.tracked()) {
            T s = T(0);
            for (int j = 0; j < n; ++j) s += goi[j];
            beta.grad()[i] += s;
          }
        }
      });
  return out;
}

// ---------------------------------------------------------------------------
// Softmax / cross-entropy / reductions
// ---------------------------------------------------------------------------

/// Row-wise softmax with temperature: softmax(x / t). Rows are shifted by
/// their maximum before exponentiation.
template <typename T>
Array<T> softmax_rows(const Array<T>& x, T temperature) {
  detail::require_rank2(x, "softmax_rows");
  if (!(temperature > T(0)))
    throw ValueError("softmax_rows: temperature must be positive");
  if (!all_finite(x)) throw ValueError("softmax_rows: non-finite input");
  const int m = x.rows(), n = x.cols();
  Array<T> out = Array<T>::zeros(x.shape());
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + static_cast<std::size_t>(i) * n;
    T* orow = out.data() + static_cast<std::size_t>(i) * n;
    T mx = row[0] / temperature;
    for (int j = 1; j < n; ++j) mx = std::max(mx, row[j] / temperature);
    T sum = T(0);
    for (int j = 0; j < n; ++j) {
      orow[j] = std::exp(row[j] / temperature - mx);
      sum += orow[j];
    }
    for (int j = 0; j < n; ++j) orow[j] /= sum;
  }
  detail::record<T>(out, x.tracked(), [x, out, m, n, temperature]() mutable {
    const T* go = out.grad();
    const T* p = out.data();
    T* gx = x.grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += go[off + j] * p[off + j];
      for (int j = 0; j < n; ++j)
        gx[off + j] += p[off + j] * (go[off + j] - dot) / temperature;
    }
  });
  return out;
}

/// Mean over rows of -sum_j p_ij * log(max(q_ij, 1e-12)). The target p is a
/// constant: gradient flows only into q (teacher stop-gradient contract).
template <typename T>
Array<T> cross_entropy_rows(const Array<T>& p, const Array<T>& q) {
  detail::require_rank2(p, "cross_entropy_rows");
  detail::require_same_shape(p, q, "cross_entropy_rows");
  constexpr double kEps = 1e-12;
  const int m = p.rows(), n = p.cols();
  double acc = 0.0;
  for (int i = 0; i < m; ++i) {
    const std::size_t off = static_cast<std::size_t>(i) * n;
    double row = 0.0;
    for (int j = 0; j < n; ++j) {
      const double qv = std::max(static_cast<double>(q.data()[off + j]), kEps);
      row -= static_cast<double>(p.data()[off + j]) * std::log(qv);
    }
    acc += row;
  }
  Array<T> out = Array<T>::scalar(static_cast<T>(acc / m));
  detail::record<T>(out, q.tracked(), [p, q, out, m, n]() mutable {
    const T go = out.grad()[0];
    T* gq = q.grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      for (int j = 0; j < n; ++j) {
        const double qv = static_cast<double>(q.data()[off + j]);
        if (qv > kEps)
          gq[off + j] -= go * p.data()[off + j] / static_cast<T>(qv) / T(m);
      }
    }
  });
  return out;
}

template <typename T>
Array<T> sum_all(const Array<T>& x) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  Array<T> out = Array<T>::scalar(acc);
  detail::record<T>(out, x.tracked(), [x, out]() mutable {
    const T go = out.grad()[0];
    T* gx = x.grad();
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go;
  });
  return out;
}

template <typename T>
Array<T> mean_all(const Array<T>& x) {
  T acc = T(0);
  for (std::size_t i = 0; i < x.numel(); ++i) acc += x.data()[i];
  const T inv = T(1) / static_cast<T>(x.numel());
  Array<T> out = Array<T>::scalar(acc * inv);
  detail::record<T>(out, x.tracked(), [x, out, inv]() mutable {
    const T go = out.grad()[0] * inv;
    T* gx = x.grad();
    for (std::size_t i = 0; i < x.numel(); ++i) gx[i] += go;
  });
  return out;
}

/// Rows rescaled to unit L2 norm (norm clamped below by eps).
template <typename T>
Array<T> l2_normalize_rows(const Array<T>& x, T eps = T(1e-12)) {
  detail::require_rank2(x, "l2_normalize_rows");
  const int m = x.rows(), n = x.cols();
  Array<T> out = Array<T>::zeros(x.shape());
  std::vector<T> denom(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const T* row = x.data() + static_cast<std::size_t>(i) * n;
    T sq = T(0);
    for (int j = 0; j < n; ++j) sq += row[j] * row[j];
    const T d = std::max(std::sqrt(sq), eps);
    denom[static_cast<std::size_t>(i)] = d;
    for (int j = 0; j < n; ++j)
      out.data()[static_cast<std::size_t>(i) * n + j] = row[j] / d;
  }
  detail::record<T>(out, x.tracked(), [x, out, m, n, denom = std::move(denom)]() mutable {
    const T* go = out.grad();
    const T* y = out.data();
    T* gx = x.grad();
    for (int i = 0; i < m; ++i) {
      const std::size_t off = static_cast<std::size_t>(i) * n;
      T dot = T(0);
      for (int j = 0; j < n; ++j) dot += go[off + j] * y[off + j];
      const T d = denom[static_cast<std::size_t>(i)];
      for (int j = 0; j < n; ++j)
        gx[off + j] += (go[off + j] - y[off + j] * dot) / d;
    }
  });
  return out;
}

// ---------------------------------------------------------------------------
// Bilinear grid sampling
// ---------------------------------------------------------------------------

/// Samples a C x H x W feature volume at the given points (pixel coordinates;
/// cell centers sit at integers 0..W-1 / 0..H-1). Coordinates are clamped to
/// the valid rectangle (border padding). Differentiable in the feature
/// values; the sample points are constants. Returns C x P.
template <typename T>
Array<T> grid_sample_bilinear(const Array<T>& x,
                              const std::vector<Point2>& points) {
  if (x.rank() != 3)
    throw ShapeError("grid_sample_bilinear: expected C x H x W, got " +
                     shape_str(x.shape()));
  const int c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const int np = static_cast<int>(points.size());
  Array<T> out = Array<T>::zeros({c, np});
  struct Tap {
    int i00, i01, i10, i11;
    T w00, w01, w10, w11;
  };
  std::vector<Tap> taps(static_cast<std::size_t>(np));
  for (int p = 0; p < np; ++p) {
    double xf = std::min(std::max(points[static_cast<std::size_t>(p)].x, 0.0),
                         static_cast<double>(w - 1));
    double yf = std::min(std::max(points[static_cast<std::size_t>(p)].y, 0.0),
                         static_cast<double>(h - 1));
    const int x0 = static_cast<int>(std::floor(xf));
    const int y0 = static_cast<int>(std::floor(yf));
    const int x1 = std::min(x0 + 1, w - 1);
    const int y1 = std::min(y0 + 1, h - 1);
    const double wx = xf - x0;
    const double wy = yf - y0;
    Tap& t = taps[static_cast<std::size_t>(p)];
    t.i00 = y0 * w + x0;
    t.i01 = y0 * w + x1;
    t.i10 = y1 * w + x0;
    t.i11 = y1 * w + x1;
    t.w00 = static_cast<T>((1.0 - wy) * (1.0 - wx));
    t.w01 = static_cast<T>((1.0 - wy) * wx);
    t.w10 = static_cast<T>(wy * (1.0 - wx));
    t.w11 = static_cast<T>(wy * wx);
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    const T* src = x.data() + static_cast<std::size_t>(ch) * plane;
    T* dst = out.data() + static_cast<std::size_t>(ch) * np;
    for (int p = 0; p < np; ++p) {
      const Tap& t = taps[static_cast<std::size_t>(p)];
      dst[p] = t.w00 * src[t.i00] + t.w01 * src[t.i01] + t.w10 * src[t.i10] +
               t.w11 * src[t.i11];
    }
  }
  detail::record<T>(out, x.tracked(), [x, out, c, np, plane, taps = std::move(taps)]() mutable {
    const T* go = out.grad();
    T* gx = x.grad();
    for (int ch = 0; ch < c; ++ch) {
      T* gsrc = gx + static_cast<std::size_t>(ch) * plane;
      const T* gdst = go + static_cast<std::size_t>(ch) * np;
      for (int p = 0; p < np; ++p) {
        const Tap& t = taps[static_cast<std::size_t>(p)];
        gsrc[t.i00] += t.w00 * gdst[p];
        gsrc[t.i01] += t.w01 * gdst[p];
        gsrc[t.i10] += t.w10 * gdst[p];
        gsrc[t.i11] += t.w11 * gdst[p];
      }
    }
  });
  return out;
}

}  // namespace srl
