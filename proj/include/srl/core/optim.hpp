#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/error.hpp"

namespace srl {

struct AdamWConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

/// Rescales gradients in place so their global L2 norm is at most max_norm.
/// Returns the pre-clip norm.
template <typename T>
double clip_global_norm(std::vector<Array<T>*>& params, double max_norm) {
  double sq = 0.0;
  for (Array<T>* p : params)
    for (const T& g : p->grad_values()) sq += static_cast<double>(g) * static_cast<double>(g);
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const T s = static_cast<T>(max_norm / norm);
    for (Array<T>* p : params)
      for (T& g : p->grad_values()) g *= s;
  }
  return norm;
}

/// Decoupled-weight-decay Adam with bias-corrected moments. Weight decay is
/// skipped for rank-1 parameters (biases, norm scales).
template <typename T>
class AdamW {
 public:
  AdamW(std::vector<Array<T>*> params, AdamWConfig cfg)
      : params_(std::move(params)), cfg_(cfg) {
    m_.resize(params_.size());
    v_.resize(params_.size());
    for (std::size_t i = 0; i < params_.size(); ++i) {
      m_[i].assign(params_[i]->numel(), T(0));
      v_[i].assign(params_[i]->numel(), T(0));
    }
  }

  void step(double lr) {
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      Array<T>& p = *params_[i];
      const bool decay = p.rank() > 1 && cfg_.weight_decay > 0.0;
      T* pv = p.data();
      const T* g = p.grad();
      T* m = m_[i].data();
      T* v = v_[i].data();
      for (std::size_t j = 0; j < p.numel(); ++j) {
        const double gj = static_cast<double>(g[j]);
        if (!std::isfinite(gj))
          throw TrainError("adamw_step: non-finite gradient in parameter " +
                           std::to_string(i));
        const double mj = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
        const double vj = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
        m[j] = static_cast<T>(mj);
        v[j] = static_cast<T>(vj);
        const double mhat = mj / bc1;
        const double vhat = vj / bc2;
        double upd = lr * mhat / (std::sqrt(vhat) + cfg_.eps);
        if (decay) upd += lr * cfg_.weight_decay * static_cast<double>(pv[j]);
        pv[j] -= static_cast<T>(upd);
      }
    }
  }

  void step() { step(cfg_.lr); }

  std::int64_t step_count() const { return t_; }
  void set_step_count(std::int64_t t) { t_ = t; }

  std::vector<T>& moment1(std::size_t i) { return m_[i]; }
  std::vector<T>& moment2(std::size_t i) { return v_[i]; }
  std::size_t size() const { return params_.size(); }

 private:
  std::vector<Array<T>*> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<T>> m_;
  std::vector<std::vector<T>> v_;
  std::int64_t t_ = 0;
};

}  // namespace srl
