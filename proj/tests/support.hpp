#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "srl/core/array.hpp"
#include "srl/core/rng.hpp"

namespace srl::test {

inline Array<double> random_array(Shape shape, Rng& rng, double lo = -1.0,
                                  double hi = 1.0) {
  Array<double> a = Array<double>::zeros(std::move(shape));
  for (double& v : a.values()) v = rng.uniform(lo, hi);
  return a;
}

inline Array<double> random_row_stochastic(int m, int n, Rng& rng) {
  Array<double> a = Array<double>::zeros({m, n});
  for (int i = 0; i < m; ++i) {
    double sum = 0.0;
    for (int j = 0; j < n; ++j) {
      a.at(i, j) = rng.uniform(0.05, 1.0);
      sum += a.at(i, j);
    }
    for (int j = 0; j < n; ++j) a.at(i, j) /= sum;
  }
  return a;
}

struct GradCheckResult {
  double max_abs_err = 0.0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  bool ok = true;
};

/// Central finite differences against the tape's analytic gradients.
/// `forward` must rebuild the full computation from the current parameter
/// values and return the scalar loss (untaped calls are fine; the harness
/// provides the tape).
inline GradCheckResult check_gradients(
    std::vector<Array<double>*> params,
    const std::function<Array<double>()>& forward, double tol = 1e-4,
    double step = 1e-5) {
  GradCheckResult res;
  for (Array<double>* p : params) p->zero_grad();
  {
    Tape<double> tape;
    TapeScope<double> scope(tape);
    Array<double> loss = forward();
    tape.backward(loss);
  }
  std::vector<std::vector<double>> analytic;
  for (Array<double>* p : params) analytic.push_back(p->grad_values());

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Array<double>& p = *params[pi];
    for (std::size_t j = 0; j < p.numel(); ++j) {
      const double keep = p.data()[j];
      p.data()[j] = keep + step;
      const double up = forward().item();
      p.data()[j] = keep - step;
      const double dn = forward().item();
      p.data()[j] = keep;
      const double numeric = (up - dn) / (2.0 * step);
      const double a = analytic[pi][j];
      const double err = std::fabs(a - numeric);
      const double bound = tol * std::max(std::fabs(a), std::fabs(numeric)) + 1e-7;
      if (err > res.max_abs_err) {
        res.max_abs_err = err;
        res.worst_analytic = a;
        res.worst_numeric = numeric;
      }
      if (err > bound) res.ok = false;
    }
  }
  for (Array<double>* p : params) p->zero_grad();
  return res;
}

}  // namespace srl::test
