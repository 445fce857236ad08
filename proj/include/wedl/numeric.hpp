#pragma once

#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <vector>

#include "wedl/matrix.hpp"
#include "wedl/param.hpp"

namespace wedl {

inline constexpr double kNormGuard = 1e-12;

// v / max(||v||, 1e-12). Inputs with ||v|| < 1e-6 are reported as degenerate
// through the optional flag; the guarded result is still returned.
inline std::vector<double> l2_normalize(std::span<const double> v, bool* degenerate = nullptr) {
  double ss = 0.0;
  for (double x : v) ss += x * x;
  const double norm = std::sqrt(ss);
  if (degenerate) *degenerate = norm < 1e-6;
  const double denom = std::max(norm, kNormGuard);
  std::vector<double> out(v.size());
  for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] / denom;
  return out;
}

struct RowNorm {
  Matrix unit;                // rows rescaled to unit length (guarded)
  std::vector<double> norms;  // pre-normalization row norms
};

inline RowNorm normalize_rows(const Matrix& x) {
  RowNorm rn;
  rn.unit = Matrix(x.rows, x.cols);
  rn.norms.resize(x.rows);
  for (std::size_t i = 0; i < x.rows; ++i) {
    double ss = 0.0;
    for (std::size_t j = 0; j < x.cols; ++j) ss += x(i, j) * x(i, j);
    const double norm = std::sqrt(ss);
    rn.norms[i] = norm;
    const double denom = std::max(norm, kNormGuard);
    for (std::size_t j = 0; j < x.cols; ++j) rn.unit(i, j) = x(i, j) / denom;
  }
  return rn;
}

// Exact gradient of normalize_rows: for a row with norm >= guard the Jacobian
// is (I - u u^T)/norm; below the guard the forward pass is a constant 1/guard
// scaling, so the gradient is upstream/guard.
inline Matrix normalize_rows_backward(const RowNorm& rn, const Matrix& upstream) {
  check_same_shape(rn.unit, upstream, "normalize_rows_backward");
  Matrix out(upstream.rows, upstream.cols);
  for (std::size_t i = 0; i < upstream.rows; ++i) {
    const double norm = rn.norms[i];
    if (norm < kNormGuard) {
      for (std::size_t j = 0; j < upstream.cols; ++j) out(i, j) = upstream(i, j) / kNormGuard;
      continue;
    }
    double gu = 0.0;
    for (std::size_t j = 0; j < upstream.cols; ++j) gu += upstream(i, j) * rn.unit(i, j);
    for (std::size_t j = 0; j < upstream.cols; ++j)
      out(i, j) = (upstream(i, j) - gu * rn.unit(i, j)) / norm;
  }
  return out;
}

// Central-difference gradient check. f() recomputes the scalar objective and
// accumulates fresh gradients into the params' grad buffers; the returned
// value is max over all coordinates of |analytic - numeric| / max(1, |numeric|).
inline double finite_diff_check(const std::function<double()>& f,
                                const std::vector<Param*>& params, double eps) {
  if (!(eps >= 1e-7 && eps <= 1e-3))
    throw std::invalid_argument("finite_diff_check: eps outside [1e-7, 1e-3]");
  for (Param* p : params) p->zero_grad();
  const double base = f();
  if (!std::isfinite(base)) throw std::runtime_error("finite_diff_check: non-finite objective");
  std::vector<Matrix> analytic;
  analytic.reserve(params.size());
  for (Param* p : params) analytic.push_back(p->grad);

  double max_err = 0.0;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Param& p = *params[pi];
    for (std::size_t n = 0; n < p.value.data.size(); ++n) {
      const double saved = p.value.data[n];
      p.value.data[n] = saved + eps;
      for (Param* q : params) q->zero_grad();
      const double fp = f();
      p.value.data[n] = saved - eps;
      for (Param* q : params) q->zero_grad();
      const double fm = f();
      p.value.data[n] = saved;
      if (!std::isfinite(fp) || !std::isfinite(fm))
        throw std::runtime_error("finite_diff_check: non-finite objective");
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[pi].data[n] - numeric) / std::max(1.0, std::abs(numeric));
      max_err = std::max(max_err, err);
    }
  }
  for (Param* p : params) p->zero_grad();
  return max_err;
}

}  // namespace wedl
