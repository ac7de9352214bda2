#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "cbn/rng.hpp"
#include "cbn/tensor.hpp"

namespace testutil {

inline cbn::Tensor random_tensor(cbn::Shape shape, cbn::Rng& rng, double scale = 1.0, double offset = 0.0) {
  cbn::Tensor t(std::move(shape));
  for (double& v : t.data()) v = offset + scale * rng.normal();
  return t;
}

inline double rel_err(double a, double b, double floor = 1e-7) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

inline double max_rel_err(const cbn::Tensor& a, const cbn::Tensor& b, double floor = 1e-7) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, rel_err(a[i], b[i], floor));
  return m;
}

// Largest |a - b| / max(rel * max(|a|, |b|), abs_floor); <= 1 means every entry is close.
inline double worst_closeness(const cbn::Tensor& a, const cbn::Tensor& b, double rel = 1e-5, double abs_floor = 1e-7) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double tol = std::max(rel * std::max(std::abs(a[i]), std::abs(b[i])), abs_floor);
    m = std::max(m, std::abs(a[i] - b[i]) / tol);
  }
  return m;
}

inline double max_abs_diff(const cbn::Tensor& a, const cbn::Tensor& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

// Central-difference gradient of a scalar function of one tensor.
inline cbn::Tensor numeric_grad(const std::function<double(const cbn::Tensor&)>& f, const cbn::Tensor& at,
                                double h = 1e-5) {
  cbn::Tensor g(at.shape());
  cbn::Tensor probe = at;
  for (std::size_t i = 0; i < at.size(); ++i) {
    const double orig = probe[i];
    probe[i] = orig + h;
    const double up = f(probe);
    probe[i] = orig - h;
    const double down = f(probe);
    probe[i] = orig;
    g[i] = (up - down) / (2 * h);
  }
  return g;
}

inline double dot(const cbn::Tensor& a, const cbn::Tensor& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

// Plain nested-loop cross-correlation with zero padding.
inline cbn::Tensor loop_conv(const cbn::Tensor& x, const cbn::Tensor& w, std::size_t stride, std::size_t pad) {
  const std::size_t n = x.dim(0), ci = x.dim(1), h = x.dim(2), wd = x.dim(3);
  const std::size_t co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t oh = (h + 2 * pad - kh) / stride + 1, ow = (wd + 2 * pad - kw) / stride + 1;
  cbn::Tensor y({n, co, oh, ow});
  for (std::size_t b = 0; b < n; ++b)
    for (std::size_t o = 0; o < co; ++o)
      for (std::size_t r = 0; r < oh; ++r)
        for (std::size_t c = 0; c < ow; ++c) {
          double acc = 0.0;
          for (std::size_t p = 0; p < ci; ++p)
            for (std::size_t u = 0; u < kh; ++u)
              for (std::size_t v = 0; v < kw; ++v) {
                const long iy = long(r * stride + u) - long(pad), ix = long(c * stride + v) - long(pad);
                if (iy < 0 || ix < 0 || iy >= long(h) || ix >= long(wd)) continue;
                acc += w.at({o, p, u, v}) * x.at({b, p, std::size_t(iy), std::size_t(ix)});
              }
          y.at({b, o, r, c}) = acc;
        }
  return y;
}

}  // namespace testutil
