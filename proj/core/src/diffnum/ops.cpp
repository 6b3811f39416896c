// Copyright 2026 The endorecon Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "endorecon/diffnum/ops.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include "endorecon/error.hpp"

namespace endorecon::diffnum {

namespace {

using Grads = std::vector<Array>;

Shape broadcast_shape(const char* op, const Array& a, const Array& b) {
  if (a.shape() == b.shape()) return a.shape();
  if (b.is_scalar()) return a.shape();
  if (a.is_scalar()) return b.shape();
  fail(ErrorKind::kData, std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                             shape_string(b.shape()));
}

// Adds the adjoint `g` (shaped like the output) into operand `v`, summing when
// the operand was broadcast.
void push_broadcast(Grads& grads, Var v, const std::vector<double>& g) {
  const Array& val = v.value();
  Array& dst = Tape::slot(grads, v.id(), val.shape());
  auto d = dst.values();
  if (val.size() == g.size()) {
    for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
  } else {
    double s = 0.0;
    for (double x : g) s += x;
    d[0] += s;
  }
}

template <class F, class DA, class DB>
Var binary(const char* name, Var a, Var b, F f, DA dfa, DB dfb) {
  const Array& A = a.value();
  const Array& B = b.value();
  Shape shape = broadcast_shape(name, A, B);
  const std::size_t n = shape_size(shape);
  const bool sa = A.size() != n;
  const bool sb = B.size() != n;
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(A[sa ? 0 : i], B[sb ? 0 : i]);
  return a.tape().record(Array(std::move(shape), std::move(out)), {a, b},
                         [a, b, sa, sb, dfa, dfb](const Tape& t, const Array& g, Grads& grads) {
                           const Array& A = a.value();
                           const Array& B = b.value();
                           const std::size_t n = g.size();
                           if (t.requires_grad(a)) {
                             std::vector<double> ga(n);
                             for (std::size_t i = 0; i < n; ++i) ga[i] = g[i] * dfa(A[sa ? 0 : i], B[sb ? 0 : i]);
                             push_broadcast(grads, a, ga);
                           }
                           if (t.requires_grad(b)) {
                             std::vector<double> gb(n);
                             for (std::size_t i = 0; i < n; ++i) gb[i] = g[i] * dfb(A[sa ? 0 : i], B[sb ? 0 : i]);
                             push_broadcast(grads, b, gb);
                           }
                         });
}

// df receives the input value.
template <class F, class DF>
Var unary(Var a, F f, DF df) {
  const Array& A = a.value();
  std::vector<double> out(A.size());
  for (std::size_t i = 0; i < A.size(); ++i) out[i] = f(A[i]);
  return a.tape().record(Array(A.shape(), std::move(out)), {a},
                         [a, df](const Tape& t, const Array& g, Grads& grads) {
                           const Array& A = a.value();
                           (void)t;
                           Array& dst = Tape::slot(grads, a.id(), A.shape());
                           auto d = dst.values();
                           for (std::size_t i = 0; i < A.size(); ++i) d[i] += g[i] * df(A[i]);
                         });
}

}  // namespace

Var add(Var a, Var b) {
  return binary(
      "add", a, b, [](double x, double y) { return x + y; }, [](double, double) { return 1.0; },
      [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary(
      "sub", a, b, [](double x, double y) { return x - y; }, [](double, double) { return 1.0; },
      [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary(
      "mul", a, b, [](double x, double y) { return x * y; }, [](double, double y) { return y; },
      [](double x, double) { return x; });
}

Var div(Var a, Var b) {
  return binary(
      "div", a, b, [](double x, double y) { return x / y; }, [](double, double y) { return 1.0 / y; },
      [](double x, double y) { return -x / (y * y); });
}

Var add(Var a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Var mul(Var a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double) { return c; });
}

Var neg(Var a) { return mul(a, -1.0); }

Var reciprocal(Var a, double c) {
  return unary(a, [c](double x) { return c / x; }, [c](double x) { return -c / (x * x); });
}

Var matmul(Var a, Var b) {
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.rank() != 2 || (B.rank() != 1 && B.rank() != 2) || A.cols() != B.rows()) {
    fail(ErrorKind::kData, "matmul: shape mismatch " + shape_string(A.shape()) + " x " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = A[i * k + p];
      if (aip == 0.0) continue;
      const double* brow = &B.data()[p * n];
      double* orow = &out[i * n];
      for (std::size_t j = 0; j < n; ++j) orow[j] += aip * brow[j];
    }
  }
  Shape shape = B.rank() == 1 ? Shape{m} : Shape{m, n};
  return a.tape().record(Array(std::move(shape), std::move(out)), {a, b},
                         [a, b, m, k, n](const Tape& t, const Array& g, Grads& grads) {
                           const Array& A = a.value();
                           const Array& B = b.value();
                           if (t.requires_grad(a)) {
                             Array& da = Tape::slot(grads, a.id(), A.shape());
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 double s = 0.0;
                                 for (std::size_t j = 0; j < n; ++j) s += g[i * n + j] * B[p * n + j];
                                 da[i * k + p] += s;
                               }
                           }
                           if (t.requires_grad(b)) {
                             Array& db = Tape::slot(grads, b.id(), B.shape());
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t p = 0; p < k; ++p) {
                                 const double aip = A[i * k + p];
                                 if (aip == 0.0) continue;
                                 for (std::size_t j = 0; j < n; ++j) db[p * n + j] += aip * g[i * n + j];
                               }
                           }
                         });
}

Var transpose(Var a) {
  const Array& A = a.value();
  if (A.rank() != 2) fail(ErrorKind::kData, "transpose: expected 2-D, got " + shape_string(A.shape()));
  const std::size_t m = A.rows(), n = A.cols();
  std::vector<double> out(m * n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
  return a.tape().record(Array({n, m}, std::move(out)), {a}, [a, m, n](const Tape&, const Array& g, Grads& grads) {
    Array& da = Tape::slot(grads, a.id(), a.value().shape());
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) da[i * n + j] += g[j * m + i];
  });
}

Var reshape(Var a, Shape shape) {
  Array out = a.value().reshaped(std::move(shape));
  return a.tape().record(std::move(out), {a}, [a](const Tape&, const Array& g, Grads& grads) {
    Array& da = Tape::slot(grads, a.id(), a.value().shape());
    for (std::size_t i = 0; i < g.size(); ++i) da[i] += g[i];
  });
}

Var sigmoid(Var a) {
  return unary(
      a,
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); },
      [](double x) {
        const double s = x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
        return s * (1.0 - s);
      });
}

Var softplus(Var a) {
  return unary(
      a, [](double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); },
      [](double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); });
}

Var exp(Var a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double x) { return std::exp(x); });
}

Var log(Var a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Var sqrt(Var a) {
  return unary(a, [](double x) { return std::sqrt(x); }, [](double x) { return 0.5 / std::sqrt(x); });
}

Var square(Var a) {
  return unary(a, [](double x) { return x * x; }, [](double x) { return 2.0 * x; });
}

Var smooth_abs(Var a, double eps) {
  return unary(
      a, [eps](double x) { return std::sqrt(x * x + eps); }, [eps](double x) { return x / std::sqrt(x * x + eps); });
}

Var clamp(Var a, double lo, double hi) {
  return unary(
      a, [lo, hi](double x) { return std::clamp(x, lo, hi); },
      [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Var sum(Var a) {
  const Array& A = a.value();
  double s = 0.0;
  for (double x : A.values()) s += x;
  return a.tape().record(Array::scalar(s), {a}, [a](const Tape&, const Array& g, Grads& grads) {
    Array& da = Tape::slot(grads, a.id(), a.value().shape());
    const double gv = g[0];
    for (double& x : da.values()) x += gv;
  });
}

Var mean(Var a) {
  const std::size_t n = a.value().size();
  if (n == 0) fail(ErrorKind::kData, "mean of an empty array");
  return mul(sum(a), 1.0 / static_cast<double>(n));
}

Var gather(Var a, std::vector<std::size_t> indices) {
  const Array& A = a.value();
  std::vector<double> out(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    if (indices[i] >= A.size()) {
      fail(ErrorKind::kData, "gather: index " + std::to_string(indices[i]) + " out of range for " +
                                 shape_string(A.shape()));
    }
    out[i] = A[indices[i]];
  }
  return a.tape().record(Array::vector(std::move(out)), {a},
                         [a, idx = std::move(indices)](const Tape&, const Array& g, Grads& grads) {
                           Array& da = Tape::slot(grads, a.id(), a.value().shape());
                           for (std::size_t i = 0; i < idx.size(); ++i) da[idx[i]] += g[i];
                         });
}

Var concat_cols(Var a, Var b) {
  const Array& A = a.value();
  const Array& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.rows() != B.rows()) {
    fail(ErrorKind::kData, "concat_cols: shape mismatch " + shape_string(A.shape()) + " vs " + shape_string(B.shape()));
  }
  const std::size_t m = A.rows(), p = A.cols(), q = B.cols();
  std::vector<double> out(m * (p + q));
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t j = 0; j < p; ++j) out[i * (p + q) + j] = A[i * p + j];
    for (std::size_t j = 0; j < q; ++j) out[i * (p + q) + p + j] = B[i * q + j];
  }
  return a.tape().record(Array({m, p + q}, std::move(out)), {a, b},
                         [a, b, m, p, q](const Tape& t, const Array& g, Grads& grads) {
                           if (t.requires_grad(a)) {
                             Array& da = Tape::slot(grads, a.id(), a.value().shape());
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < p; ++j) da[i * p + j] += g[i * (p + q) + j];
                           }
                           if (t.requires_grad(b)) {
                             Array& db = Tape::slot(grads, b.id(), b.value().shape());
                             for (std::size_t i = 0; i < m; ++i)
                               for (std::size_t j = 0; j < q; ++j) db[i * q + j] += g[i * (p + q) + p + j];
                           }
                         });
}

Var im2col3x3(Var a, std::size_t h, std::size_t w) {
  const Array& A = a.value();
  if (A.rank() != 2 || A.rows() != h * w) {
    fail(ErrorKind::kData, "im2col3x3: expected [" + std::to_string(h * w) + ",C], got " + shape_string(A.shape()));
  }
  const std::size_t c = A.cols();
  std::vector<double> out(h * w * 9 * c, 0.0);
  // Source index per (pixel, tap); -1 marks zero padding.
  std::vector<long> src(h * w * 9, -1);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = static_cast<long>(y) + dy, xx = static_cast<long>(x) + dx;
          if (yy < 0 || xx < 0 || yy >= static_cast<long>(h) || xx >= static_cast<long>(w)) continue;
          const std::size_t k = static_cast<std::size_t>(3 * (dy + 1) + (dx + 1));
          src[(y * w + x) * 9 + k] = yy * static_cast<long>(w) + xx;
        }
  for (std::size_t pix = 0; pix < h * w; ++pix)
    for (std::size_t k = 0; k < 9; ++k) {
      const long s = src[pix * 9 + k];
      if (s < 0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out[pix * 9 * c + k * c + ch] = A[static_cast<std::size_t>(s) * c + ch];
    }
  return a.tape().record(Array({h * w, 9 * c}, std::move(out)), {a},
                         [a, c, src = std::move(src)](const Tape&, const Array& g, Grads& grads) {
                           Array& da = Tape::slot(grads, a.id(), a.value().shape());
                           const std::size_t pixels = src.size() / 9;
                           for (std::size_t pix = 0; pix < pixels; ++pix)
                             for (std::size_t k = 0; k < 9; ++k) {
                               const long s = src[pix * 9 + k];
                               if (s < 0) continue;
                               for (std::size_t ch = 0; ch < c; ++ch)
                                 da[static_cast<std::size_t>(s) * c + ch] += g[pix * 9 * c + k * c + ch];
                             }
                         });
}

Var box3x3_reflect(Var a, std::size_t h, std::size_t w) {
  const Array& A = a.value();
  if (A.size() != h * w || h < 2 || w < 2) {
    fail(ErrorKind::kData, "box3x3_reflect: grid " + std::to_string(h) + "x" + std::to_string(w) +
                               " does not fit " + shape_string(A.shape()));
  }
  auto reflect = [](long i, long n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };
  std::vector<std::size_t> taps(h * w * 9);
  for (std::size_t y = 0; y < h; ++y)
    for (std::size_t x = 0; x < w; ++x)
      for (int dy = -1; dy <= 1; ++dy)
        for (int dx = -1; dx <= 1; ++dx) {
          const long yy = reflect(static_cast<long>(y) + dy, static_cast<long>(h));
          const long xx = reflect(static_cast<long>(x) + dx, static_cast<long>(w));
          taps[(y * w + x) * 9 + static_cast<std::size_t>(3 * (dy + 1) + dx + 1)] =
              static_cast<std::size_t>(yy) * w + static_cast<std::size_t>(xx);
        }
  std::vector<double> out(h * w);
  for (std::size_t p = 0; p < h * w; ++p) {
    double s = 0.0;
    for (std::size_t k = 0; k < 9; ++k) s += A[taps[p * 9 + k]];
    out[p] = s / 9.0;
  }
  return a.tape().record(Array(A.shape(), std::move(out)), {a},
                         [a, taps = std::move(taps)](const Tape&, const Array& g, Grads& grads) {
                           Array& da = Tape::slot(grads, a.id(), a.value().shape());
                           const std::size_t n = taps.size() / 9;
                           for (std::size_t p = 0; p < n; ++p) {
                             const double gp = g[p] / 9.0;
                             for (std::size_t k = 0; k < 9; ++k) da[taps[p * 9 + k]] += gp;
                           }
                         });
}

bool bilinear_stencil(double u, double v, std::size_t h, std::size_t w, BilinearStencil& out) {
  if (h == 0 || w == 0) return false;
  if (!(u >= 0.0 && v >= 0.0 && u <= static_cast<double>(w - 1) && v <= static_cast<double>(h - 1))) return false;
  auto axis = [](double c, std::size_t n, std::size_t& i0, std::size_t& i1, double& f) {
    i0 = static_cast<std::size_t>(std::floor(c));
    f = c - static_cast<double>(i0);
    if (i0 + 1 >= n) {
      if (n == 1) {
        i0 = i1 = 0;
        f = 0.0;
        return;
      }
      i0 = n - 2;
      f = 1.0;
    }
    i1 = i0 + 1;
  };
  axis(u, w, out.x0, out.x1, out.fx);
  axis(v, h, out.y0, out.y1, out.fy);
  return true;
}

Var bilinear_sample(Var field, std::size_t h, std::size_t w, Var u, Var v, std::vector<unsigned char> mask) {
  const Array& F = field.value();
  const Array& U = u.value();
  const Array& V = v.value();
  if (F.size() != h * w) {
    fail(ErrorKind::kData, "bilinear_sample: field " + shape_string(F.shape()) + " is not " + std::to_string(h) + "x" +
                               std::to_string(w));
  }
  if (U.size() != V.size() || mask.size() != U.size()) {
    fail(ErrorKind::kData, "bilinear_sample: coordinate shapes " + shape_string(U.shape()) + " and " +
                               shape_string(V.shape()) + " with mask of " + std::to_string(mask.size()));
  }
  const std::size_t n = U.size();
  std::vector<BilinearStencil> st(n);
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    if (!mask[i]) continue;
    if (!bilinear_stencil(U[i], V[i], h, w, st[i])) {
      mask[i] = 0;
      continue;
    }
    const auto& s = st[i];
    out[i] = s.w00() * F[s.y0 * w + s.x0] + s.w01() * F[s.y0 * w + s.x1] + s.w10() * F[s.y1 * w + s.x0] +
             s.w11() * F[s.y1 * w + s.x1];
  }
  return field.tape().record(
      Array(U.shape(), std::move(out)), {field, u, v},
      [field, u, v, w, st = std::move(st), mask = std::move(mask)](const Tape& t, const Array& g, Grads& grads) {
        const Array& F = field.value();
        const std::size_t n = st.size();
        if (t.requires_grad(field)) {
          Array& df = Tape::slot(grads, field.id(), F.shape());
          for (std::size_t i = 0; i < n; ++i) {
            if (!mask[i]) continue;
            const auto& s = st[i];
            df[s.y0 * w + s.x0] += g[i] * s.w00();
            df[s.y0 * w + s.x1] += g[i] * s.w01();
            df[s.y1 * w + s.x0] += g[i] * s.w10();
            df[s.y1 * w + s.x1] += g[i] * s.w11();
          }
        }
        const bool gu = t.requires_grad(u), gv = t.requires_grad(v);
        if (!gu && !gv) return;
        Array* du = gu ? &Tape::slot(grads, u.id(), u.value().shape()) : nullptr;
        Array* dv = gv ? &Tape::slot(grads, v.id(), v.value().shape()) : nullptr;
        for (std::size_t i = 0; i < n; ++i) {
          if (!mask[i]) continue;
          const auto& s = st[i];
          const double f00 = F[s.y0 * w + s.x0], f01 = F[s.y0 * w + s.x1];
          const double f10 = F[s.y1 * w + s.x0], f11 = F[s.y1 * w + s.x1];
          if (du && s.x1 != s.x0) (*du)[i] += g[i] * ((1.0 - s.fy) * (f01 - f00) + s.fy * (f11 - f10));
          if (dv && s.y1 != s.y0) (*dv)[i] += g[i] * ((1.0 - s.fx) * (f10 - f00) + s.fx * (f11 - f01));
        }
      });
}

namespace {

using Mat3 = std::array<double, 9>;

Mat3 skew(double x, double y, double z) { return {0, -z, y, z, 0, -x, -y, x, 0}; }

Mat3 matmul3(const Mat3& a, const Mat3& b) {
  Mat3 c{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
  return c;
}

// sin(t)/t, (1-cos t)/t^2 and their derivatives with respect to s = t^2.
struct RodriguesCoeffs {
  double a, b, da, db;
};

RodriguesCoeffs rodrigues_coeffs(double s) {
  if (s < 1e-4) {
    return {1.0 - s / 6.0 + s * s / 120.0 - s * s * s / 5040.0, 0.5 - s / 24.0 + s * s / 720.0 - s * s * s / 40320.0,
            -1.0 / 6.0 + s / 60.0 - s * s / 1680.0, -1.0 / 24.0 + s / 360.0 - s * s / 13440.0};
  }
  const double t = std::sqrt(s);
  const double a = std::sin(t) / t;
  const double b = (1.0 - std::cos(t)) / s;
  return {a, b, (std::cos(t) - a) / (2.0 * s), (a - 2.0 * b) / (2.0 * s)};
}

}  // namespace

Var rodrigues(Var r) {
  const Array& R = r.value();
  if (R.size() != 3) fail(ErrorKind::kData, "rodrigues: expected 3 values, got " + shape_string(R.shape()));
  const double x = R[0], y = R[1], z = R[2];
  const double s = x * x + y * y + z * z;
  const RodriguesCoeffs c = rodrigues_coeffs(s);
  const Mat3 k = skew(x, y, z);
  const Mat3 k2 = matmul3(k, k);
  std::vector<double> out(9);
  for (int i = 0; i < 9; ++i) out[i] = (i % 4 == 0 ? 1.0 : 0.0) + c.a * k[i] + c.b * k2[i];
  return r.tape().record(Array({3, 3}, std::move(out)), {r}, [r](const Tape&, const Array& g, Grads& grads) {
    const Array& R = r.value();
    const double x = R[0], y = R[1], z = R[2];
    const double s = x * x + y * y + z * z;
    const RodriguesCoeffs c = rodrigues_coeffs(s);
    const Mat3 k = skew(x, y, z);
    const Mat3 k2 = matmul3(k, k);
    Array& dr = Tape::slot(grads, r.id(), R.shape());
    const std::array<Mat3, 3> gens = {skew(1, 0, 0), skew(0, 1, 0), skew(0, 0, 1)};
    for (int i = 0; i < 3; ++i) {
      const Mat3 ek = matmul3(gens[i], k);
      const Mat3 ke = matmul3(k, gens[i]);
      double acc = 0.0;
      for (int e = 0; e < 9; ++e) {
        const double d = c.a * gens[i][e] + c.b * (ek[e] + ke[e]) + 2.0 * R[i] * (c.da * k[e] + c.db * k2[e]);
        acc += g[e] * d;
      }
      dr[i] += acc;
    }
  });
}

}  // namespace endorecon::diffnum
