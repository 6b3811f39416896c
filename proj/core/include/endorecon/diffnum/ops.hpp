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

#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "endorecon/diffnum/tape.hpp"

namespace endorecon::diffnum {

// Elementwise binary ops. Shapes must match, or one side must hold a single
// element which is broadcast.
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var div(Var a, Var b);

Var add(Var a, double c);
Var mul(Var a, double c);
Var neg(Var a);
/// c / a, elementwise.
Var reciprocal(Var a, double c = 1.0);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator+(Var a, double c) { return add(a, c); }
inline Var operator+(double c, Var a) { return add(a, c); }
inline Var operator-(Var a, double c) { return add(a, -c); }
inline Var operator-(double c, Var a) { return add(neg(a), c); }
inline Var operator*(Var a, double c) { return mul(a, c); }
inline Var operator*(double c, Var a) { return mul(a, c); }
inline Var operator/(Var a, double c) { return mul(a, 1.0 / c); }
inline Var operator/(double c, Var a) { return reciprocal(a, c); }
inline Var operator-(Var a) { return neg(a); }

/// [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m].
Var matmul(Var a, Var b);
Var transpose(Var a);
Var reshape(Var a, Shape shape);

Var sigmoid(Var a);
Var softplus(Var a);
Var exp(Var a);
Var log(Var a);
Var sqrt(Var a);
Var square(Var a);
/// sqrt(x^2 + eps): |x| with a smooth kink.
Var smooth_abs(Var a, double eps = 1e-12);
Var clamp(Var a, double lo, double hi);

Var sum(Var a);
Var mean(Var a);

/// out[i] = a[flat index indices[i]].
Var gather(Var a, std::vector<std::size_t> indices);
/// Concatenates two 2-D arrays along columns: [m,p] ++ [m,q] -> [m,p+q].
Var concat_cols(Var a, Var b);

/// 3x3 neighbourhood unfold of a row-major h*w grid of C-vectors ([h*w, C])
/// into [h*w, 9*C] with zero padding. Column block k = 3*(dy+1)+(dx+1).
Var im2col3x3(Var a, std::size_t h, std::size_t w);
/// 3x3 box mean over an h*w single-channel grid with reflection padding.
Var box3x3_reflect(Var a, std::size_t h, std::size_t w);

/// 2x2 interpolation support of a sample point. The point (u, v) must lie in
/// [0, w-1] x [0, h-1]; on the last row/column the support shifts inward with
/// a unit fraction so it never leaves the grid.
struct BilinearStencil {
  std::size_t x0 = 0, x1 = 0, y0 = 0, y1 = 0;
  double fx = 0.0, fy = 0.0;

  double w00() const { return (1.0 - fx) * (1.0 - fy); }
  double w01() const { return fx * (1.0 - fy); }
  double w10() const { return (1.0 - fx) * fy; }
  double w11() const { return fx * fy; }
};

/// Returns false (and leaves `out` untouched) when the point is outside the grid or not finite.
bool bilinear_stencil(double u, double v, std::size_t h, std::size_t w, BilinearStencil& out);

/// Bilinear interpolation of an h*w field at coordinates (u, v); pixel
/// centres sit on integer coordinates. Entries where `mask` is 0 return 0 and
/// receive no gradient. Differentiable w.r.t. the field and the coordinates.
Var bilinear_sample(Var field, std::size_t h, std::size_t w, Var u, Var v, std::vector<unsigned char> mask);

/// Axis-angle 3-vector -> 3x3 rotation matrix.
Var rodrigues(Var r);

}  // namespace endorecon::diffnum
