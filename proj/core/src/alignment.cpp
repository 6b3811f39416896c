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

#include "endorecon/alignment.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <string>

#include "endorecon/error.hpp"

namespace endorecon::align {
namespace {

// det <= kRankTol * S0 * Sxx counts as rank deficient.
constexpr double kRankTol = 1e-12;

void check_weights(const PatchGrid& grid, std::size_t n) {
  if (n != grid.patch_count()) {
    fail(ErrorKind::kData, "alignment: expected " + std::to_string(grid.patch_count()) + " anchor weights, got " +
                               std::to_string(n));
  }
}

double resolve_sigma(const PatchGrid& grid, double sigma) {
  if (sigma <= 0.0) sigma = grid.patch;
  if (!(sigma > 0.0) || !std::isfinite(sigma)) fail(ErrorKind::kConfig, "alignment: kernel width must be positive");
  return sigma;
}

}  // namespace

DepthMap global_align(const DepthMap& d, double alpha, double beta) {
  if (!(alpha > 0.0)) fail(ErrorKind::kConfig, "global_align: alpha must be positive");
  DepthMap out(d.width(), d.height());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (d.valid(i)) out.set(i, alpha * d.at(i) + beta);
  }
  return out;
}

PatchGrid sample_patch_anchors(const DepthMap& d, int patch, std::uint64_t seed) {
  if (patch < 2) fail(ErrorKind::kConfig, "sample_patch_anchors: patch size must be at least 2");
  PatchGrid g;
  g.patch = patch;
  g.width = d.width();
  g.height = d.height();
  if (g.patches_x() == 0 || g.patches_y() == 0) {
    fail(ErrorKind::kConfig, "sample_patch_anchors: patch size exceeds the image");
  }
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> candidates;
  for (int py = 0; py < g.patches_y(); ++py) {
    for (int px = 0; px < g.patches_x(); ++px) {
      candidates.clear();
      for (int y = py * patch; y < (py + 1) * patch; ++y) {
        for (int x = px * patch; x < (px + 1) * patch; ++x) {
          if (d.valid(x, y)) candidates.push_back(d.index(x, y));
        }
      }
      if (candidates.empty()) continue;
      std::uniform_int_distribution<std::size_t> pick(0, candidates.size() - 1);
      const std::size_t flat = candidates[pick(rng)];
      g.patch_index.push_back(static_cast<std::size_t>(py) * g.patches_x() + px);
      g.x.push_back(static_cast<int>(flat % g.width));
      g.y.push_back(static_cast<int>(flat / g.width));
    }
  }
  if (g.size() == 0) fail(ErrorKind::kData, "sample_patch_anchors: no valid pixel in any patch");
  return g;
}

std::vector<double> anchor_values(const DepthMap& dg, const PatchGrid& grid, std::span<const double> weights) {
  check_weights(grid, weights.size());
  std::vector<double> out(grid.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (!dg.valid(grid.flat(j))) fail(ErrorKind::kData, "anchor_values: anchor falls on an invalid pixel");
    out[j] = weights[grid.patch_index[j]] * dg.at(grid.flat(j));
  }
  return out;
}

LwlrSystem make_lwlr_system(const PatchGrid& grid, std::vector<std::size_t> pixels, double sigma) {
  sigma = resolve_sigma(grid, sigma);
  LwlrSystem s;
  s.width = grid.width;
  s.height = grid.height;
  s.patch_count = grid.patch_count();
  if (pixels.empty()) {
    pixels.resize(static_cast<std::size_t>(grid.width) * grid.height);
    for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = i;
  }
  s.pixels = std::move(pixels);
  for (std::size_t j = 0; j < grid.size(); ++j) {
    s.anchor_pixels.push_back(grid.flat(j));
    s.anchor_patch.push_back(grid.patch_index[j]);
  }
  const std::size_t m = s.pixels.size();
  const std::size_t n = grid.size();
  s.kernel = dn::Array::zeros({m, n});
  s.kernel_mass = dn::Array::zeros({m});
  const double inv = 1.0 / (2.0 * sigma * sigma);
  std::vector<double> logk(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double qx = static_cast<double>(s.pixels[i] % s.width);
    const double qy = static_cast<double>(s.pixels[i] / s.width);
    double top = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) {
      const double dx = qx - grid.x[j];
      const double dy = qy - grid.y[j];
      logk[j] = -(dx * dx + dy * dy) * inv;
      top = std::max(top, logk[j]);
    }
    // Each row is scaled so its largest entry is 1; the fit is unchanged and
    // far pixels cannot underflow to an all-zero row.
    double mass = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double k = std::exp(logk[j] - top);
      s.kernel.values()[i * n + j] = k;
      mass += k;
    }
    s.kernel_mass.values()[i] = mass;
  }
  return s;
}

AlignedVars align_depth(const LwlrSystem& sys, dn::Var raw_depth, dn::Var alpha, dn::Var beta, dn::Var weights) {
  dn::Tape& tape = raw_depth.tape();
  const std::size_t hw = static_cast<std::size_t>(sys.width) * sys.height;
  if (raw_depth.size() != hw) fail(ErrorKind::kData, "align_depth: depth size does not match the system grid");
  if (weights.size() != sys.patch_count) fail(ErrorKind::kData, "align_depth: weight count does not match patches");
  if (sys.anchor_pixels.empty()) fail(ErrorKind::kData, "align_depth: no anchors");

  const dn::Var dg = raw_depth * alpha + beta;
  const dn::Var x = dn::gather(dg, sys.anchor_pixels);
  const dn::Var y = dn::gather(weights, sys.anchor_patch) * x;

  // Centre on the anchor mean to keep the normal equations well conditioned.
  double c = 0.0;
  for (double v : x.value().values()) c += v;
  c /= static_cast<double>(x.size());
  const dn::Var xc = x - c;
  const dn::Var yc = y - c;

  const dn::Var k = tape.constant(sys.kernel);
  const dn::Var s0 = tape.constant(sys.kernel_mass);
  const dn::Var sx = dn::matmul(k, xc);
  const dn::Var sy = dn::matmul(k, yc);
  const dn::Var sxx = dn::matmul(k, xc * xc);
  const dn::Var sxy = dn::matmul(k, xc * yc);
  const dn::Var det = s0 * sxx - sx * sx;
  const dn::Var num = s0 * sxy - sx * sy;

  const std::size_t m = sys.pixels.size();
  dn::Array mask = dn::Array::zeros({m});
  std::size_t fallback = 0;
  for (std::size_t i = 0; i < m; ++i) {
    const double d = det.value()[i];
    const bool ok = std::isfinite(d) && d > kRankTol * s0.value()[i] * sxx.value()[i] && sxx.value()[i] > 0.0;
    mask.values()[i] = ok ? 1.0 : 0.0;
    if (!ok) ++fallback;
  }
  const dn::Var on = tape.constant(mask);
  const dn::Var off = 1.0 - on;

  const dn::Var slope_ls = num / (det * on + off);
  // Rank-deficient pixels use the ratio of kernel-weighted means instead.
  const dn::Var mean_x = sx + s0 * c;
  const dn::Var mean_y = sy + s0 * c;
  const dn::Var slope_fb = mean_y / (mean_x * off + on);
  const dn::Var a = slope_ls * on + slope_fb * off;
  const dn::Var b = ((sy - a * sx) / s0 + c - a * c) * on;

  const dn::Var dg_pix = m == hw ? dg : dn::gather(dg, sys.pixels);
  return {a * dg_pix + b, a, b, fallback};
}

LocalMaps lwlr_maps(const DepthMap& dg, const PatchGrid& grid, std::span<const double> weights, double sigma) {
  check_weights(grid, weights.size());
  for (std::size_t j = 0; j < grid.size(); ++j) {
    if (!dg.valid(grid.flat(j))) fail(ErrorKind::kData, "lwlr_maps: anchor falls on an invalid pixel");
  }
  const LwlrSystem sys = make_lwlr_system(grid, {}, sigma);
  dn::Tape tape;
  const AlignedVars r = align_depth(sys, tape.constant(dn::Array::vector({dg.depth().begin(), dg.depth().end()})),
                                    tape.constant(1.0), tape.constant(0.0),
                                    tape.constant(dn::Array::vector({weights.begin(), weights.end()})));
  LocalMaps out;
  out.width = dg.width();
  out.height = dg.height();
  out.a.assign(r.a.value().values().begin(), r.a.value().values().end());
  out.b.assign(r.b.value().values().begin(), r.b.value().values().end());
  out.fallback_pixels = r.fallback_pixels;
  for (std::size_t i = 0; i < out.a.size(); ++i) {
    if (!std::isfinite(out.a[i]) || !std::isfinite(out.b[i])) fail(ErrorKind::kNumeric, "lwlr_maps: non-finite map");
  }
  return out;
}

DepthMap apply_alignment(const DepthMap& d, const AlignmentParams& params, const PatchGrid& grid, double sigma) {
  const DepthMap dg = global_align(d, params.alpha, params.beta);
  const LocalMaps maps = lwlr_maps(dg, grid, params.anchor_weights, sigma);
  DepthMap out(d.width(), d.height());
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (dg.valid(i)) out.set(i, maps.a[i] * dg.at(i) + maps.b[i]);
  }
  return out;
}

}  // namespace endorecon::align
