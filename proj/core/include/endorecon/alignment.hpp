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

#include <cstdint>
#include <span>
#include <vector>

#include "endorecon/diffnum/ops.hpp"
#include "endorecon/geometry.hpp"

namespace endorecon::align {

namespace dn = diffnum;

/// One anchor pixel per P x P patch. Partial patches at the right and bottom
/// edges are dropped; patches without a valid pixel carry no anchor.
struct PatchGrid {
  int patch = 0;
  int width = 0;
  int height = 0;
  /// Row-major index of the patch each anchor came from.
  std::vector<std::size_t> patch_index;
  std::vector<int> x;
  std::vector<int> y;

  std::size_t size() const { return x.size(); }
  int patches_x() const { return width / patch; }
  int patches_y() const { return height / patch; }
  /// Number of full patches, i.e. the length of a weight vector.
  std::size_t patch_count() const { return static_cast<std::size_t>(patches_x()) * patches_y(); }
  std::size_t flat(std::size_t j) const { return static_cast<std::size_t>(y[j]) * width + x[j]; }
};

/// Global scale/shift plus one weight per patch.
struct AlignmentParams {
  double alpha = 1.0;
  double beta = 0.0;
  std::vector<double> anchor_weights;

  static AlignmentParams identity(std::size_t patches) { return {1.0, 0.0, std::vector<double>(patches, 1.0)}; }
};

struct LocalMaps {
  int width = 0;
  int height = 0;
  std::vector<double> a;
  std::vector<double> b;
  /// Pixels whose weighted regression was rank deficient and fell back to a
  /// pure ratio slope.
  std::size_t fallback_pixels = 0;
};

/// alpha * d + beta; pixels that end up non-positive become invalid.
DepthMap global_align(const DepthMap& d, double alpha, double beta);

PatchGrid sample_patch_anchors(const DepthMap& d, int patch, std::uint64_t seed);

/// w_j * dg(p_j) for every anchor; `weights` is indexed by patch.
std::vector<double> anchor_values(const DepthMap& dg, const PatchGrid& grid, std::span<const double> weights);

/// Per-pixel slope/intercept mapping dg(p_j) onto w_j * dg(p_j) under a
/// Gaussian spatial kernel of width `sigma` (defaults to the patch size).
LocalMaps lwlr_maps(const DepthMap& dg, const PatchGrid& grid, std::span<const double> weights, double sigma = 0.0);

/// A * (alpha * d + beta) + B. Never revives an invalid pixel.
DepthMap apply_alignment(const DepthMap& d, const AlignmentParams& params, const PatchGrid& grid, double sigma = 0.0);

// Differentiable form used by the reconstruction optimizer.

/// Precomputed spatial kernel between a pixel subset and the anchors.
struct LwlrSystem {
  int width = 0;
  int height = 0;
  std::vector<std::size_t> pixels;
  std::vector<std::size_t> anchor_pixels;
  std::vector<std::size_t> anchor_patch;
  std::size_t patch_count = 0;
  /// [pixels, anchors]
  dn::Array kernel;
  /// Row sums of `kernel`.
  dn::Array kernel_mass;
};

/// `pixels` empty means every pixel of the grid.
LwlrSystem make_lwlr_system(const PatchGrid& grid, std::vector<std::size_t> pixels = {}, double sigma = 0.0);

struct AlignedVars {
  /// Aligned depth at each system pixel.
  dn::Var depth;
  dn::Var a;
  dn::Var b;
  std::size_t fallback_pixels = 0;
};

/// `raw_depth` is the full [h*w] affine-invariant map, `weights` has one entry
/// per patch. Anchors must sit on valid raw pixels.
AlignedVars align_depth(const LwlrSystem& sys, dn::Var raw_depth, dn::Var alpha, dn::Var beta, dn::Var weights);

}  // namespace endorecon::align
