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
#include <vector>

#include "endorecon/diffnum/ops.hpp"
#include "endorecon/geometry.hpp"

namespace endorecon {

/// Pinhole parameters as scalar tape variables, so a network head can learn them.
struct CameraVars {
  diffnum::Var fx, fy, cx, cy;
  int width = 0;
  int height = 0;
};

CameraVars constant_camera(diffnum::Tape& tape, const Intrinsics& k);

/// Target pixels that take part in a warp, as flat indices plus their (u, v).
struct PixelSet {
  std::vector<std::size_t> index;
  std::vector<double> u;
  std::vector<double> v;

  std::size_t size() const { return index.size(); }
  /// Every pixel of a width*height grid whose x and y are multiples of `stride`.
  static PixelSet grid(int width, int height, int stride = 1);
};

/// Differentiable counterpart of warp_coords for a pixel subset.
struct ProjectedPoints {
  diffnum::Var u;
  diffnum::Var v;
  /// Depth of each back-projected point in the source camera.
  diffnum::Var z;
  std::vector<unsigned char> valid;
};

/// `depth` holds the target depth at each pixel of `pixels`; `depth_valid`
/// flags usable entries. `rotation` is 3x3 and `translation` has 3 entries,
/// together mapping target-camera points into the source camera.
ProjectedPoints project_points(diffnum::Var depth, const std::vector<unsigned char>& depth_valid,
                               diffnum::Var rotation, diffnum::Var translation, const CameraVars& cam,
                               const PixelSet& pixels);

/// Bilinear lookup of a width*height field at projected points. Entries whose
/// non-zero-weight support touches a pixel with `field_valid[i] == 0` are
/// dropped from `valid`.
struct SampledField {
  diffnum::Var values;
  std::vector<unsigned char> valid;
};
SampledField sample_field(diffnum::Var field, const std::vector<unsigned char>& field_valid, int width, int height,
                          const ProjectedPoints& points);

}  // namespace endorecon
