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

#include "endorecon/warp_ad.hpp"

#include <cmath>

#include "endorecon/error.hpp"

namespace endorecon {

namespace dn = diffnum;

CameraVars constant_camera(dn::Tape& tape, const Intrinsics& k) {
  return {tape.constant(k.fx), tape.constant(k.fy), tape.constant(k.cx), tape.constant(k.cy), k.width, k.height};
}

PixelSet PixelSet::grid(int width, int height, int stride) {
  if (stride < 1) fail(ErrorKind::kConfig, "pixel stride must be at least 1");
  PixelSet s;
  for (int y = 0; y < height; y += stride) {
    for (int x = 0; x < width; x += stride) {
      s.index.push_back(static_cast<std::size_t>(y) * width + x);
      s.u.push_back(x);
      s.v.push_back(y);
    }
  }
  return s;
}

ProjectedPoints project_points(dn::Var depth, const std::vector<unsigned char>& depth_valid, dn::Var rotation,
                               dn::Var translation, const CameraVars& cam, const PixelSet& pixels) {
  const std::size_t n = pixels.size();
  if (depth.size() != n || depth_valid.size() != n) {
    fail(ErrorKind::kData, "project_points: depth has " + std::to_string(depth.size()) + " entries for " +
                               std::to_string(n) + " pixels");
  }
  dn::Tape& t = depth.tape();
  const dn::Var u0 = t.constant(dn::Array::vector(pixels.u));
  const dn::Var v0 = t.constant(dn::Array::vector(pixels.v));
  const dn::Var x = (u0 - cam.cx) / cam.fx * depth;
  const dn::Var y = (v0 - cam.cy) / cam.fy * depth;
  auto r = [&](std::size_t i) { return dn::gather(rotation, {i}); };
  auto tr = [&](std::size_t i) { return dn::gather(translation, {i}); };
  const dn::Var xs = r(0) * x + r(1) * y + r(2) * depth + tr(0);
  const dn::Var ys = r(3) * x + r(4) * y + r(5) * depth + tr(1);
  const dn::Var zs = r(6) * x + r(7) * y + r(8) * depth + tr(2);

  // Points behind the camera get a unit placeholder depth so the division stays finite.
  std::vector<double> front(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) front[i] = (depth_valid[i] && zs.value()[i] > kMinProjectedDepth) ? 1.0 : 0.0;
  const dn::Var m = t.constant(dn::Array::vector(front));
  const dn::Var z_safe = zs * m + (1.0 - m);
  const dn::Var u = cam.fx * (xs / z_safe) + cam.cx;
  const dn::Var v = cam.fy * (ys / z_safe) + cam.cy;
  std::vector<unsigned char> valid(n, 0);
  const double xmax = cam.width - 1;
  const double ymax = cam.height - 1;
  constexpr double slack = 1e-9;
  for (std::size_t i = 0; i < n; ++i) {
    if (front[i] == 0.0) continue;
    const double ui = u.value()[i];
    const double vi = v.value()[i];
    valid[i] = (ui >= -slack && vi >= -slack && ui <= xmax + slack && vi <= ymax + slack) ? 1 : 0;
  }
  // Clamping only moves points that sit within round-off of the border.
  return {dn::clamp(u, 0.0, xmax), dn::clamp(v, 0.0, ymax), zs, std::move(valid)};
}

SampledField sample_field(dn::Var field, const std::vector<unsigned char>& field_valid, int width, int height,
                          const ProjectedPoints& points) {
  const auto w = static_cast<std::size_t>(width);
  const auto h = static_cast<std::size_t>(height);
  std::vector<unsigned char> mask = points.valid;
  dn::BilinearStencil st;
  for (std::size_t i = 0; i < mask.size(); ++i) {
    if (!mask[i]) continue;
    if (!dn::bilinear_stencil(points.u.value()[i], points.v.value()[i], h, w, st)) {
      mask[i] = 0;
      continue;
    }
    if (field_valid.empty()) continue;
    const std::size_t idx[4] = {st.y0 * w + st.x0, st.y0 * w + st.x1, st.y1 * w + st.x0, st.y1 * w + st.x1};
    const double wt[4] = {st.w00(), st.w01(), st.w10(), st.w11()};
    for (int j = 0; j < 4; ++j) {
      if (wt[j] != 0.0 && !field_valid[idx[j]]) mask[i] = 0;
    }
  }
  dn::Var values = dn::bilinear_sample(field, h, w, points.u, points.v, mask);
  return {values, std::move(mask)};
}

}  // namespace endorecon
