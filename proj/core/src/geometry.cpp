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

#include "endorecon/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "endorecon/diffnum/ops.hpp"
#include "endorecon/error.hpp"

namespace endorecon {
namespace {

constexpr double kBorderSlack = 1e-9;

}  // namespace

void Intrinsics::validate() const {
  if (!(fx > 0.0) || !(fy > 0.0)) fail(ErrorKind::kData, "intrinsics: focal lengths must be positive");
  if (width <= 0 || height <= 0) fail(ErrorKind::kData, "intrinsics: image size must be positive");
  if (!(cx >= 0.0 && cx < width && cy >= 0.0 && cy < height)) {
    fail(ErrorKind::kData, "intrinsics: principal point outside the image");
  }
}

Eigen::Matrix3d Intrinsics::matrix() const {
  Eigen::Matrix3d k;
  k << fx, 0.0, cx, 0.0, fy, cy, 0.0, 0.0, 1.0;
  return k;
}

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& r) {
  const double theta = r.norm();
  if (theta < 1e-12) {
    Eigen::Matrix3d k;
    k << 0, -r.z(), r.y(), r.z(), 0, -r.x(), -r.y(), r.x(), 0;
    return Eigen::Matrix3d::Identity() + k;
  }
  return Eigen::AngleAxisd(theta, r / theta).toRotationMatrix();
}

Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation) {
  const Eigen::AngleAxisd aa(rotation);
  return aa.angle() * aa.axis();
}

Eigen::Matrix3d PoseSE3::rotation_matrix() const { return so3_exp(rotation); }

Eigen::Matrix4d PoseSE3::matrix() const {
  Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
  m.topLeftCorner<3, 3>() = rotation_matrix();
  m.topRightCorner<3, 1>() = translation;
  return m;
}

Eigen::Matrix4d pose_to_matrix(const PoseSE3& pose) { return pose.matrix(); }

PoseSE3 matrix_to_pose(const Eigen::Matrix4d& m) {
  PoseSE3 p;
  p.rotation = so3_log(m.topLeftCorner<3, 3>());
  p.translation = m.topRightCorner<3, 1>();
  return p;
}

PoseSE3 invert(const PoseSE3& pose) {
  PoseSE3 inv;
  inv.rotation = -pose.rotation;
  inv.translation = -(so3_exp(inv.rotation) * pose.translation);
  return inv;
}

PoseSE3 compose(const PoseSE3& a, const PoseSE3& b) { return matrix_to_pose(a.matrix() * b.matrix()); }

DepthMap::DepthMap(int width, int height)
    : width_(width),
      height_(height),
      depth_(static_cast<std::size_t>(width) * height, 0.0),
      valid_(static_cast<std::size_t>(width) * height, 0) {
  if (width <= 0 || height <= 0) fail(ErrorKind::kData, "depth map: size must be positive");
}

DepthMap::DepthMap(int width, int height, std::vector<double> depth) : DepthMap(width, height) {
  if (depth.size() != depth_.size()) {
    fail(ErrorKind::kData, "depth map: expected " + std::to_string(depth_.size()) + " values, got " +
                               std::to_string(depth.size()));
  }
  for (std::size_t i = 0; i < depth.size(); ++i) set(i, depth[i]);
}

void DepthMap::set(std::size_t i, double d) {
  depth_[i] = d;
  valid_[i] = (std::isfinite(d) && d > 0.0) ? 1 : 0;
}

std::size_t DepthMap::valid_count() const { return static_cast<std::size_t>(std::count(valid_.begin(), valid_.end(), 1)); }

Image::Image(int width, int height, int channels, double fill)
    : width_(width), height_(height), channels_(channels) {
  if (width <= 0 || height <= 0) fail(ErrorKind::kData, "image: size must be positive");
  if (channels != 1 && channels != 3) fail(ErrorKind::kData, "image: channels must be 1 or 3");
  values_.assign(static_cast<std::size_t>(width) * height * channels, std::clamp(fill, 0.0, 1.0));
}

void Image::set(int x, int y, int c, double value) {
  values_[offset(c) + static_cast<std::size_t>(y) * width_ + x] = std::isfinite(value) ? std::clamp(value, 0.0, 1.0) : 0.0;
}

std::size_t WarpField::valid_count() const { return static_cast<std::size_t>(std::count(valid.begin(), valid.end(), 1)); }

WarpField warp_coords(const DepthMap& target_depth, const PoseSE3& target_to_source, const Intrinsics& k) {
  if (target_depth.width() != k.width || target_depth.height() != k.height) {
    fail(ErrorKind::kData, "warp_coords: depth map is " + std::to_string(target_depth.width()) + "x" +
                               std::to_string(target_depth.height()) + " but intrinsics are " +
                               std::to_string(k.width) + "x" + std::to_string(k.height));
  }
  const Eigen::Matrix3d r = target_to_source.rotation_matrix();
  const Eigen::Vector3d& t = target_to_source.translation;
  WarpField f;
  f.width = k.width;
  f.height = k.height;
  const std::size_t n = target_depth.size();
  f.u.assign(n, 0.0);
  f.v.assign(n, 0.0);
  f.z.assign(n, 0.0);
  f.valid.assign(n, 0);
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const std::size_t i = target_depth.index(x, y);
      if (!target_depth.valid(i)) continue;
      const Eigen::Vector3d p = r * (k.back_project(x, y) * target_depth.at(i)) + t;
      f.z[i] = p.z();
      if (!(p.z() > kMinProjectedDepth)) continue;
      double u = k.fx * p.x() / p.z() + k.cx;
      double v = k.fy * p.y() / p.z() + k.cy;
      // Round-off at the border should not invalidate a pixel that maps onto itself.
      const double xmax = k.width - 1;
      const double ymax = k.height - 1;
      if (u < 0.0 && u > -kBorderSlack) u = 0.0;
      if (v < 0.0 && v > -kBorderSlack) v = 0.0;
      if (u > xmax && u < xmax + kBorderSlack) u = xmax;
      if (v > ymax && v < ymax + kBorderSlack) v = ymax;
      f.u[i] = u;
      f.v[i] = v;
      f.valid[i] = (u >= 0.0 && v >= 0.0 && u <= xmax && v <= ymax) ? 1 : 0;
    }
  }
  return f;
}

Samples bilinear_sample(std::span<const double> grid, int width, int height, std::span<const double> u,
                        std::span<const double> v) {
  if (grid.size() != static_cast<std::size_t>(width) * height || u.size() != v.size()) {
    fail(ErrorKind::kData, "bilinear_sample: grid or coordinate sizes disagree");
  }
  Samples s;
  s.values.assign(u.size(), 0.0);
  s.valid.assign(u.size(), 0);
  diffnum::BilinearStencil st;
  for (std::size_t i = 0; i < u.size(); ++i) {
    if (!diffnum::bilinear_stencil(u[i], v[i], height, width, st)) continue;
    s.values[i] = st.w00() * grid[st.y0 * width + st.x0] + st.w01() * grid[st.y0 * width + st.x1] +
                  st.w10() * grid[st.y1 * width + st.x0] + st.w11() * grid[st.y1 * width + st.x1];
    s.valid[i] = 1;
  }
  return s;
}

WarpedImage bilinear_sample(const Image& img, const WarpField& coords) {
  WarpedImage out{Image(coords.width, coords.height, img.channels()), coords.valid};
  for (int c = 0; c < img.channels(); ++c) {
    Samples s = bilinear_sample(img.channel(c), img.width(), img.height(), coords.u, coords.v);
    auto dst = out.image.channel(c);
    for (std::size_t i = 0; i < s.values.size(); ++i) {
      if (!out.valid[i] || !s.valid[i]) {
        out.valid[i] = 0;
        continue;
      }
      dst[i] = std::clamp(s.values[i], 0.0, 1.0);
    }
  }
  for (int c = 0; c < img.channels(); ++c) {
    auto dst = out.image.channel(c);
    for (std::size_t i = 0; i < dst.size(); ++i)
      if (!out.valid[i]) dst[i] = 0.0;
  }
  return out;
}

DepthMap bilinear_sample(const DepthMap& depth, const WarpField& coords) {
  DepthMap out(coords.width, coords.height);
  diffnum::BilinearStencil st;
  const auto h = static_cast<std::size_t>(depth.height());
  const auto w = static_cast<std::size_t>(depth.width());
  for (std::size_t i = 0; i < coords.u.size(); ++i) {
    if (!coords.valid[i] || !diffnum::bilinear_stencil(coords.u[i], coords.v[i], h, w, st)) continue;
    const std::size_t idx[4] = {st.y0 * w + st.x0, st.y0 * w + st.x1, st.y1 * w + st.x0, st.y1 * w + st.x1};
    const double wt[4] = {st.w00(), st.w01(), st.w10(), st.w11()};
    double acc = 0.0;
    bool ok = true;
    for (int j = 0; j < 4; ++j) {
      if (wt[j] == 0.0) continue;
      if (!depth.valid(idx[j])) {
        ok = false;
        break;
      }
      acc += wt[j] * depth.at(idx[j]);
    }
    if (ok) out.set(i, acc);
  }
  return out;
}

WarpedImage warp_image(const Image& src, const DepthMap& target_depth, const PoseSE3& target_to_source,
                       const Intrinsics& k) {
  return bilinear_sample(src, warp_coords(target_depth, target_to_source, k));
}

WarpedDepth warp_depth(const DepthMap& source_depth, const DepthMap& target_depth, const PoseSE3& target_to_source,
                       const Intrinsics& k) {
  const WarpField f = warp_coords(target_depth, target_to_source, k);
  WarpedDepth out{bilinear_sample(source_depth, f), DepthMap(f.width, f.height)};
  for (std::size_t i = 0; i < f.z.size(); ++i) {
    if (f.valid[i]) out.transformed.set(i, f.z[i]);
  }
  return out;
}

}  // namespace endorecon
