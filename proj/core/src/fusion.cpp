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

#include "endorecon/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "endorecon/error.hpp"
#include "endorecon/io.hpp"

namespace endorecon::fusion {
namespace {

// Depth at (u, v) from the four surrounding pixels; false if any is invalid.
bool sample_depth(const DepthMap& d, double u, double v, double& out) {
  if (!(u >= 0.0 && v >= 0.0 && u <= d.width() - 1 && v <= d.height() - 1)) return false;
  const int x0 = std::min(static_cast<int>(u), d.width() - 2 < 0 ? 0 : d.width() - 2);
  const int y0 = std::min(static_cast<int>(v), d.height() - 2 < 0 ? 0 : d.height() - 2);
  const int x1 = std::min(x0 + 1, d.width() - 1);
  const int y1 = std::min(y0 + 1, d.height() - 1);
  if (!d.valid(x0, y0) || !d.valid(x1, y0) || !d.valid(x0, y1) || !d.valid(x1, y1)) return false;
  const double fx = u - x0;
  const double fy = v - y0;
  out = (1 - fx) * (1 - fy) * d.at(x0, y0) + fx * (1 - fy) * d.at(x1, y0) + (1 - fx) * fy * d.at(x0, y1) +
        fx * fy * d.at(x1, y1);
  return true;
}

Eigen::Vector3d sample_color(const Image& img, double u, double v) {
  const int x = std::clamp(static_cast<int>(std::lround(u)), 0, img.width() - 1);
  const int y = std::clamp(static_cast<int>(std::lround(v)), 0, img.height() - 1);
  if (img.channels() == 1) return Eigen::Vector3d::Constant(img.at(x, y, 0));
  return {img.at(x, y, 0), img.at(x, y, 1), img.at(x, y, 2)};
}

}  // namespace

Aabb observed_bounds(const std::vector<DepthMap>& depths, const std::vector<PoseSE3>& poses, const Intrinsics& k) {
  if (depths.size() != poses.size()) fail(ErrorKind::kData, "observed_bounds: one pose per depth map required");
  Aabb box;
  for (std::size_t f = 0; f < depths.size(); ++f) {
    const Eigen::Matrix3d r = poses[f].rotation_matrix();
    for (int y = 0; y < depths[f].height(); ++y) {
      for (int x = 0; x < depths[f].width(); ++x) {
        if (!depths[f].valid(x, y)) continue;
        box.extend(r * (depths[f].at(x, y) * k.back_project(x, y)) + poses[f].translation);
      }
    }
  }
  return box;
}

double default_voxel_size(const Aabb& box) {
  if (box.empty() || !(box.diagonal() > 0.0)) fail(ErrorKind::kData, "default_voxel_size: empty scene bounds");
  return box.diagonal() / 128.0;
}

TsdfVolume::TsdfVolume(const Eigen::Vector3d& origin, const Eigen::Vector3i& dims, double voxel_size,
                       double truncation)
    : origin_(origin), dims_(dims), voxel_size_(voxel_size), truncation_(truncation) {
  if (!(voxel_size > 0.0)) fail(ErrorKind::kConfig, "tsdf: voxel size must be positive");
  if (!(truncation >= voxel_size)) fail(ErrorKind::kConfig, "tsdf: truncation must be at least one voxel");
  if ((dims.array() <= 0).any()) fail(ErrorKind::kConfig, "tsdf: dimensions must be positive");
  const double count = static_cast<double>(dims.x()) * dims.y() * dims.z();
  if (count > 2.0e8) fail(ErrorKind::kConfig, "tsdf: volume too large; increase the voxel size");
  tsdf_.assign(static_cast<std::size_t>(count), 1.0);
  weight_.assign(static_cast<std::size_t>(count), 0.0);
}

TsdfVolume TsdfVolume::covering(const Aabb& box, double voxel_size, double truncation) {
  if (box.empty()) fail(ErrorKind::kData, "tsdf: empty bounds");
  if (truncation <= 0.0) truncation = 3.0 * voxel_size;
  const Eigen::Vector3d lo = box.min.array() - truncation;
  const Eigen::Vector3d hi = box.max.array() + truncation;
  const Eigen::Vector3d span = (hi - lo) / voxel_size;
  const Eigen::Vector3i dims(static_cast<int>(std::ceil(span.x())) + 1, static_cast<int>(std::ceil(span.y())) + 1,
                             static_cast<int>(std::ceil(span.z())) + 1);
  return TsdfVolume(lo, dims, voxel_size, truncation);
}

Aabb TsdfVolume::bounds() const {
  Aabb b;
  b.extend(origin_);
  b.extend(voxel_center(dims_.x() - 1, dims_.y() - 1, dims_.z() - 1));
  return b;
}

std::size_t TsdfVolume::observed_voxels() const {
  return static_cast<std::size_t>(std::count_if(weight_.begin(), weight_.end(), [](double w) { return w > 0.0; }));
}

void TsdfVolume::integrate(const DepthMap& depth, const PoseSE3& camera_to_world, const Intrinsics& k,
                           const Image* color) {
  if (depth.width() != k.width || depth.height() != k.height) {
    fail(ErrorKind::kData, "tsdf: depth size disagrees with the intrinsics");
  }
  if (color && (color->width() != k.width || color->height() != k.height)) {
    fail(ErrorKind::kData, "tsdf: colour image size disagrees with the intrinsics");
  }
  if (color && color_.empty()) color_.assign(tsdf_.size(), Eigen::Vector3d::Zero());
  const Eigen::Matrix3d rt = camera_to_world.rotation_matrix().transpose();
  const Eigen::Vector3d tw = camera_to_world.translation;
  for (int kz = 0; kz < dims_.z(); ++kz) {
    for (int jy = 0; jy < dims_.y(); ++jy) {
      for (int ix = 0; ix < dims_.x(); ++ix) {
        const Eigen::Vector3d pc = rt * (voxel_center(ix, jy, kz) - tw);
        if (pc.z() <= 0.0) continue;
        const double u = k.fx * pc.x() / pc.z() + k.cx;
        const double v = k.fy * pc.y() / pc.z() + k.cy;
        double d = 0.0;
        if (!sample_depth(depth, u, v, d)) continue;
        const double sdf = d - pc.z();
        if (sdf < -truncation_) continue;
        const double value = std::min(1.0, sdf / truncation_);
        const std::size_t f = flat(ix, jy, kz);
        const double w = weight_[f];
        tsdf_[f] = (tsdf_[f] * w + value) / (w + 1.0);
        if (color) color_[f] = (color_[f] * w + sample_color(*color, u, v)) / (w + 1.0);
        weight_[f] = w + 1.0;
      }
    }
  }
}

PointCloud TsdfVolume::extract_surface() const {
  PointCloud cloud;
  const bool colored = !color_.empty();
  const int steps[3][3] = {{1, 0, 0}, {0, 1, 0}, {0, 0, 1}};
  for (int kz = 0; kz < dims_.z(); ++kz) {
    for (int jy = 0; jy < dims_.y(); ++jy) {
      for (int ix = 0; ix < dims_.x(); ++ix) {
        const std::size_t a = flat(ix, jy, kz);
        if (weight_[a] <= 0.0) continue;
        const double ta = tsdf_[a];
        for (const auto& s : steps) {
          const int i2 = ix + s[0];
          const int j2 = jy + s[1];
          const int k2 = kz + s[2];
          if (i2 >= dims_.x() || j2 >= dims_.y() || k2 >= dims_.z()) continue;
          const std::size_t b = flat(i2, j2, k2);
          if (weight_[b] <= 0.0) continue;
          const double tb = tsdf_[b];
          // A clamped end means the pair straddles the truncation band, not a surface.
          if (std::abs(ta) >= 1.0 || std::abs(tb) >= 1.0) continue;
          if ((ta < 0.0) == (tb < 0.0)) continue;
          const double f = ta / (ta - tb);
          cloud.points.push_back(voxel_center(ix, jy, kz) + f * voxel_size_ * Eigen::Vector3d(s[0], s[1], s[2]));
          if (colored) cloud.colors.push_back((1.0 - f) * color_[a] + f * color_[b]);
        }
      }
    }
  }
  return cloud;
}

std::string ply_string(const PointCloud& cloud) {
  if (cloud.has_colors() && cloud.colors.size() != cloud.points.size()) {
    fail(ErrorKind::kData, "ply: colour count does not match point count");
  }
  std::ostringstream os;
  os << "ply\nformat ascii 1.0\nelement vertex " << cloud.size() << "\nproperty double x\nproperty double y\n"
     << "property double z\n";
  if (cloud.has_colors()) os << "property uchar red\nproperty uchar green\nproperty uchar blue\n";
  os << "end_header\n";
  char buf[128];
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    const auto& p = cloud.points[i];
    int n = std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g", p.x(), p.y(), p.z());
    os.write(buf, n);
    if (cloud.has_colors()) {
      const auto& c = cloud.colors[i];
      auto to8 = [](double v) { return static_cast<int>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0)); };
      n = std::snprintf(buf, sizeof(buf), " %d %d %d", to8(c.x()), to8(c.y()), to8(c.z()));
      os.write(buf, n);
    }
    os << '\n';
  }
  return os.str();
}

void write_ply(const std::filesystem::path& path, const PointCloud& cloud) { io::atomic_write(path, ply_string(cloud)); }

PointCloud read_ply(const std::filesystem::path& path) {
  std::istringstream is(io::read_file(path));
  std::string line;
  std::getline(is, line);
  if (line != "ply") fail(ErrorKind::kData, "ply: missing magic in " + path.string());
  std::size_t count = 0;
  std::vector<std::string> props;
  bool header_done = false;
  while (std::getline(is, line)) {
    std::istringstream ls(line);
    std::string word;
    ls >> word;
    if (word == "format") {
      std::string fmt;
      ls >> fmt;
      if (fmt != "ascii") fail(ErrorKind::kData, "ply: only ASCII files are supported");
    } else if (word == "element") {
      std::string name;
      ls >> name >> count;
      if (name != "vertex") fail(ErrorKind::kData, "ply: unexpected element " + name);
    } else if (word == "property") {
      std::string type, name;
      ls >> type >> name;
      props.push_back(name);
    } else if (word == "end_header") {
      header_done = true;
      break;
    }
  }
  if (!header_done) fail(ErrorKind::kData, "ply: header not terminated");
  const auto find = [&](const std::string& n) {
    const auto it = std::find(props.begin(), props.end(), n);
    return it == props.end() ? -1 : static_cast<int>(it - props.begin());
  };
  const int ix = find("x"), iy = find("y"), iz = find("z"), ir = find("red"), ig = find("green"), ib = find("blue");
  if (ix < 0 || iy < 0 || iz < 0) fail(ErrorKind::kData, "ply: missing coordinate properties");
  const bool colored = ir >= 0 && ig >= 0 && ib >= 0;
  PointCloud cloud;
  std::vector<double> row(props.size());
  for (std::size_t n = 0; n < count; ++n) {
    for (double& v : row) {
      if (!(is >> v)) fail(ErrorKind::kData, "ply: truncated vertex list");
    }
    cloud.points.emplace_back(row[ix], row[iy], row[iz]);
    if (colored) cloud.colors.emplace_back(row[ir] / 255.0, row[ig] / 255.0, row[ib] / 255.0);
  }
  return cloud;
}

}  // namespace endorecon::fusion
