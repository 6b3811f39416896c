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

#include <Eigen/Core>
#include <filesystem>
#include <limits>
#include <string>
#include <vector>

#include "endorecon/geometry.hpp"

namespace endorecon::fusion {

struct PointCloud {
  std::vector<Eigen::Vector3d> points;
  /// Either empty or one RGB triple in [0, 1] per point.
  std::vector<Eigen::Vector3d> colors;

  std::size_t size() const { return points.size(); }
  bool empty() const { return points.empty(); }
  bool has_colors() const { return !colors.empty(); }
};

struct Aabb {
  Eigen::Vector3d min = Eigen::Vector3d::Constant(std::numeric_limits<double>::infinity());
  Eigen::Vector3d max = Eigen::Vector3d::Constant(-std::numeric_limits<double>::infinity());

  void extend(const Eigen::Vector3d& p) {
    min = min.cwiseMin(p);
    max = max.cwiseMax(p);
  }
  bool empty() const { return !(min.array() <= max.array()).all(); }
  double diagonal() const { return empty() ? 0.0 : (max - min).norm(); }
  bool contains(const Eigen::Vector3d& p, double slack = 0.0) const {
    return (p.array() >= min.array() - slack).all() && (p.array() <= max.array() + slack).all();
  }
};

/// Bounding box of every valid back-projected pixel; poses are camera-to-world.
Aabb observed_bounds(const std::vector<DepthMap>& depths, const std::vector<PoseSE3>& poses, const Intrinsics& k);

/// Diagonal / 128.
double default_voxel_size(const Aabb& box);

class TsdfVolume {
 public:
  /// Voxel (i, j, k) is centred at origin + voxel_size * (i, j, k).
  TsdfVolume(const Eigen::Vector3d& origin, const Eigen::Vector3i& dims, double voxel_size, double truncation);

  /// Volume covering `box` plus a margin of one truncation band. A truncation
  /// of 0 means 3 * voxel_size.
  static TsdfVolume covering(const Aabb& box, double voxel_size, double truncation = 0.0);

  /// Weighted-average update with unit weight per frame. Voxels whose
  /// projective signed distance is below -truncation are left alone.
  void integrate(const DepthMap& depth, const PoseSE3& camera_to_world, const Intrinsics& k,
                 const Image* color = nullptr);

  /// Zero crossings along grid edges between observed voxels of opposite sign.
  PointCloud extract_surface() const;

  double voxel_size() const { return voxel_size_; }
  double truncation() const { return truncation_; }
  const Eigen::Vector3d& origin() const { return origin_; }
  const Eigen::Vector3i& dims() const { return dims_; }
  Aabb bounds() const;
  Eigen::Vector3d voxel_center(int i, int j, int k) const { return origin_ + voxel_size_ * Eigen::Vector3d(i, j, k); }
  double tsdf(int i, int j, int k) const { return tsdf_[flat(i, j, k)]; }
  double weight(int i, int j, int k) const { return weight_[flat(i, j, k)]; }
  std::size_t observed_voxels() const;

 private:
  std::size_t flat(int i, int j, int k) const {
    return (static_cast<std::size_t>(k) * dims_.y() + j) * dims_.x() + i;
  }

  Eigen::Vector3d origin_;
  Eigen::Vector3i dims_;
  double voxel_size_;
  double truncation_;
  std::vector<double> tsdf_;
  std::vector<double> weight_;
  std::vector<Eigen::Vector3d> color_;
};

/// ASCII PLY with xyz (and rgb when present), fixed 9-significant-digit formatting.
std::string ply_string(const PointCloud& cloud);
void write_ply(const std::filesystem::path& path, const PointCloud& cloud);
PointCloud read_ply(const std::filesystem::path& path);

}  // namespace endorecon::fusion
