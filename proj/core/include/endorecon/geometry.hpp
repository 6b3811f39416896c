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
#include <Eigen/Geometry>
#include <cstddef>
#include <span>
#include <vector>

namespace endorecon {

/// Pinhole camera. Pixel centres sit on integer coordinates (u, v).
struct Intrinsics {
  double fx = 1.0;
  double fy = 1.0;
  double cx = 0.0;
  double cy = 0.0;
  int width = 1;
  int height = 1;

  /// Throws Error(kData) when focal lengths or the principal point are out of range.
  void validate() const;
  Eigen::Matrix3d matrix() const;
  /// Ray direction (z = 1) through pixel (u, v).
  Eigen::Vector3d back_project(double u, double v) const {
    return {(u - cx) / fx, (v - cy) / fy, 1.0};
  }
};

/// Rigid motion stored as axis-angle rotation (radians * axis) and translation (mm).
/// Applied to a point as R * x + t.
struct PoseSE3 {
  Eigen::Vector3d rotation = Eigen::Vector3d::Zero();
  Eigen::Vector3d translation = Eigen::Vector3d::Zero();

  static PoseSE3 identity() { return {}; }
  Eigen::Matrix3d rotation_matrix() const;
  Eigen::Matrix4d matrix() const;
  Eigen::Vector3d apply(const Eigen::Vector3d& x) const { return rotation_matrix() * x + translation; }
};

Eigen::Matrix3d so3_exp(const Eigen::Vector3d& r);
/// Inverse of so3_exp; result has norm in [0, pi].
Eigen::Vector3d so3_log(const Eigen::Matrix3d& rotation);

Eigen::Matrix4d pose_to_matrix(const PoseSE3& pose);
PoseSE3 matrix_to_pose(const Eigen::Matrix4d& m);
PoseSE3 invert(const PoseSE3& pose);
/// a * b: applies b first, then a.
PoseSE3 compose(const PoseSE3& a, const PoseSE3& b);

/// Per-pixel depth in millimetres with a validity mask. Row-major.
class DepthMap {
 public:
  DepthMap() = default;
  DepthMap(int width, int height);
  /// Pixels that are non-positive or non-finite start out invalid.
  DepthMap(int width, int height, std::vector<double> depth);

  int width() const { return width_; }
  int height() const { return height_; }
  std::size_t size() const { return depth_.size(); }
  std::size_t index(int x, int y) const { return static_cast<std::size_t>(y) * width_ + x; }

  double at(int x, int y) const { return depth_[index(x, y)]; }
  bool valid(int x, int y) const { return valid_[index(x, y)] != 0; }
  double at(std::size_t i) const { return depth_[i]; }
  bool valid(std::size_t i) const { return valid_[i] != 0; }

  /// Stores `d`; the pixel is valid iff d is finite and positive.
  void set(int x, int y, double d) { set(index(x, y), d); }
  void set(std::size_t i, double d);
  void invalidate(std::size_t i) { valid_[i] = 0; }

  std::span<const double> depth() const { return depth_; }
  std::span<const unsigned char> mask() const { return valid_; }
  std::size_t valid_count() const;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<double> depth_;
  std::vector<unsigned char> valid_;
};

/// Planar image with 1 or 3 channels, intensities in [0, 1].
class Image {
 public:
  Image() = default;
  Image(int width, int height, int channels, double fill = 0.0);

  int width() const { return width_; }
  int height() const { return height_; }
  int channels() const { return channels_; }
  std::size_t pixels() const { return static_cast<std::size_t>(width_) * height_; }

  double at(int x, int y, int c = 0) const { return values_[offset(c) + static_cast<std::size_t>(y) * width_ + x]; }
  /// Writes a value clamped to [0, 1].
  void set(int x, int y, int c, double value);
  std::span<const double> channel(int c) const { return {values_.data() + offset(c), pixels()}; }
  std::span<double> channel(int c) { return {values_.data() + offset(c), pixels()}; }
  std::span<const double> values() const { return values_; }

 private:
  std::size_t offset(int c) const { return static_cast<std::size_t>(c) * pixels(); }

  int width_ = 0;
  int height_ = 0;
  int channels_ = 0;
  std::vector<double> values_;
};

/// Source-view coordinates for every target pixel.
struct WarpField {
  int width = 0;
  int height = 0;
  std::vector<double> u;
  std::vector<double> v;
  /// Depth of the back-projected target point expressed in the source camera.
  std::vector<double> z;
  std::vector<unsigned char> valid;

  std::size_t valid_count() const;
};

/// Smallest camera depth (mm) accepted in front of a camera.
inline constexpr double kMinProjectedDepth = 1e-6;

/// Back-projects each valid target pixel by its depth, applies
/// `target_to_source` and re-projects with `k`. Pixels landing behind the camera
/// or outside the image are invalid.
WarpField warp_coords(const DepthMap& target_depth, const PoseSE3& target_to_source, const Intrinsics& k);

/// Samples a single-channel grid at arbitrary coordinates. Samples off the
/// grid come back as invalid (valid[i] == 0, value 0).
struct Samples {
  std::vector<double> values;
  std::vector<unsigned char> valid;
};
Samples bilinear_sample(std::span<const double> grid, int width, int height, std::span<const double> u,
                        std::span<const double> v);

struct WarpedImage {
  Image image;
  std::vector<unsigned char> valid;
};

/// Resamples every channel of `img` at the field's coordinates.
WarpedImage bilinear_sample(const Image& img, const WarpField& coords);
/// Resamples a depth map; samples touching an invalid pixel with non-zero weight are invalid.
DepthMap bilinear_sample(const DepthMap& depth, const WarpField& coords);

/// Source image resampled into the target view.
WarpedImage warp_image(const Image& src, const DepthMap& target_depth, const PoseSE3& target_to_source,
                       const Intrinsics& k);

struct WarpedDepth {
  /// Source depth resampled into the target view.
  DepthMap sampled;
  /// Target depth transformed into the source camera.
  DepthMap transformed;
};

WarpedDepth warp_depth(const DepthMap& source_depth, const DepthMap& target_depth, const PoseSE3& target_to_source,
                       const Intrinsics& k);

}  // namespace endorecon
