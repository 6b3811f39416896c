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

#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <random>

#include "endorecon/error.hpp"
#include "endorecon/geometry.hpp"
#include "endorecon/synth.hpp"

namespace er = endorecon;
using er::DepthMap;
using er::Intrinsics;
using er::PoseSE3;

namespace {

Intrinsics camera(int w, int h, double f) {
  Intrinsics k;
  k.width = w;
  k.height = h;
  k.fx = k.fy = f;
  k.cx = 0.5 * (w - 1);
  k.cy = 0.5 * (h - 1);
  return k;
}

DepthMap constant_depth(int w, int h, double d) {
  return DepthMap(w, h, std::vector<double>(static_cast<std::size_t>(w) * h, d));
}

PoseSE3 random_pose(std::mt19937_64& rng, double rot_scale, double trans_scale) {
  std::normal_distribution<double> g(0.0, 1.0);
  PoseSE3 p;
  p.rotation = rot_scale * Eigen::Vector3d(g(rng), g(rng), g(rng));
  p.translation = trans_scale * Eigen::Vector3d(g(rng), g(rng), g(rng));
  return p;
}

PoseSE3 relative(const PoseSE3& target_to_world, const PoseSE3& source_to_world) {
  return er::compose(er::invert(source_to_world), target_to_world);
}

}  // namespace

TEST(PoseToMatrix, ZeroPoseIsIdentity) {
  EXPECT_TRUE(er::pose_to_matrix(PoseSE3::identity()).isApprox(Eigen::Matrix4d::Identity(), 0.0));
}

TEST(PoseToMatrix, QuarterTurnAboutZ) {
  PoseSE3 p;
  p.rotation = Eigen::Vector3d(0.0, 0.0, std::numbers::pi / 2);
  const Eigen::Matrix4d m = er::pose_to_matrix(p);
  const Eigen::Vector3d y = m.topLeftCorner<3, 3>() * Eigen::Vector3d::UnitX();
  EXPECT_NEAR(y.x(), 0.0, 1e-15);
  EXPECT_NEAR(y.y(), 1.0, 1e-15);
  EXPECT_NEAR(y.z(), 0.0, 1e-15);
  EXPECT_TRUE(m.row(3).isApprox(Eigen::RowVector4d(0, 0, 0, 1)));
}

TEST(PoseToMatrix, InverseComposesToIdentity) {
  std::mt19937_64 rng(3);
  for (int i = 0; i < 50; ++i) {
    const PoseSE3 p = random_pose(rng, 0.8, 20.0);
    const Eigen::Matrix4d prod = er::pose_to_matrix(p) * er::pose_to_matrix(er::invert(p));
    EXPECT_LT((prod - Eigen::Matrix4d::Identity()).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(PoseToMatrix, MatrixRoundTrip) {
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> angle(0.0, std::numbers::pi - 1e-3);
  std::normal_distribution<double> g(0.0, 1.0);
  for (int i = 0; i < 200; ++i) {
    PoseSE3 p;
    p.rotation = Eigen::Vector3d(g(rng), g(rng), g(rng)).normalized() * angle(rng);
    p.translation = 10.0 * Eigen::Vector3d(g(rng), g(rng), g(rng));
    const PoseSE3 q = er::matrix_to_pose(er::pose_to_matrix(p));
    EXPECT_LT((q.rotation - p.rotation).norm(), 1e-10);
    EXPECT_LT((q.translation - p.translation).norm(), 1e-10);
  }
}

TEST(PoseToMatrix, MatrixIsOrthonormal) {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 20; ++i) {
    const Eigen::Matrix3d r = random_pose(rng, 1.0, 1.0).rotation_matrix();
    EXPECT_LT((r.transpose() * r - Eigen::Matrix3d::Identity()).norm(), 1e-13);
    EXPECT_NEAR(r.determinant(), 1.0, 1e-13);
  }
}

TEST(WarpCoords, IdentityPoseKeepsPixels) {
  const Intrinsics k = camera(12, 9, 10.0);
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> d(50.0, 150.0);
  std::vector<double> vals(12 * 9);
  for (double& v : vals) v = d(rng);
  const er::WarpField f = er::warp_coords(DepthMap(12, 9, vals), PoseSE3::identity(), k);
  for (int y = 0; y < 9; ++y) {
    for (int x = 0; x < 12; ++x) {
      const std::size_t i = static_cast<std::size_t>(y) * 12 + x;
      ASSERT_TRUE(f.valid[i]);
      EXPECT_NEAR(f.u[i], x, 1e-12);
      EXPECT_NEAR(f.v[i], y, 1e-12);
    }
  }
}

TEST(WarpCoords, OpticalAxisIsFixedUnderForwardTranslation) {
  const Intrinsics k = camera(201, 101, 100.0);
  PoseSE3 p;
  p.translation = Eigen::Vector3d(0.0, 0.0, 10.0);
  const er::WarpField f = er::warp_coords(constant_depth(201, 101, 100.0), p, k);
  const std::size_t c = static_cast<std::size_t>(50) * 201 + 100;
  EXPECT_DOUBLE_EQ(f.u[c], k.cx);
  EXPECT_DOUBLE_EQ(f.v[c], k.cy);
}

TEST(WarpCoords, PinholeOffsetOracle) {
  const Intrinsics k = camera(201, 101, 100.0);
  PoseSE3 p;
  p.translation = Eigen::Vector3d(0.0, 0.0, 10.0);
  const er::WarpField f = er::warp_coords(constant_depth(201, 101, 100.0), p, k);
  // Pixel 50 px right of the axis: X = 50 * 100 / fx = 50 mm at depth 100, seen at depth 110.
  const double x_mm = 50.0 * 100.0 / k.fx;
  const double expected = k.fx * x_mm / 110.0;
  const std::size_t i = static_cast<std::size_t>(50) * 201 + 150;
  EXPECT_NEAR(f.u[i] - k.cx, expected, 1e-12);
  EXPECT_NEAR(expected, 45.4545, 1e-4);
}

TEST(WarpCoords, BehindCameraAndInvalidDepthAreInvalid) {
  const Intrinsics k = camera(5, 5, 5.0);
  PoseSE3 p;
  p.translation = Eigen::Vector3d(0.0, 0.0, -200.0);
  const er::WarpField f = er::warp_coords(constant_depth(5, 5, 100.0), p, k);
  EXPECT_EQ(f.valid_count(), 0u);

  std::vector<double> vals(25, 10.0);
  vals[3] = 0.0;
  vals[7] = -4.0;
  vals[9] = std::nan("");
  const er::WarpField g = er::warp_coords(DepthMap(5, 5, vals), PoseSE3::identity(), k);
  EXPECT_EQ(g.valid_count(), 22u);
  EXPECT_FALSE(g.valid[3]);
  EXPECT_FALSE(g.valid[7]);
  EXPECT_FALSE(g.valid[9]);
}

TEST(WarpCoords, SizeMismatchIsRejected) {
  try {
    er::warp_coords(constant_depth(4, 4, 1.0), PoseSE3::identity(), camera(5, 4, 4.0));
    FAIL() << "expected an error";
  } catch (const er::Error& e) {
    EXPECT_EQ(e.kind(), er::ErrorKind::kData);
  }
}

TEST(WarpCoords, ValidityIsMonotoneWhenImageShrinks) {
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 10; ++trial) {
    const PoseSE3 p = random_pose(rng, 0.05, 8.0);
    const Intrinsics big = camera(40, 30, 40.0);
    Intrinsics small = big;
    small.width = 30;
    small.height = 22;
    const er::WarpField fb = er::warp_coords(constant_depth(40, 30, 80.0), p, big);
    const er::WarpField fs = er::warp_coords(constant_depth(30, 22, 80.0), p, small);
    for (int y = 0; y < 22; ++y) {
      for (int x = 0; x < 30; ++x) {
        if (fs.valid[static_cast<std::size_t>(y) * 30 + x]) {
          EXPECT_TRUE(fb.valid[static_cast<std::size_t>(y) * 40 + x]);
        }
      }
    }
  }
}

TEST(WarpCoords, RoundTripReturnsWithinHalfPixel) {
  const er::synth::Scene scene = er::synth::make_terrain_scene(4, 7, 64, 64);
  const auto target = er::synth::render_scene(scene, 0);
  const auto source = er::synth::render_scene(scene, 3);
  const PoseSE3 t2s = relative(target.pose, source.pose);
  const Intrinsics& k = scene.intrinsics;
  const er::WarpField fwd = er::warp_coords(target.depth, t2s, k);
  const DepthMap src_at = er::bilinear_sample(source.depth, fwd);
  const Eigen::Matrix3d r_back = er::invert(t2s).rotation_matrix();
  const Eigen::Vector3d t_back = er::invert(t2s).translation;
  std::size_t checked = 0;
  double worst = 0.0;
  for (int y = 2; y < k.height - 2; ++y) {
    for (int x = 2; x < k.width - 2; ++x) {
      const std::size_t i = target.depth.index(x, y);
      if (!fwd.valid[i] || !src_at.valid(i)) continue;
      const Eigen::Vector3d q = r_back * (k.back_project(fwd.u[i], fwd.v[i]) * src_at.at(i)) + t_back;
      const double du = k.fx * q.x() / q.z() + k.cx - x;
      const double dv = k.fy * q.y() / q.z() + k.cy - y;
      worst = std::max(worst, std::hypot(du, dv));
      ++checked;
    }
  }
  EXPECT_GT(checked, 1000u);
  EXPECT_LT(worst, 0.51);
}

TEST(BilinearSample, IntegerCoordinatesReturnNodes) {
  const std::vector<double> grid = {1, 2, 3, 4, 5, 6};
  const std::vector<double> u = {0, 1, 2, 0, 1, 2};
  const std::vector<double> v = {0, 0, 0, 1, 1, 1};
  const er::Samples s = er::bilinear_sample(grid, 3, 2, u, v);
  for (std::size_t i = 0; i < grid.size(); ++i) {
    ASSERT_TRUE(s.valid[i]);
    EXPECT_EQ(s.values[i], grid[i]);
  }
}

TEST(BilinearSample, MidpointOfRow) {
  const std::vector<double> grid = {0.0, 1.0};
  const std::vector<double> u = {0.5};
  const std::vector<double> v = {0.0};
  const er::Samples s = er::bilinear_sample(grid, 2, 1, u, v);
  ASSERT_TRUE(s.valid[0]);
  EXPECT_DOUBLE_EQ(s.values[0], 0.5);
}

TEST(BilinearSample, OutOfBoundsIsInvalid) {
  const std::vector<double> grid = {1, 2, 3, 4};
  const std::vector<double> u = {-1.0, 1.0001, 0.5};
  const std::vector<double> v = {-1.0, 0.0, 1.5};
  const er::Samples s = er::bilinear_sample(grid, 2, 2, u, v);
  EXPECT_FALSE(s.valid[0]);
  EXPECT_FALSE(s.valid[1]);
  EXPECT_FALSE(s.valid[2]);
}

TEST(BilinearSample, DepthIgnoresInvalidNeighbours) {
  std::vector<double> vals = {10, 20, 0, 40};
  const DepthMap d(2, 2, vals);
  er::WarpField f;
  f.width = 3;
  f.height = 1;
  f.u = {0.5, 0.5, 0.0};
  f.v = {0.0, 0.5, 1.0};
  f.z = {1, 1, 1};
  f.valid = {1, 1, 1};
  const DepthMap s = er::bilinear_sample(d, f);
  EXPECT_TRUE(s.valid(std::size_t{0}));
  EXPECT_DOUBLE_EQ(s.at(std::size_t{0}), 15.0);
  EXPECT_FALSE(s.valid(std::size_t{1}));
  EXPECT_FALSE(s.valid(std::size_t{2}));
}

TEST(WarpImage, IdentityReproducesSource) {
  const er::synth::Scene scene = er::synth::make_terrain_scene(1, 11, 32, 24);
  const auto frame = er::synth::render_scene(scene, 0);
  const er::WarpedImage w = er::warp_image(frame.image, frame.depth, PoseSE3::identity(), scene.intrinsics);
  std::size_t valid = 0;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < frame.image.pixels(); ++i) {
      if (!w.valid[i]) continue;
      ++valid;
      EXPECT_LT(std::abs(w.image.channel(c)[i] - frame.image.channel(c)[i]), 1e-12);
    }
  }
  EXPECT_EQ(valid, 3 * frame.depth.valid_count());
}

TEST(WarpImage, ConstantImageStaysConstant) {
  const Intrinsics k = camera(20, 16, 20.0);
  const er::Image src(20, 16, 3, 0.37);
  std::mt19937_64 rng(2);
  for (int trial = 0; trial < 5; ++trial) {
    const er::WarpedImage w = er::warp_image(src, constant_depth(20, 16, 50.0), random_pose(rng, 0.05, 3.0), k);
    for (int c = 0; c < 3; ++c) {
      for (std::size_t i = 0; i < w.valid.size(); ++i) {
        if (w.valid[i]) EXPECT_NEAR(w.image.channel(c)[i], 0.37, 1e-14);
      }
    }
  }
}

TEST(WarpImage, MatchesRenderedViewOfTexturedPlane) {
  er::synth::Scene scene = er::synth::make_plane_scene(2, 21, 64, 64, 100.0);
  scene.trajectory[1].translation = Eigen::Vector3d(3.0, -2.0, 4.0);
  const auto target = er::synth::render_scene(scene, 0);
  const auto source = er::synth::render_scene(scene, 1);
  const er::WarpedImage w =
      er::warp_image(source.image, target.depth, relative(target.pose, source.pose), scene.intrinsics);
  double sum = 0.0;
  std::size_t n = 0;
  for (int c = 0; c < 3; ++c) {
    for (std::size_t i = 0; i < w.valid.size(); ++i) {
      if (!w.valid[i]) continue;
      sum += std::abs(w.image.channel(c)[i] - target.image.channel(c)[i]);
      ++n;
    }
  }
  ASSERT_GT(n, 3u * 64 * 40);
  EXPECT_LT(sum / n, 2.0 / 255.0);
}

TEST(WarpDepth, IdentitySamplesSourceDepth) {
  const er::synth::Scene scene = er::synth::make_sphere_scene(1, 3, 24, 24);
  const auto f = er::synth::render_scene(scene, 0);
  const er::WarpedDepth w = er::warp_depth(f.depth, f.depth, PoseSE3::identity(), scene.intrinsics);
  for (std::size_t i = 0; i < f.depth.size(); ++i) {
    if (!w.sampled.valid(i)) continue;
    EXPECT_NEAR(w.sampled.at(i), f.depth.at(i), 1e-12);
    EXPECT_NEAR(w.transformed.at(i), f.depth.at(i), 1e-12);
  }
}

TEST(WarpDepth, CameraMovingTowardPlane) {
  const Intrinsics k = camera(31, 31, 30.0);
  PoseSE3 p;
  p.translation = Eigen::Vector3d(0.0, 0.0, -10.0);
  const DepthMap d = constant_depth(31, 31, 100.0);
  const er::WarpedDepth w = er::warp_depth(d, d, p, k);
  std::size_t n = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    if (!w.transformed.valid(i)) continue;
    EXPECT_NEAR(w.transformed.at(i), 90.0, 1e-12);
    ++n;
  }
  EXPECT_GT(n, 0u);
}

TEST(WarpDepth, InvalidSourcePixelsNeverContribute) {
  const Intrinsics k = camera(16, 16, 16.0);
  std::vector<double> src(256, 50.0);
  for (int x = 0; x < 16; ++x) src[static_cast<std::size_t>(7) * 16 + x] = 0.0;
  PoseSE3 p;
  p.translation = Eigen::Vector3d(0.3, 0.4, 0.0);
  const er::WarpedDepth w = er::warp_depth(DepthMap(16, 16, src), constant_depth(16, 16, 50.0), p, k);
  for (std::size_t i = 0; i < 256; ++i) {
    if (w.sampled.valid(i)) EXPECT_DOUBLE_EQ(w.sampled.at(i), 50.0);
  }
}
