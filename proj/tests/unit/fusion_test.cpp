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

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "endorecon/error.hpp"
#include "endorecon/fusion.hpp"
#include "endorecon/synth.hpp"

namespace er = endorecon;
namespace fu = endorecon::fusion;

namespace {

er::Intrinsics centred_camera(int size) {
  er::Intrinsics k;
  k.width = k.height = size;
  k.fx = k.fy = size;
  k.cx = k.cy = 0.5 * (size - 1);
  return k;
}

er::DepthMap constant_depth(int size, double d) {
  return er::DepthMap(size, size, std::vector<double>(static_cast<std::size_t>(size) * size, d));
}

std::vector<double> sorted_radius_errors(const fu::PointCloud& c, const Eigen::Vector3d& centre, double radius) {
  std::vector<double> e;
  for (const auto& p : c.points) e.push_back(std::abs((p - centre).norm() - radius));
  std::sort(e.begin(), e.end());
  return e;
}

}  // namespace

TEST(Tsdf, SignedDistanceOnViewingRay) {
  // Voxel column along the optical axis, 1 mm voxels, truncation 10 mm.
  fu::TsdfVolume vol(Eigen::Vector3d(0, 0, 80), Eigen::Vector3i(1, 1, 41), 1.0, 10.0);
  vol.integrate(constant_depth(33, 100.0), er::PoseSE3::identity(), centred_camera(33));
  EXPECT_DOUBLE_EQ(vol.tsdf(0, 0, 15), 0.5);   // z = 95
  EXPECT_DOUBLE_EQ(vol.tsdf(0, 0, 23), -0.3);  // z = 103
  EXPECT_EQ(vol.tsdf(0, 0, 0), 1.0);           // z = 80, clamped
  EXPECT_EQ(vol.weight(0, 0, 30), 1.0);        // z = 110, at -truncation
  EXPECT_EQ(vol.weight(0, 0, 32), 0.0);        // z = 112, beyond the band
  EXPECT_EQ(vol.tsdf(0, 0, 32), 1.0);
}

TEST(Tsdf, SameFrameTwiceDoublesWeight) {
  const auto scene = er::synth::make_terrain_scene(1, 4, 32, 32);
  const auto f = er::synth::render_scene(scene, 0);
  fu::Aabb box = fu::observed_bounds({f.depth}, {f.pose}, scene.intrinsics);
  fu::TsdfVolume once = fu::TsdfVolume::covering(box, 2.0);
  fu::TsdfVolume twice = once;
  once.integrate(f.depth, f.pose, scene.intrinsics);
  twice.integrate(f.depth, f.pose, scene.intrinsics);
  twice.integrate(f.depth, f.pose, scene.intrinsics);
  const auto& d = once.dims();
  for (int k = 0; k < d.z(); ++k)
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i) {
        EXPECT_EQ(twice.tsdf(i, j, k), once.tsdf(i, j, k));
        EXPECT_EQ(twice.weight(i, j, k), 2.0 * once.weight(i, j, k));
      }
}

TEST(Tsdf, ConfigurationChecks) {
  EXPECT_THROW(fu::TsdfVolume(Eigen::Vector3d::Zero(), Eigen::Vector3i(2, 2, 2), 1.0, 0.5), er::Error);
  EXPECT_THROW(fu::TsdfVolume(Eigen::Vector3d::Zero(), Eigen::Vector3i(0, 2, 2), 1.0, 3.0), er::Error);
  EXPECT_THROW(fu::default_voxel_size(fu::Aabb{}), er::Error);
  fu::TsdfVolume v = fu::TsdfVolume::covering(fu::Aabb{Eigen::Vector3d::Zero(), Eigen::Vector3d::Ones()}, 0.5);
  EXPECT_DOUBLE_EQ(v.truncation(), 1.5);
}

TEST(Tsdf, EmptyVolumeGivesEmptyCloud) {
  fu::TsdfVolume vol(Eigen::Vector3d::Zero(), Eigen::Vector3i(4, 4, 4), 1.0, 3.0);
  EXPECT_TRUE(vol.extract_surface().empty());
  EXPECT_EQ(vol.observed_voxels(), 0u);
}

TEST(Tsdf, FusedPlaneLiesOnPlane) {
  const auto scene = er::synth::make_plane_scene(3, 2, 48, 48);
  std::vector<er::DepthMap> depths;
  std::vector<er::PoseSE3> poses;
  for (int i = 0; i < 3; ++i) {
    const auto f = er::synth::render_scene(scene, i);
    depths.push_back(f.depth);
    poses.push_back(f.pose);
  }
  const fu::Aabb box = fu::observed_bounds(depths, poses, scene.intrinsics);
  const double voxel = fu::default_voxel_size(box);
  fu::TsdfVolume vol = fu::TsdfVolume::covering(box, voxel);
  for (int i = 0; i < 3; ++i) vol.integrate(depths[i], poses[i], scene.intrinsics);
  const fu::PointCloud c = vol.extract_surface();
  ASSERT_GT(c.size(), 100u);
  std::size_t close = 0;
  for (const auto& p : c.points)
    if (std::abs(p.z() - 100.0) <= voxel) ++close;
  EXPECT_GE(static_cast<double>(close), 0.95 * static_cast<double>(c.size()));
}

TEST(Tsdf, UnitSphereFromTwentyViews) {
  const auto scene = er::synth::make_orbit_scene(20, 1);
  std::vector<er::DepthMap> depths;
  std::vector<er::PoseSE3> poses;
  for (int i = 0; i < 20; ++i) {
    const auto f = er::synth::render_scene(scene, i);
    depths.push_back(f.depth);
    poses.push_back(f.pose);
  }
  const fu::Aabb box = fu::observed_bounds(depths, poses, scene.intrinsics);
  const double voxel = fu::default_voxel_size(box);
  fu::TsdfVolume vol = fu::TsdfVolume::covering(box, voxel);
  for (int i = 0; i < 20; ++i) vol.integrate(depths[i], poses[i], scene.intrinsics);
  const fu::PointCloud c = vol.extract_surface();
  ASSERT_GT(c.size(), 1000u);
  const auto err = sorted_radius_errors(c, Eigen::Vector3d::Zero(), 1.0);
  EXPECT_LT(err[err.size() / 2], voxel);
  const fu::Aabb vb = vol.bounds();
  for (const auto& p : c.points) EXPECT_TRUE(vb.contains(p, 1e-9));
}

TEST(Tsdf, IntegrationOrderIndependent) {
  const auto scene = er::synth::make_orbit_scene(5, 3, 32, 32);
  std::vector<er::synth::RenderedFrame> frames;
  for (int i = 0; i < 5; ++i) frames.push_back(er::synth::render_scene(scene, i));
  const fu::Aabb box{Eigen::Vector3d::Constant(-1.2), Eigen::Vector3d::Constant(1.2)};
  fu::TsdfVolume a = fu::TsdfVolume::covering(box, 0.08);
  fu::TsdfVolume b = a;
  for (int i = 0; i < 5; ++i) a.integrate(frames[i].depth, frames[i].pose, scene.intrinsics);
  for (int i : {3, 0, 4, 2, 1}) b.integrate(frames[i].depth, frames[i].pose, scene.intrinsics);
  const auto& d = a.dims();
  double worst = 0.0;
  for (int k = 0; k < d.z(); ++k)
    for (int j = 0; j < d.y(); ++j)
      for (int i = 0; i < d.x(); ++i) {
        worst = std::max(worst, std::abs(a.tsdf(i, j, k) - b.tsdf(i, j, k)));
        EXPECT_EQ(a.weight(i, j, k), b.weight(i, j, k));
      }
  EXPECT_LT(worst, 1e-9);
}

TEST(Ply, RoundTripAndStableText) {
  fu::PointCloud c;
  c.points = {{1.5, -2.25, 100.125}, {0.1, 0.2, 0.3}};
  c.colors = {{1.0, 0.0, 0.5}, {0.2, 0.4, 0.6}};
  const std::string text = fu::ply_string(c);
  EXPECT_EQ(text, fu::ply_string(c));
  EXPECT_NE(text.find("element vertex 2\n"), std::string::npos);
  const auto path = std::filesystem::temp_directory_path() / "endorecon_fusion_test.ply";
  fu::write_ply(path, c);
  const fu::PointCloud back = fu::read_ply(path);
  ASSERT_EQ(back.size(), 2u);
  ASSERT_TRUE(back.has_colors());
  EXPECT_EQ(back.points[0], c.points[0]);
  EXPECT_NEAR(back.points[1].y(), 0.2, 1e-9);
  EXPECT_NEAR(back.colors[0].z(), 128.0 / 255.0, 1e-12);
  std::filesystem::remove(path);
}

TEST(Ply, ColouredFusionCarriesColour) {
  const auto scene = er::synth::make_plane_scene(1, 5, 24, 24);
  const auto f = er::synth::render_scene(scene, 0);
  fu::TsdfVolume vol = fu::TsdfVolume::covering(fu::observed_bounds({f.depth}, {f.pose}, scene.intrinsics), 1.0);
  vol.integrate(f.depth, f.pose, scene.intrinsics, &f.image);
  const fu::PointCloud c = vol.extract_surface();
  ASSERT_FALSE(c.empty());
  EXPECT_EQ(c.colors.size(), c.points.size());
  for (const auto& col : c.colors) EXPECT_TRUE((col.array() >= 0.0).all() && (col.array() <= 1.0).all());
}
