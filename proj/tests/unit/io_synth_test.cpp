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
#include <fstream>

#include "endorecon/error.hpp"
#include "endorecon/io.hpp"
#include "endorecon/synth.hpp"

namespace er = endorecon;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "endorecon_io_test";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST(Io, PngRoundTripWithinQuantisation) {
  const auto frame = er::synth::render_scene(er::synth::make_terrain_scene(1, 3, 20, 14), 0);
  const fs::path p = scratch("rgb.png");
  er::io::write_png_rgb(p, frame.image);
  const er::Image back = er::io::read_png_rgb(p);
  ASSERT_EQ(back.width(), 20);
  ASSERT_EQ(back.height(), 14);
  for (int c = 0; c < 3; ++c)
    for (int y = 0; y < 14; ++y)
      for (int x = 0; x < 20; ++x) EXPECT_NEAR(back.at(x, y, c), frame.image.at(x, y, c), 0.5 / 255.0 + 1e-12);
}

TEST(Io, DepthPngKeepsInvalidPixels) {
  er::DepthMap d(5, 4);
  d.set(0, 0, 12.345);
  d.set(3, 2, 250.0);
  const fs::path p = scratch("depth.png");
  er::io::write_depth_png(p, d);
  EXPECT_TRUE(fs::exists(p.string() + ".json"));
  const er::DepthMap back = er::io::read_depth(p);
  EXPECT_NEAR(back.at(0, 0), 12.35, 1e-9);
  EXPECT_NEAR(back.at(3, 2), 250.0, 1e-9);
  EXPECT_FALSE(back.valid(1, 1));
  EXPECT_EQ(back.valid_count(), 2u);
}

TEST(Io, DepthPngRejectsOutOfRange) {
  er::DepthMap d(2, 2);
  d.set(0, 0, 1000.0);
  EXPECT_THROW(er::io::write_depth_png(scratch("big.png"), d), er::Error);
}

TEST(Io, PfmRoundTripIsFloatExact) {
  er::DepthMap d(3, 2);
  d.set(0, 0, 1.25);
  d.set(2, 1, 99.5);
  d.set(1, 0, 0.1);
  const fs::path p = scratch("depth.pfm");
  er::io::write_depth(p, d);
  const er::DepthMap back = er::io::read_depth(p);
  EXPECT_EQ(back.at(0, 0), 1.25);
  EXPECT_EQ(back.at(2, 1), 99.5);
  EXPECT_EQ(back.at(1, 0), static_cast<double>(0.1f));
  EXPECT_FALSE(back.valid(1, 1));
}

TEST(Io, PosesRoundTripBitExact) {
  const auto scene = er::synth::make_terrain_scene(4, 8);
  const fs::path p = scratch("poses.txt");
  er::io::write_poses(p, scene.trajectory);
  const auto back = er::io::read_poses(p);
  ASSERT_EQ(back.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    EXPECT_TRUE(back[i].matrix().isApprox(scene.trajectory[i].matrix(), 1e-14));
  }
}

TEST(Io, PosesRejectNonRotation) {
  const fs::path p = scratch("bad_poses.txt");
  std::ofstream(p) << "2 0 0 0 0 1 0 0 0 0 1 0\n";
  EXPECT_THROW(er::io::read_poses(p), er::Error);
  std::ofstream(p) << "1 0 0 0 0 1\n";
  EXPECT_THROW(er::io::read_poses(p), er::Error);
}

TEST(Io, IntrinsicsRoundTrip) {
  er::Intrinsics k{321.5, 320.25, 159.5, 119.5, 320, 240};
  const fs::path p = scratch("k.txt");
  er::io::write_intrinsics(p, k);
  const er::Intrinsics back = er::io::read_intrinsics(p);
  EXPECT_EQ(back.fx, k.fx);
  EXPECT_EQ(back.cy, k.cy);
  EXPECT_EQ(back.width, 320);
  EXPECT_EQ(back.height, 240);
}

TEST(Io, MissingFileIsDataError) {
  try {
    er::io::read_file(scratch("does_not_exist"));
    FAIL();
  } catch (const er::Error& e) {
    EXPECT_EQ(e.kind(), er::ErrorKind::kData);
  }
}

TEST(Io, FormatDoubleRoundTrips) {
  for (double v : {0.1, 1.0 / 3.0, -2.5e-300, 123456789.123}) {
    EXPECT_EQ(std::stod(er::io::format_double(v)), v);
  }
}

TEST(Synth, PlaneDepthIsConstant) {
  const auto f = er::synth::render_scene(er::synth::make_plane_scene(1, 1), 0);
  EXPECT_EQ(f.depth.valid_count(), 64u * 64u);
  for (int y = 0; y < 64; ++y)
    for (int x = 0; x < 64; ++x) EXPECT_NEAR(f.depth.at(x, y), 100.0, 1e-9);
}

TEST(Synth, SphereCentrePixelHitsNearPole) {
  const auto f = er::synth::render_scene(er::synth::make_sphere_scene(2, 1, 65, 65), 0);
  EXPECT_NEAR(f.depth.at(32, 32), 100.0, 1e-9);
  EXPECT_GT(f.depth.at(40, 32), 100.0);
  EXPECT_FALSE(f.depth.valid(0, 0));
}

TEST(Synth, RenderingIsDeterministic) {
  const auto a = er::synth::render_scene(er::synth::make_terrain_scene(3, 42, 24, 24), 2);
  const auto b = er::synth::render_scene(er::synth::make_terrain_scene(3, 42, 24, 24), 2);
  for (int c = 0; c < 3; ++c) EXPECT_TRUE(std::ranges::equal(a.image.channel(c), b.image.channel(c)));
  for (int y = 0; y < 24; ++y)
    for (int x = 0; x < 24; ++x) EXPECT_EQ(a.depth.at(x, y), b.depth.at(x, y));
}

TEST(Synth, TerrainDepthStaysInBand) {
  const auto f = er::synth::render_scene(er::synth::make_terrain_scene(2, 6, 32, 32), 1);
  EXPECT_EQ(f.depth.valid_count(), 32u * 32u);
  for (int y = 0; y < 32; ++y)
    for (int x = 0; x < 32; ++x) {
      EXPECT_GT(f.depth.at(x, y), 80.0);
      EXPECT_LT(f.depth.at(x, y), 120.0);
    }
}

TEST(Synth, OrbitCamerasLookAtOrigin) {
  const auto scene = er::synth::make_orbit_scene(10, 2);
  for (const auto& pose : scene.trajectory) {
    const Eigen::Vector3d axis = pose.rotation_matrix().col(2);
    EXPECT_NEAR(axis.dot(-pose.translation.normalized()), 1.0, 1e-12);
  }
  const auto f = er::synth::render_scene(scene, 0);
  EXPECT_NEAR(f.depth.at(48, 48), 2.0, 0.05);
}

TEST(Synth, ZeroFramesRejected) { EXPECT_THROW(er::synth::make_plane_scene(0, 1), er::Error); }
