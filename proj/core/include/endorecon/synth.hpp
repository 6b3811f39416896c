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
#include <vector>

#include "endorecon/geometry.hpp"

namespace endorecon::synth {

enum class SurfaceKind { kPlane, kSphere, kTerrain };

/// Analytic surface in world coordinates (mm).
struct Surface {
  SurfaceKind kind = SurfaceKind::kPlane;
  // Plane: normal . x = offset.
  Eigen::Vector3d normal = Eigen::Vector3d::UnitZ();
  double offset = 100.0;
  // Sphere.
  Eigen::Vector3d center = Eigen::Vector3d(0.0, 0.0, 150.0);
  double radius = 50.0;
  // Terrain: z = base + amplitude * sin(2*pi*x/wavelength_x + phase_x) * cos(2*pi*y/wavelength_y + phase_y).
  double base = 100.0;
  double amplitude = 10.0;
  double wavelength_x = 60.0;
  double wavelength_y = 70.0;
  double phase_x = 0.0;
  double phase_y = 0.0;

  /// Camera depth of the first hit along `origin + t * dir`, where `dir` has
  /// unit z-component in the camera frame; returns a non-positive value on a miss.
  double intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const;
  /// Terrain height at (x, y); meaningful for kTerrain only.
  double terrain_height(double x, double y) const;
  /// Distance from `p` to the surface (vertical distance for terrain).
  double distance(const Eigen::Vector3d& p) const;
};

/// Smooth procedural colour field over world space.
struct Texture {
  struct Wave {
    Eigen::Vector3d frequency;
    double phase = 0.0;
    double amplitude = 0.0;
  };
  std::vector<Wave> waves[3];

  static Texture random(std::uint64_t seed, double min_wavelength_mm);
  double value(const Eigen::Vector3d& p, int channel) const;
};

struct Scene {
  Surface surface;
  Texture texture;
  Intrinsics intrinsics;
  /// Camera-to-world pose per frame.
  std::vector<PoseSE3> trajectory;
};

struct RenderedFrame {
  Image image;
  DepthMap depth;
  PoseSE3 pose;
};

/// Ray-casts one frame. Rays that miss the surface leave the pixel invalid and black.
RenderedFrame render_scene(const Scene& scene, std::size_t frame);

/// Camera-to-world pose at `eye` looking at `target`; camera y points roughly along -up.
PoseSE3 look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up);

/// Fronto-parallel plane at `depth_mm`, static centred cameras.
Scene make_plane_scene(int frames, std::uint64_t seed, int width = 64, int height = 64, double depth_mm = 100.0);
/// Sphere of radius 50 mm centred 150 mm down the optical axis of frame 0; later cameras drift sideways.
Scene make_sphere_scene(int frames, std::uint64_t seed, int width = 64, int height = 64);
/// Sinusoidal terrain around z = 100 mm viewed by a sideways-moving camera.
Scene make_terrain_scene(int frames, std::uint64_t seed, int width = 64, int height = 64);
/// Unit sphere at the origin observed from `views` cameras spread over a sphere of radius `distance`.
Scene make_orbit_scene(int views, std::uint64_t seed, int width = 96, int height = 96, double distance = 3.0);

/// Degradation applied to ground truth to mimic network predictions.
struct Corruption {
  /// Per-frame scale, log-uniform in [scale_min, scale_max].
  double scale_min = 0.5;
  double scale_max = 2.0;
  /// Per-frame shift, uniform in +-shift_fraction * (max true depth of the frame).
  double shift_fraction = 0.2;
  /// Relative-pose noise as a fraction of the motion magnitude.
  double pose_noise = 0.05;
};

struct CorruptedSequence {
  std::vector<RenderedFrame> truth;
  std::vector<DepthMap> depth;
  std::vector<double> scale;
  std::vector<double> shift;
  /// Entry i maps camera-i points into camera i + 1.
  std::vector<PoseSE3> true_relative;
  std::vector<PoseSE3> noisy_relative;
};

CorruptedSequence corrupt_sequence(const Scene& scene, std::uint64_t seed, const Corruption& c = {});

}  // namespace endorecon::synth
