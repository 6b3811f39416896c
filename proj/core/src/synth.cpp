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

#include "endorecon/synth.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "endorecon/error.hpp"

namespace endorecon::synth {
namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double terrain_residual(const Surface& s, const Eigen::Vector3d& p) { return p.z() - s.terrain_height(p.x(), p.y()); }

}  // namespace

double Surface::terrain_height(double x, double y) const {
  return base + amplitude * std::sin(kTwoPi * x / wavelength_x + phase_x) * std::cos(kTwoPi * y / wavelength_y + phase_y);
}

double Surface::distance(const Eigen::Vector3d& p) const {
  switch (kind) {
    case SurfaceKind::kPlane:
      return std::abs(normal.normalized().dot(p) - offset / normal.norm());
    case SurfaceKind::kSphere:
      return std::abs((p - center).norm() - radius);
    case SurfaceKind::kTerrain:
      return std::abs(terrain_residual(*this, p));
  }
  return 0.0;
}

double Surface::intersect(const Eigen::Vector3d& origin, const Eigen::Vector3d& dir) const {
  switch (kind) {
    case SurfaceKind::kPlane: {
      const double denom = normal.dot(dir);
      if (std::abs(denom) < 1e-12) return -1.0;
      return (offset - normal.dot(origin)) / denom;
    }
    case SurfaceKind::kSphere: {
      const Eigen::Vector3d oc = origin - center;
      const double a = dir.squaredNorm();
      const double b = 2.0 * oc.dot(dir);
      const double c = oc.squaredNorm() - radius * radius;
      const double disc = b * b - 4.0 * a * c;
      if (disc < 0.0) return -1.0;
      const double sq = std::sqrt(disc);
      const double t0 = (-b - sq) / (2.0 * a);
      if (t0 > 0.0) return t0;
      return (-b + sq) / (2.0 * a);
    }
    case SurfaceKind::kTerrain: {
      // March along the ray until the sign of z - h(x, y) flips, then bisect.
      const double step = 0.05 * std::min({wavelength_x, wavelength_y, std::max(amplitude, 1e-3) * 4.0}) /
                          std::max(dir.norm(), 1e-12);
      double t_prev = 1e-3;
      double f_prev = terrain_residual(*this, origin + t_prev * dir);
      const double t_max = 20.0 * (base + std::abs(amplitude)) + 1.0;
      for (double t = t_prev + step; t < t_max; t += step) {
        const double f = terrain_residual(*this, origin + t * dir);
        if ((f_prev < 0.0) != (f < 0.0)) {
          double lo = t_prev;
          double hi = t;
          for (int it = 0; it < 80; ++it) {
            const double mid = 0.5 * (lo + hi);
            const double fm = terrain_residual(*this, origin + mid * dir);
            if ((fm < 0.0) == (f_prev < 0.0)) {
              lo = mid;
            } else {
              hi = mid;
            }
          }
          return 0.5 * (lo + hi);
        }
        t_prev = t;
        f_prev = f;
      }
      return -1.0;
    }
  }
  return -1.0;
}

Texture Texture::random(std::uint64_t seed, double min_wavelength_mm) {
  std::mt19937_64 rng(seed ^ 0x7e57u);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> gauss(0.0, 1.0);
  Texture tex;
  for (int c = 0; c < 3; ++c) {
    for (int k = 0; k < 4; ++k) {
      Wave w;
      Eigen::Vector3d dirn(gauss(rng), gauss(rng), gauss(rng));
      dirn.normalize();
      const double wavelength = min_wavelength_mm * (1.0 + 2.0 * unit(rng));
      w.frequency = dirn * (kTwoPi / wavelength);
      w.phase = kTwoPi * unit(rng);
      w.amplitude = 0.06 + 0.04 * unit(rng);
      tex.waves[c].push_back(w);
    }
  }
  return tex;
}

double Texture::value(const Eigen::Vector3d& p, int channel) const {
  double v = 0.5;
  for (const Wave& w : waves[channel]) v += w.amplitude * std::sin(w.frequency.dot(p) + w.phase);
  return v;
}

RenderedFrame render_scene(const Scene& scene, std::size_t frame) {
  if (frame >= scene.trajectory.size()) fail(ErrorKind::kData, "render_scene: frame index out of range");
  const Intrinsics& k = scene.intrinsics;
  RenderedFrame out{Image(k.width, k.height, 3), DepthMap(k.width, k.height), scene.trajectory[frame]};
  const Eigen::Matrix3d r = out.pose.rotation_matrix();
  const Eigen::Vector3d& origin = out.pose.translation;
  for (int y = 0; y < k.height; ++y) {
    for (int x = 0; x < k.width; ++x) {
      const Eigen::Vector3d dir = r * k.back_project(x, y);
      const double t = scene.surface.intersect(origin, dir);
      if (!(t > 0.0) || !std::isfinite(t)) continue;
      out.depth.set(x, y, t);
      const Eigen::Vector3d p = origin + t * dir;
      for (int c = 0; c < 3; ++c) out.image.set(x, y, c, scene.texture.value(p, c));
    }
  }
  return out;
}

PoseSE3 look_at(const Eigen::Vector3d& eye, const Eigen::Vector3d& target, const Eigen::Vector3d& up) {
  const Eigen::Vector3d z = (target - eye).normalized();
  Eigen::Vector3d x = z.cross(-up);
  if (x.norm() < 1e-9) x = z.unitOrthogonal();
  x.normalize();
  const Eigen::Vector3d y = z.cross(x);
  Eigen::Matrix3d rot;
  rot.col(0) = x;
  rot.col(1) = y;
  rot.col(2) = z;
  PoseSE3 p;
  p.rotation = so3_log(rot);
  p.translation = eye;
  return p;
}

namespace {

Intrinsics default_intrinsics(int width, int height) {
  Intrinsics k;
  k.width = width;
  k.height = height;
  k.fx = k.fy = static_cast<double>(width);
  k.cx = 0.5 * (width - 1);
  k.cy = 0.5 * (height - 1);
  return k;
}

void check_frames(int frames) {
  if (frames <= 0) fail(ErrorKind::kConfig, "synthetic scene: frame count must be positive");
}

}  // namespace

Scene make_plane_scene(int frames, std::uint64_t seed, int width, int height, double depth_mm) {
  check_frames(frames);
  Scene s;
  s.surface.kind = SurfaceKind::kPlane;
  s.surface.normal = Eigen::Vector3d::UnitZ();
  s.surface.offset = depth_mm;
  s.texture = Texture::random(seed, 0.25 * depth_mm);
  s.intrinsics = default_intrinsics(width, height);
  s.trajectory.assign(static_cast<std::size_t>(frames), PoseSE3::identity());
  return s;
}

Scene make_sphere_scene(int frames, std::uint64_t seed, int width, int height) {
  check_frames(frames);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> jitter(-0.5, 0.5);
  Scene s;
  s.surface.kind = SurfaceKind::kSphere;
  s.surface.center = Eigen::Vector3d(0.0, 0.0, 150.0);
  s.surface.radius = 50.0;
  s.texture = Texture::random(seed, 15.0);
  s.intrinsics = default_intrinsics(width, height);
  // Frame 0 sits at the origin looking down the axis at the sphere centre.
  for (int i = 0; i < frames; ++i) {
    PoseSE3 p;
    if (i > 0) {
      p.translation = Eigen::Vector3d(1.5 * i + jitter(rng), 0.5 * i + jitter(rng), 0.0);
      p.rotation = Eigen::Vector3d(0.0, -0.005 * i, 0.0);
    }
    s.trajectory.push_back(p);
  }
  return s;
}

Scene make_terrain_scene(int frames, std::uint64_t seed, int width, int height) {
  check_frames(frames);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene s;
  s.surface.kind = SurfaceKind::kTerrain;
  s.surface.base = 100.0;
  s.surface.amplitude = 12.0;
  s.surface.wavelength_x = 70.0 + 20.0 * unit(rng);
  s.surface.wavelength_y = 80.0 + 20.0 * unit(rng);
  s.surface.phase_x = kTwoPi * unit(rng);
  s.surface.phase_y = kTwoPi * unit(rng);
  s.texture = Texture::random(seed, 18.0);
  s.intrinsics = default_intrinsics(width, height);
  const double heading = kTwoPi * unit(rng);
  const Eigen::Vector3d dir(std::cos(heading), std::sin(heading), 0.0);
  for (int i = 0; i < frames; ++i) {
    PoseSE3 p;
    p.translation = 3.0 * i * dir + Eigen::Vector3d(0.0, 0.0, 0.3 * std::sin(0.7 * i));
    p.rotation = Eigen::Vector3d(0.01 * std::sin(0.5 * i), 0.01 * std::cos(0.4 * i), 0.02 * i / std::max(frames, 1));
    s.trajectory.push_back(p);
  }
  return s;
}

Scene make_orbit_scene(int views, std::uint64_t seed, int width, int height, double distance) {
  check_frames(views);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Scene s;
  s.surface.kind = SurfaceKind::kSphere;
  s.surface.center = Eigen::Vector3d::Zero();
  s.surface.radius = 1.0;
  s.texture = Texture::random(seed, 0.5);
  s.intrinsics = default_intrinsics(width, height);
  // Fibonacci sphere with a random spin.
  const double spin = kTwoPi * unit(rng);
  const double golden = std::numbers::pi * (3.0 - std::sqrt(5.0));
  for (int i = 0; i < views; ++i) {
    const double zc = 1.0 - 2.0 * (i + 0.5) / views;
    const double rad = std::sqrt(std::max(0.0, 1.0 - zc * zc));
    const double phi = spin + golden * i;
    const Eigen::Vector3d eye = distance * Eigen::Vector3d(rad * std::cos(phi), rad * std::sin(phi), zc);
    const Eigen::Vector3d up = std::abs(zc) > 0.9 ? Eigen::Vector3d::UnitX() : Eigen::Vector3d::UnitZ();
    s.trajectory.push_back(look_at(eye, Eigen::Vector3d::Zero(), up));
  }
  return s;
}

}  // namespace endorecon::synth

namespace endorecon::synth {
namespace {

Eigen::Vector3d random_unit(std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::Vector3d v(g(rng), g(rng), g(rng));
  return v.normalized();
}

}  // namespace

CorruptedSequence corrupt_sequence(const Scene& scene, std::uint64_t seed, const Corruption& c) {
  if (!(c.scale_min > 0.0) || c.scale_max < c.scale_min || c.shift_fraction < 0.0 || c.pose_noise < 0.0) {
    fail(ErrorKind::kConfig, "corrupt_sequence: invalid corruption ranges");
  }
  std::mt19937_64 rng(seed ^ 0xc0441u);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  CorruptedSequence out;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) {
    RenderedFrame f = render_scene(scene, i);
    double max_depth = 0.0;
    for (std::size_t k = 0; k < f.depth.size(); ++k)
      if (f.depth.valid(k)) max_depth = std::max(max_depth, f.depth.at(k));
    const double s = std::exp(std::log(c.scale_min) + unit(rng) * (std::log(c.scale_max) - std::log(c.scale_min)));
    const double b = (2.0 * unit(rng) - 1.0) * c.shift_fraction * max_depth;
    DepthMap d(f.depth.width(), f.depth.height());
    for (std::size_t k = 0; k < d.size(); ++k)
      if (f.depth.valid(k)) d.set(k, s * f.depth.at(k) + b);
    out.scale.push_back(s);
    out.shift.push_back(b);
    out.depth.push_back(std::move(d));
    out.truth.push_back(std::move(f));
  }
  for (std::size_t i = 0; i + 1 < scene.trajectory.size(); ++i) {
    const PoseSE3 rel = compose(invert(scene.trajectory[i + 1]), scene.trajectory[i]);
    PoseSE3 noisy = rel;
    noisy.rotation += c.pose_noise * rel.rotation.norm() * random_unit(rng);
    noisy.translation += c.pose_noise * rel.translation.norm() * random_unit(rng);
    out.true_relative.push_back(rel);
    out.noisy_relative.push_back(noisy);
  }
  return out;
}

}  // namespace endorecon::synth
