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

#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "endorecon/geometry.hpp"

namespace endorecon::io {

namespace fs = std::filesystem;

/// Writes to a sibling temp file and renames it over `path`.
void atomic_write(const fs::path& path, std::string_view bytes);
std::string read_file(const fs::path& path);

/// 8-bit RGB PNG (grey images are expanded to three channels).
void write_png_rgb(const fs::path& path, const Image& img);
Image read_png_rgb(const fs::path& path);

/// 16-bit grey PNG holding round(depth / scale_mm); 0 marks invalid pixels. A
/// sidecar `<path>.json` records the scale.
void write_depth_png(const fs::path& path, const DepthMap& depth, double scale_mm = 0.01);
DepthMap read_depth_png(const fs::path& path);

/// Little-endian single-channel PFM, rows stored bottom-up. Non-positive or
/// non-finite values are invalid.
void write_pfm(const fs::path& path, const DepthMap& depth);
DepthMap read_pfm(const fs::path& path);

/// Dispatches on extension: .png (with sidecar) or .pfm.
DepthMap read_depth(const fs::path& path);
void write_depth(const fs::path& path, const DepthMap& depth);

/// One camera-to-world pose per line: 12 numbers, row-major 3x4.
void write_poses(const fs::path& path, const std::vector<PoseSE3>& poses);
std::vector<PoseSE3> read_poses(const fs::path& path);

/// "fx fy cx cy width height" on one line.
void write_intrinsics(const fs::path& path, const Intrinsics& k);
Intrinsics read_intrinsics(const fs::path& path);

/// Shortest decimal that round-trips to the same double.
std::string format_double(double v);

}  // namespace endorecon::io
