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

#include "endorecon/io.hpp"

#include <png.h>

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <memory>
#include <sstream>

#include "endorecon/error.hpp"
#include "json.hpp"

namespace endorecon::io {
namespace {

using Json = nlohmann::json;

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

struct PngRead {
  int width = 0;
  int height = 0;
  int bit_depth = 0;
  int channels = 0;
  std::vector<unsigned char> rows;  // raw bytes, big-endian for 16-bit
};

PngRead png_read(const fs::path& path) {
  FilePtr fp(std::fopen(path.c_str(), "rb"));
  if (!fp) fail(ErrorKind::kData, "cannot open " + path.string());
  unsigned char sig[8];
  if (std::fread(sig, 1, 8, fp.get()) != 8 || png_sig_cmp(sig, 0, 8) != 0) {
    fail(ErrorKind::kData, path.string() + " is not a PNG file");
  }
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  PngRead out;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    fail(ErrorKind::kData, "corrupt PNG " + path.string());
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (png_get_valid(png, info, PNG_INFO_tRNS)) png_set_tRNS_to_alpha(png);
  if (color == PNG_COLOR_TYPE_GRAY && png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_read_update_info(png, info);
  out.width = static_cast<int>(png_get_image_width(png, info));
  out.height = static_cast<int>(png_get_image_height(png, info));
  out.bit_depth = png_get_bit_depth(png, info);
  out.channels = png_get_channels(png, info);
  const std::size_t stride = png_get_rowbytes(png, info);
  out.rows.resize(stride * out.height);
  std::vector<png_bytep> ptrs(out.height);
  for (int y = 0; y < out.height; ++y) ptrs[y] = out.rows.data() + stride * y;
  png_read_image(png, ptrs.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return out;
}

std::string png_encode(int width, int height, int bit_depth, int color_type, const std::vector<unsigned char>& rows) {
  std::string buffer;
  png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png_create_info_struct(png);
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_write_struct(&png, &info);
    fail(ErrorKind::kData, "PNG encoding failed");
  }
  png_set_write_fn(
      png, &buffer,
      [](png_structp p, png_bytep data, png_size_t len) {
        static_cast<std::string*>(png_get_io_ptr(p))->append(reinterpret_cast<const char*>(data), len);
      },
      [](png_structp) {});
  png_set_IHDR(png, info, width, height, bit_depth, color_type, PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT,
               PNG_FILTER_TYPE_DEFAULT);
  png_write_info(png, info);
  const std::size_t stride = rows.size() / height;
  for (int y = 0; y < height; ++y) png_write_row(png, const_cast<png_bytep>(rows.data() + stride * y));
  png_write_end(png, nullptr);
  png_destroy_write_struct(&png, &info);
  return buffer;
}

fs::path sidecar(const fs::path& path) { return fs::path(path.string() + ".json"); }

double parse_number(const std::string& tok, const fs::path& path) {
  double v = 0.0;
  const auto res = std::from_chars(tok.data(), tok.data() + tok.size(), v);
  if (res.ec != std::errc() || res.ptr != tok.data() + tok.size() || !std::isfinite(v)) {
    fail(ErrorKind::kData, "bad number '" + tok + "' in " + path.string());
  }
  return v;
}

std::vector<std::string> tokens(const std::string& line) {
  std::istringstream in(line);
  std::vector<std::string> out;
  std::string t;
  while (in >> t) out.push_back(t);
  return out;
}

}  // namespace

void atomic_write(const fs::path& path, std::string_view bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) fail(ErrorKind::kData, "cannot write " + tmp.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) fail(ErrorKind::kData, "short write to " + tmp.string());
  }
  fs::rename(tmp, path);
}

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::kData, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string format_double(double v) {
  std::array<char, 64> buf{};
  const auto res = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), res.ptr);
}

void write_png_rgb(const fs::path& path, const Image& img) {
  std::vector<unsigned char> rows(static_cast<std::size_t>(img.width()) * img.height() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < img.width(); ++x) {
      for (int c = 0; c < 3; ++c) {
        const double v = img.at(x, y, img.channels() == 3 ? c : 0);
        rows[(static_cast<std::size_t>(y) * img.width() + x) * 3 + c] =
            static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0));
      }
    }
  }
  atomic_write(path, png_encode(img.width(), img.height(), 8, PNG_COLOR_TYPE_RGB, rows));
}

Image read_png_rgb(const fs::path& path) {
  const PngRead p = png_read(path);
  if (p.bit_depth != 8) fail(ErrorKind::kData, path.string() + ": expected an 8-bit image");
  Image img(p.width, p.height, 3);
  for (int y = 0; y < p.height; ++y) {
    for (int x = 0; x < p.width; ++x) {
      const unsigned char* px = p.rows.data() + (static_cast<std::size_t>(y) * p.width + x) * p.channels;
      for (int c = 0; c < 3; ++c) img.set(x, y, c, px[p.channels >= 3 ? c : 0] / 255.0);
    }
  }
  return img;
}

void write_depth_png(const fs::path& path, const DepthMap& depth, double scale_mm) {
  if (!(scale_mm > 0.0)) fail(ErrorKind::kConfig, "depth PNG scale must be positive");
  std::vector<unsigned char> rows(depth.size() * 2);
  for (std::size_t i = 0; i < depth.size(); ++i) {
    long q = 0;
    if (depth.valid(i)) {
      q = std::lround(depth.at(i) / scale_mm);
      if (q < 1 || q > 65535) fail(ErrorKind::kData, "depth value does not fit a 16-bit PNG at this scale");
    }
    rows[2 * i] = static_cast<unsigned char>(q >> 8);
    rows[2 * i + 1] = static_cast<unsigned char>(q & 0xff);
  }
  Json meta = {{"scale_mm", scale_mm}, {"invalid_value", 0}};
  atomic_write(sidecar(path), meta.dump(2) + "\n");
  atomic_write(path, png_encode(depth.width(), depth.height(), 16, PNG_COLOR_TYPE_GRAY, rows));
}

DepthMap read_depth_png(const fs::path& path) {
  double scale = 1.0;
  if (fs::exists(sidecar(path))) {
    try {
      scale = Json::parse(read_file(sidecar(path))).at("scale_mm").get<double>();
    } catch (const Json::exception& e) {
      fail(ErrorKind::kData, "bad depth sidecar " + sidecar(path).string() + ": " + e.what());
    }
  } else {
    fail(ErrorKind::kData, "missing depth sidecar " + sidecar(path).string());
  }
  const PngRead p = png_read(path);
  if (p.bit_depth != 16 || p.channels != 1) fail(ErrorKind::kData, path.string() + ": expected 16-bit grey depth");
  DepthMap d(p.width, p.height);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const unsigned q = (static_cast<unsigned>(p.rows[2 * i]) << 8) | p.rows[2 * i + 1];
    if (q > 0) d.set(i, q * scale);
  }
  return d;
}

void write_pfm(const fs::path& path, const DepthMap& depth) {
  std::string out = "Pf\n" + std::to_string(depth.width()) + " " + std::to_string(depth.height()) + "\n-1.0\n";
  for (int y = depth.height() - 1; y >= 0; --y) {
    for (int x = 0; x < depth.width(); ++x) {
      const float v = depth.valid(x, y) ? static_cast<float>(depth.at(x, y)) : 0.0f;
      char b[4];
      std::memcpy(b, &v, 4);
      out.append(b, 4);
    }
  }
  atomic_write(path, out);
}

DepthMap read_pfm(const fs::path& path) {
  const std::string data = read_file(path);
  std::istringstream in(data);
  std::string magic;
  int w = 0, h = 0;
  double scale = 0.0;
  in >> magic >> w >> h >> scale;
  if (magic != "Pf" || w <= 0 || h <= 0 || scale == 0.0) fail(ErrorKind::kData, path.string() + ": bad PFM header");
  in.get();
  const std::size_t offset = static_cast<std::size_t>(in.tellg());
  if (data.size() < offset + static_cast<std::size_t>(w) * h * 4) fail(ErrorKind::kData, path.string() + ": truncated PFM");
  const bool little = scale < 0.0;
  DepthMap d(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      unsigned char b[4];
      std::memcpy(b, data.data() + offset + (static_cast<std::size_t>(h - 1 - y) * w + x) * 4, 4);
      if (!little) std::swap(b[0], b[3]), std::swap(b[1], b[2]);
      float v;
      std::memcpy(&v, b, 4);
      d.set(x, y, v);
    }
  }
  return d;
}

DepthMap read_depth(const fs::path& path) {
  const std::string ext = path.extension().string();
  if (ext == ".png") return read_depth_png(path);
  if (ext == ".pfm") return read_pfm(path);
  fail(ErrorKind::kData, "unsupported depth format: " + path.string());
}

void write_depth(const fs::path& path, const DepthMap& depth) {
  const std::string ext = path.extension().string();
  if (ext == ".png") return write_depth_png(path, depth);
  if (ext == ".pfm") return write_pfm(path, depth);
  fail(ErrorKind::kData, "unsupported depth format: " + path.string());
}

void write_poses(const fs::path& path, const std::vector<PoseSE3>& poses) {
  std::string out;
  for (const PoseSE3& p : poses) {
    const Eigen::Matrix4d m = p.matrix();
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 4; ++c) out += format_double(m(r, c)) + (r == 2 && c == 3 ? "\n" : " ");
  }
  atomic_write(path, out);
}

std::vector<PoseSE3> read_poses(const fs::path& path) {
  std::istringstream in(read_file(path));
  std::vector<PoseSE3> poses;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = tokens(line);
    if (t.empty()) continue;
    if (t.size() != 12) {
      fail(ErrorKind::kData, path.string() + ":" + std::to_string(lineno) + ": expected 12 numbers, got " +
                                 std::to_string(t.size()));
    }
    Eigen::Matrix4d m = Eigen::Matrix4d::Identity();
    for (int i = 0; i < 12; ++i) m(i / 4, i % 4) = parse_number(t[i], path);
    const Eigen::Matrix3d r = m.topLeftCorner<3, 3>();
    if ((r.transpose() * r - Eigen::Matrix3d::Identity()).norm() > 1e-6 || r.determinant() < 0.0) {
      fail(ErrorKind::kData, path.string() + ":" + std::to_string(lineno) + ": rotation is not orthonormal");
    }
    poses.push_back(matrix_to_pose(m));
  }
  return poses;
}

void write_intrinsics(const fs::path& path, const Intrinsics& k) {
  atomic_write(path, format_double(k.fx) + " " + format_double(k.fy) + " " + format_double(k.cx) + " " +
                         format_double(k.cy) + " " + std::to_string(k.width) + " " + std::to_string(k.height) + "\n");
}

Intrinsics read_intrinsics(const fs::path& path) {
  const auto t = tokens(read_file(path));
  if (t.size() != 6) fail(ErrorKind::kData, path.string() + ": expected 'fx fy cx cy width height'");
  Intrinsics k;
  k.fx = parse_number(t[0], path);
  k.fy = parse_number(t[1], path);
  k.cx = parse_number(t[2], path);
  k.cy = parse_number(t[3], path);
  const double w = parse_number(t[4], path);
  const double h = parse_number(t[5], path);
  if (w != std::floor(w) || h != std::floor(h)) fail(ErrorKind::kData, path.string() + ": image size must be integral");
  k.width = static_cast<int>(w);
  k.height = static_cast<int>(h);
  k.validate();
  return k;
}

}  // namespace endorecon::io
