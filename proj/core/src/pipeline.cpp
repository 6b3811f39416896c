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

#include "endorecon/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <map>
#include <set>
#include <tuple>
#include <unordered_set>

#include "endorecon/error.hpp"
#include "endorecon/gdv_lora.hpp"
#include "endorecon/io.hpp"
#include "json.hpp"

namespace endorecon::pipeline {
namespace {

using Json = nlohmann::ordered_json;

// Walks one JSON object, remembering which keys were consumed.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) fail(ErrorKind::kConfig, "config: '" + label() + "' must be an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    const Json* v = take(key);
    if (!v) return;
    try {
      out = v->get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kConfig, "config: '" + path_ + key + "' has the wrong type");
    }
  }

  template <typename T>
  void get(const char* key, std::optional<T>& out) {
    const Json* v = take(key);
    if (!v) return;
    if (v->is_null()) {
      out.reset();
      return;
    }
    T value{};
    try {
      value = v->get<T>();
    } catch (const nlohmann::json::exception&) {
      fail(ErrorKind::kConfig, "config: '" + path_ + key + "' has the wrong type");
    }
    out = value;
  }

  // Integers must not silently truncate.
  void get(const char* key, int& out) { get_integer(key, out); }
  void get(const char* key, long& out) { get_integer(key, out); }
  void get(const char* key, std::uint64_t& out) {
    const Json* v = take(key);
    if (!v) return;
    if (!v->is_number_unsigned() && !(v->is_number_integer() && v->get<long long>() >= 0))
      fail(ErrorKind::kConfig, "config: '" + path_ + key + "' must be a non-negative integer");
    out = v->get<std::uint64_t>();
  }
  void get(const char* key, std::optional<int>& out) {
    const Json* v = take(key);
    if (!v) return;
    if (v->is_null()) {
      out.reset();
      return;
    }
    if (!v->is_number_integer()) fail(ErrorKind::kConfig, "config: '" + path_ + key + "' must be an integer");
    out = v->get<int>();
  }

  Section child(const char* key) {
    const Json* v = take(key);
    static const Json empty = Json::object();
    return Section(v ? *v : empty, path_ + key + ".");
  }

  void finish() const {
    for (const auto& [k, v] : j_.items()) {
      if (!used_.contains(k)) fail(ErrorKind::kConfig, "config: unknown key '" + path_ + k + "'");
    }
  }

 private:
  template <typename T>
  void get_integer(const char* key, T& out) {
    const Json* v = take(key);
    if (!v) return;
    if (!v->is_number_integer()) fail(ErrorKind::kConfig, "config: '" + path_ + key + "' must be an integer");
    out = v->get<T>();
  }

  const Json* take(const char* key) {
    used_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string label() const { return path_.empty() ? "root" : path_.substr(0, path_.size() - 1); }

  const Json& j_;
  std::string path_;
  std::set<std::string> used_;
};

template <typename T>
Json opt(const std::optional<T>& v) {
  return v ? Json(*v) : Json(nullptr);
}

void check(bool ok, const std::string& msg) {
  if (!ok) fail(ErrorKind::kConfig, "config: " + msg);
}

const std::map<std::string, double>& dataset_caps() {
  static const std::map<std::string, double> caps{{"scared", metrics::kDatasetDepthCaps[0]},
                                                  {"simcol3d", metrics::kDatasetDepthCaps[1]},
                                                  {"hamlyn", metrics::kDatasetDepthCaps[2]},
                                                  {"c3vd", metrics::kDatasetDepthCaps[3]},
                                                  {"synthetic", 1000.0}};
  return caps;
}

Json parse_json(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorKind::kConfig, what + ": invalid JSON: " + e.what());
  }
}

Json metric_json(const metrics::MetricReport& r) {
  Json j = Json::object();
  for (const auto& [k, v] : r.values) j[k] = std::isfinite(v) ? Json(v) : Json(nullptr);
  for (const auto& [k, v] : r.counts) j[k] = v;
  if (!r.flags.empty()) j["flags"] = r.flags;
  return j;
}

Json pose_json(const PoseSE3& p) {
  return Json{{"rotation", {p.rotation.x(), p.rotation.y(), p.rotation.z()}},
              {"translation", {p.translation.x(), p.translation.y(), p.translation.z()}}};
}

// Keeps the first point of every cubic cell of side `cell`.
fusion::PointCloud thin(const fusion::PointCloud& in, double cell) {
  struct Hash {
    std::size_t operator()(const std::tuple<long, long, long>& k) const {
      return std::hash<long>()(std::get<0>(k)) * 73856093u ^ std::hash<long>()(std::get<1>(k)) * 19349663u ^
             std::hash<long>()(std::get<2>(k)) * 83492791u;
    }
  };
  std::unordered_set<std::tuple<long, long, long>, Hash> seen;
  fusion::PointCloud out;
  for (const auto& p : in.points) {
    const auto key = std::make_tuple(std::lround(std::floor(p.x() / cell)), std::lround(std::floor(p.y() / cell)),
                                     std::lround(std::floor(p.z() / cell)));
    if (seen.insert(key).second) out.points.push_back(p);
  }
  return out;
}

std::vector<fs::path> sorted_files(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(dir)) {
    const std::string ext = e.path().extension().string();
    if (e.is_regular_file() && (ext == ".png" || ext == ".pfm")) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  return files;
}

std::vector<DepthMap> read_depth_dir(const fs::path& dir, std::size_t expected) {
  std::vector<DepthMap> out;
  for (std::size_t i = 0; i < expected; ++i) {
    const fs::path pfm = dir / (frame_name(i) + ".pfm");
    out.push_back(io::read_depth(fs::exists(pfm) ? pfm : dir / (frame_name(i) + ".png")));
  }
  return out;
}

std::string dump(const Json& j) { return j.dump(2) + "\n"; }

}  // namespace

void RunConfig::validate() const {
  loss.validate();
  gdv::BackboneConfig b{lora.patch, lora.dim, lora.hidden, lora.blocks, lora.rank, lora.depth_min, lora.depth_max};
  b.validate();
  check(lora.warmup_steps >= 0 && lora.steps >= 0, "lora step counts must be >= 0");
  check(lora.batch_size >= 1, "lora.batch_size must be >= 1");
  check(lora.learning_rate > 0.0 && lora.weight_decay >= 0.0, "lora learning rate must be > 0 and weight decay >= 0");
  check(lora.image_size >= lora.patch && lora.image_size % lora.patch == 0, "lora.image_size must be a multiple of lora.patch");
  check(lora.gradient_checks >= 0, "lora.gradient_checks must be >= 0");
  recon_options(*this).validate();
  check(recon.align_frame >= 0, "recon.align_frame must be >= 0");
  check(fusion.voxel_size >= 0.0 && fusion.truncation >= 0.0, "fusion sizes must be >= 0");
  check(dataset_caps().contains(eval.dataset), "unknown eval.dataset '" + eval.dataset + "'");
  check(!eval.max_depth || *eval.max_depth > eval.min_depth, "eval.max_depth must exceed eval.min_depth");
  check(eval.min_depth >= 0.0, "eval.min_depth must be >= 0");
  check(eval.depth_alignment == "lsq" || eval.depth_alignment == "median" || eval.depth_alignment == "none",
        "eval.depth_alignment must be lsq, median or none");
  check(eval.threshold > 0.0, "eval.threshold must be > 0");
  check(eval.icp_iters >= 0 && eval.icp_max_distance >= 0.0, "eval icp settings must be >= 0");
  const auto& s = synth.scene;
  check(s == "plane" || s == "sphere" || s == "terrain" || s == "orbit", "synth.scene must be plane, sphere, terrain or orbit");
  check(synth.frames >= 1, "synth.frames must be >= 1");
  check(synth.width >= 8 && synth.height >= 8, "synth image sides must be >= 8");
  check(synth.reference_size >= 8, "synth.reference_size must be >= 8");
  const auto& c = synth.corruption;
  check(c.scale_min > 0.0 && c.scale_max >= c.scale_min, "synth.corruption scale range is invalid");
  check(c.shift_fraction >= 0.0 && c.pose_noise >= 0.0, "synth.corruption noise levels must be >= 0");
}

RunConfig parse_config(std::string_view json_text) {
  const Json j = parse_json(std::string(json_text), "config");
  RunConfig c;
  Section root(j, "");
  root.get("seed", c.seed);
  root.get("output_dir", c.output_dir);
  {
    Section s = root.child("loss");
    s.get("alpha", c.loss.alpha);
    s.get("lambda_p", c.loss.lambda_p);
    s.get("lambda_e", c.loss.lambda_e);
    s.get("lambda_sssi", c.loss.lambda_sssi);
    s.get("lambda_pc", c.loss.lambda_pc);
    s.get("lambda_gc", c.loss.lambda_gc);
    s.get("lambda_regu", c.loss.lambda_regu);
    s.finish();
  }
  {
    Section s = root.child("lora");
    auto& l = c.lora;
    s.get("patch", l.patch);
    s.get("dim", l.dim);
    s.get("hidden", l.hidden);
    s.get("blocks", l.blocks);
    s.get("rank", l.rank);
    s.get("depth_min", l.depth_min);
    s.get("depth_max", l.depth_max);
    s.get("warmup_steps", l.warmup_steps);
    s.get("steps", l.steps);
    s.get("batch_size", l.batch_size);
    s.get("learning_rate", l.learning_rate);
    s.get("weight_decay", l.weight_decay);
    s.get("image_size", l.image_size);
    s.get("gradient_checks", l.gradient_checks);
    s.finish();
  }
  {
    Section s = root.child("recon");
    auto& r = c.recon;
    s.get("epochs", r.epochs);
    s.get("iters_per_epoch", r.iters_per_epoch);
    s.get("learning_rate", r.learning_rate);
    {
      Section m = s.child("lr_scale");
      m.get("log_alpha", r.lr_scale.log_alpha);
      m.get("beta", r.lr_scale.beta);
      m.get("weights", r.lr_scale.weights);
      m.get("rotation", r.lr_scale.rotation);
      m.get("translation", r.lr_scale.translation);
      m.finish();
    }
    s.get("epoch_lr_decay", r.epoch_lr_decay);
    s.get("patch_size", r.patch_size);
    s.get("kernel_sigma", r.kernel_sigma);
    s.get("stride", r.stride);
    s.get("local_window", r.local_window);
    s.get("global_stride", r.global_stride);
    s.get("max_retries", r.max_retries);
    s.get("align_frame", r.align_frame);
    s.finish();
  }
  {
    Section s = root.child("fusion");
    s.get("voxel_size", c.fusion.voxel_size);
    s.get("truncation", c.fusion.truncation);
    s.finish();
  }
  {
    Section s = root.child("eval");
    auto& e = c.eval;
    s.get("dataset", e.dataset);
    s.get("max_depth", e.max_depth);
    s.get("min_depth", e.min_depth);
    s.get("depth_alignment", e.depth_alignment);
    s.get("threshold", e.threshold);
    s.get("icp", e.icp);
    s.get("icp_scale", e.icp_scale);
    s.get("icp_iters", e.icp_iters);
    s.get("icp_max_distance", e.icp_max_distance);
    s.finish();
  }
  {
    Section s = root.child("synth");
    auto& y = c.synth;
    s.get("scene", y.scene);
    s.get("frames", y.frames);
    s.get("width", y.width);
    s.get("height", y.height);
    {
      Section m = s.child("corruption");
      m.get("scale_min", y.corruption.scale_min);
      m.get("scale_max", y.corruption.scale_max);
      m.get("shift_fraction", y.corruption.shift_fraction);
      m.get("pose_noise", y.corruption.pose_noise);
      m.finish();
    }
    s.get("reference_size", y.reference_size);
    s.finish();
  }
  root.finish();
  c.validate();
  return c;
}

RunConfig load_config(const fs::path& path) {
  if (!fs::exists(path)) fail(ErrorKind::kConfig, "config file not found: " + path.string());
  return parse_config(io::read_file(path));
}

std::string serialize_config(const RunConfig& c) {
  const auto& l = c.lora;
  const auto& r = c.recon;
  const auto& e = c.eval;
  const auto& y = c.synth;
  Json j;
  j["seed"] = c.seed;
  j["output_dir"] = c.output_dir;
  j["loss"] = {{"alpha", c.loss.alpha},         {"lambda_p", c.loss.lambda_p},   {"lambda_e", c.loss.lambda_e},
               {"lambda_sssi", c.loss.lambda_sssi}, {"lambda_pc", c.loss.lambda_pc}, {"lambda_gc", c.loss.lambda_gc},
               {"lambda_regu", c.loss.lambda_regu}};
  j["lora"] = {{"patch", l.patch},
               {"dim", l.dim},
               {"hidden", l.hidden},
               {"blocks", l.blocks},
               {"rank", l.rank},
               {"depth_min", l.depth_min},
               {"depth_max", l.depth_max},
               {"warmup_steps", l.warmup_steps},
               {"steps", l.steps},
               {"batch_size", l.batch_size},
               {"learning_rate", l.learning_rate},
               {"weight_decay", l.weight_decay},
               {"image_size", l.image_size},
               {"gradient_checks", l.gradient_checks}};
  j["recon"] = {{"epochs", r.epochs},
                {"iters_per_epoch", r.iters_per_epoch},
                {"learning_rate", r.learning_rate},
                {"lr_scale",
                 {{"log_alpha", r.lr_scale.log_alpha},
                  {"beta", r.lr_scale.beta},
                  {"weights", r.lr_scale.weights},
                  {"rotation", r.lr_scale.rotation},
                  {"translation", r.lr_scale.translation}}},
                {"epoch_lr_decay", r.epoch_lr_decay},
                {"patch_size", r.patch_size},
                {"kernel_sigma", r.kernel_sigma},
                {"stride", r.stride},
                {"local_window", r.local_window},
                {"global_stride", opt(r.global_stride)},
                {"max_retries", r.max_retries},
                {"align_frame", r.align_frame}};
  j["fusion"] = {{"voxel_size", c.fusion.voxel_size}, {"truncation", c.fusion.truncation}};
  j["eval"] = {{"dataset", e.dataset},
               {"max_depth", opt(e.max_depth)},
               {"min_depth", e.min_depth},
               {"depth_alignment", e.depth_alignment},
               {"threshold", e.threshold},
               {"icp", e.icp},
               {"icp_scale", e.icp_scale},
               {"icp_iters", e.icp_iters},
               {"icp_max_distance", e.icp_max_distance}};
  j["synth"] = {{"scene", y.scene},
                {"frames", y.frames},
                {"width", y.width},
                {"height", y.height},
                {"corruption",
                 {{"scale_min", y.corruption.scale_min},
                  {"scale_max", y.corruption.scale_max},
                  {"shift_fraction", y.corruption.shift_fraction},
                  {"pose_noise", y.corruption.pose_noise}}},
                {"reference_size", y.reference_size}};
  return dump(j);
}

fs::path resolve_output_dir(const RunConfig& config, const std::optional<std::string>& flag) {
  if (flag && !flag->empty()) return *flag;
  if (const char* env = std::getenv(kOutputRootEnv); env && *env) return env;
  return config.output_dir;
}

double depth_cap(const EvalConfig& eval) {
  if (eval.max_depth) return *eval.max_depth;
  const auto it = dataset_caps().find(eval.dataset);
  if (it == dataset_caps().end()) fail(ErrorKind::kConfig, "config: unknown eval.dataset '" + eval.dataset + "'");
  return it->second;
}

metrics::DepthEvalConfig depth_eval_config(const EvalConfig& eval) {
  metrics::DepthEvalConfig d;
  d.max_depth = depth_cap(eval);
  d.min_depth = eval.min_depth;
  d.mode = eval.depth_alignment == "median" ? metrics::DepthAlignMode::kMedian
           : eval.depth_alignment == "none" ? metrics::DepthAlignMode::kNone
                                            : metrics::DepthAlignMode::kLeastSquares;
  return d;
}

recon::ReconOptions recon_options(const RunConfig& c) {
  const auto& r = c.recon;
  if (r.local_window < 1) fail(ErrorKind::kConfig, "config: recon.local_window must be >= 1");
  if (r.global_stride && *r.global_stride < 0) fail(ErrorKind::kConfig, "config: recon.global_stride must be >= 0");
  recon::ReconOptions o;
  o.epochs = r.epochs;
  o.iters_per_epoch = r.iters_per_epoch;
  o.learning_rate = r.learning_rate;
  o.lr_scale = r.lr_scale;
  o.epoch_lr_decay = r.epoch_lr_decay;
  o.patch_size = r.patch_size;
  o.kernel_sigma = r.kernel_sigma;
  o.stride = r.stride;
  o.local_window = static_cast<std::size_t>(r.local_window);
  if (r.global_stride) o.global_stride = static_cast<std::size_t>(*r.global_stride);
  o.weights = c.loss;
  o.seed = c.seed;
  o.max_retries = r.max_retries;
  return o;
}

std::string frame_name(std::size_t i) {
  std::string s = std::to_string(i);
  return std::string(s.size() < 6 ? 6 - s.size() : 0, '0') + s;
}

synth::Scene make_scene(const SynthConfig& config, std::uint64_t seed, int width, int height) {
  if (config.scene == "plane") return synth::make_plane_scene(config.frames, seed, width, height);
  if (config.scene == "sphere") return synth::make_sphere_scene(config.frames, seed, width, height);
  if (config.scene == "terrain") return synth::make_terrain_scene(config.frames, seed, width, height);
  if (config.scene == "orbit") return synth::make_orbit_scene(config.frames, seed, width, height);
  fail(ErrorKind::kConfig, "config: unknown synth.scene '" + config.scene + "'");
}

Dataset synthesize(const SynthConfig& config, std::uint64_t seed) {
  const synth::Scene scene = make_scene(config, seed, config.width, config.height);
  const synth::CorruptedSequence seq = synth::corrupt_sequence(scene, seed, config.corruption);
  Dataset d;
  d.intrinsics = scene.intrinsics;
  for (const auto& f : seq.truth) {
    d.images.push_back(f.image);
    d.depth.push_back(f.depth);
    d.poses.push_back(f.pose);
  }
  d.pred_depth = seq.depth;
  d.pred_relative = seq.noisy_relative;

  const synth::Scene dense = make_scene(config, seed, config.reference_size, config.reference_size);
  const PoseSE3 world_to_first = invert(seq.truth.front().pose);
  fusion::PointCloud ref;
  double spacing = 0.0;
  for (std::size_t i = 0; i < dense.trajectory.size(); ++i) {
    const synth::RenderedFrame f = synth::render_scene(dense, i);
    const PoseSE3 to_first = compose(world_to_first, f.pose);
    for (int v = 0; v < f.depth.height(); ++v) {
      for (int u = 0; u < f.depth.width(); ++u) {
        if (!f.depth.valid(u, v)) continue;
        const double z = f.depth.at(u, v);
        spacing = std::max(spacing, z / dense.intrinsics.fx);
        ref.points.push_back(to_first.apply(z * dense.intrinsics.back_project(u, v)));
      }
    }
  }
  if (!ref.empty()) d.reference = thin(ref, spacing);
  return d;
}

void write_dataset(const fs::path& dir, const Dataset& data) {
  fs::create_directories(dir / "images");
  fs::create_directories(dir / "pred_depth");
  io::write_intrinsics(dir / "intrinsics.txt", data.intrinsics);
  for (std::size_t i = 0; i < data.size(); ++i) io::write_png_rgb(dir / "images" / (frame_name(i) + ".png"), data.images[i]);
  if (!data.depth.empty()) {
    fs::create_directories(dir / "depth");
    for (std::size_t i = 0; i < data.depth.size(); ++i) io::write_depth_png(dir / "depth" / (frame_name(i) + ".png"), data.depth[i]);
  }
  if (!data.poses.empty()) io::write_poses(dir / "poses.txt", data.poses);
  for (std::size_t i = 0; i < data.pred_depth.size(); ++i) io::write_pfm(dir / "pred_depth" / (frame_name(i) + ".pfm"), data.pred_depth[i]);
  io::write_poses(dir / "pred_relative.txt", data.pred_relative);
  if (data.reference) fusion::write_ply(dir / "reference.ply", *data.reference);
}

Dataset read_dataset(const fs::path& dir) {
  if (!fs::is_directory(dir)) fail(ErrorKind::kData, "dataset directory not found: " + dir.string());
  Dataset d;
  d.intrinsics = io::read_intrinsics(dir / "intrinsics.txt");
  if (!fs::is_directory(dir / "images")) fail(ErrorKind::kData, "dataset: missing images/ in " + dir.string());
  for (const auto& p : sorted_files(dir / "images")) d.images.push_back(io::read_png_rgb(p));
  if (d.images.empty()) fail(ErrorKind::kData, "dataset: no images in " + dir.string());
  for (const auto& img : d.images) {
    if (img.width() != d.intrinsics.width || img.height() != d.intrinsics.height)
      fail(ErrorKind::kData, "dataset: image size differs from intrinsics");
  }
  d.pred_depth = read_depth_dir(dir / "pred_depth", d.size());
  d.pred_relative = io::read_poses(dir / "pred_relative.txt");
  if (d.pred_relative.size() + 1 != d.size()) fail(ErrorKind::kData, "dataset: pred_relative.txt needs one line per adjacent frame pair");
  if (fs::is_directory(dir / "depth")) d.depth = read_depth_dir(dir / "depth", d.size());
  if (fs::exists(dir / "poses.txt")) d.poses = io::read_poses(dir / "poses.txt");
  if (fs::exists(dir / "reference.ply")) d.reference = fusion::read_ply(dir / "reference.ply");
  return d;
}

recon::Predictions predictions_from(const Dataset& data) {
  recon::Predictions p;
  for (std::size_t i = 0; i < data.size(); ++i) p.frames.push_back({data.images[i], data.pred_depth.at(i)});
  p.relative = data.pred_relative;
  p.intrinsics = data.intrinsics;
  return p;
}

ReconstructOutput reconstruct(const Dataset& data, const RunConfig& config) {
  config.validate();
  const recon::ReconOptions o = recon_options(config);
  ReconstructOutput out;
  out.result = recon::optimize(recon::init_problem(predictions_from(data), o), o);
  if (out.result.aborted) fail(ErrorKind::kNumeric, "reconstruct: " + out.result.abort_reason);
  const recon::ReconProblem& p = out.result.problem;
  out.poses = p.absolute_poses();
  std::vector<DepthMap> depths;
  for (std::size_t i = 0; i < p.size(); ++i) depths.push_back(p.aligned_depth(i, o.kernel_sigma));
  const fusion::Aabb box = fusion::observed_bounds(depths, out.poses, p.intrinsics);
  if (box.empty()) fail(ErrorKind::kData, "reconstruct: no valid depth to fuse");
  out.voxel_size = config.fusion.voxel_size > 0.0 ? config.fusion.voxel_size : fusion::default_voxel_size(box);
  fusion::TsdfVolume vol = fusion::TsdfVolume::covering(box, out.voxel_size, config.fusion.truncation);
  for (std::size_t i = 0; i < p.size(); ++i) vol.integrate(depths[i], out.poses[i], p.intrinsics, &p.frames[i].image);
  out.cloud = vol.extract_surface();

  Json j = Json::parse(recon::run_report(out.result, o));
  Json poses = Json::array();
  for (const auto& q : out.poses) poses.push_back(pose_json(q));
  j["poses"] = poses;
  j["fusion"] = {{"voxel_size", out.voxel_size},
                 {"truncation", vol.truncation()},
                 {"dims", {vol.dims().x(), vol.dims().y(), vol.dims().z()}},
                 {"observed_voxels", vol.observed_voxels()},
                 {"points", out.cloud.size()}};
  out.report = dump(j);
  return out;
}

void write_reconstruction(const fs::path& dir, const ReconstructOutput& out) {
  fs::create_directories(dir / "depth");
  fusion::write_ply(dir / "cloud.ply", out.cloud);
  io::write_poses(dir / "poses.txt", out.poses);
  const recon::ReconProblem& p = out.result.problem;
  for (std::size_t i = 0; i < p.size(); ++i) io::write_pfm(dir / "depth" / (frame_name(i) + ".pfm"), p.aligned_depth(i));
  io::atomic_write(dir / "report.json", out.report);
}

AlignOutput align_pair(const Dataset& data, const RunConfig& config) {
  config.validate();
  const std::size_t f = static_cast<std::size_t>(config.recon.align_frame);
  if (f + 1 >= data.size()) fail(ErrorKind::kConfig, "align: recon.align_frame has no successor frame");
  Dataset pair;
  pair.intrinsics = data.intrinsics;
  pair.images = {data.images[f], data.images[f + 1]};
  pair.pred_depth = {data.pred_depth[f], data.pred_depth[f + 1]};
  pair.pred_relative = {data.pred_relative[f]};
  const recon::ReconOptions o = recon_options(config);
  AlignOutput out;
  out.result = recon::optimize(recon::init_problem(predictions_from(pair), o), o);
  if (out.result.aborted) fail(ErrorKind::kNumeric, "align: " + out.result.abort_reason);
  Json j = Json::parse(recon::run_report(out.result, o));
  j["frames"] = {f, f + 1};
  out.report = dump(j);
  return out;
}

LoraDemoOutput demo_lora(const RunConfig& config, const fs::path* checkpoint) {
  config.validate();
  const auto& l = config.lora;
  const gdv::BackboneConfig bc{l.patch, l.dim, l.hidden, l.blocks, l.rank, l.depth_min, l.depth_max};
  LoraDemoOutput out;
  Json checks = Json::array();
  for (int k = 0; k < l.gradient_checks; ++k) {
    const std::uint64_t s = config.seed + static_cast<std::uint64_t>(k);
    gdv::ToyNetwork probe(bc, s);
    gdv::perturb_adapters(probe, s ^ 0x9e3779b97f4a7c15ULL);
    SynthConfig sc = config.synth;
    sc.frames = 2;
    const synth::Scene scene = make_scene(sc, s, 2 * l.patch, 2 * l.patch);
    const Image a = synth::render_scene(scene, 0).image;
    const Image b = synth::render_scene(scene, 1).image;
    for (gdv::Phase phase : {gdv::Phase::kWarmUp, gdv::Phase::kVectorTune}) {
      const diffnum::GradCheckResult r = gdv::check_adapter_gradients(probe, a, b, phase, s);
      if (!r.finite) fail(ErrorKind::kNumeric, "demo-lora: gradient check: " + r.message);
      out.worst_gradient_error = std::max(out.worst_gradient_error, r.max_rel_error);
      checks.push_back(Json{{"seed", s}, {"phase", gdv::phase_name(phase)}, {"entries", r.entries_checked}, {"max_rel_error", r.max_rel_error}});
    }
  }

  gdv::ToyNetwork net(bc, config.seed);
  SynthConfig sc = config.synth;
  sc.frames = std::max(2, sc.frames);
  const synth::Scene scene = make_scene(sc, config.seed, l.image_size, l.image_size);
  std::vector<Image> frames;
  for (std::size_t i = 0; i < scene.trajectory.size(); ++i) frames.push_back(synth::render_scene(scene, i).image);
  const std::size_t pairs = frames.size() - 1;

  gdv::TrainSchedule sched;
  sched.warmup_steps = l.warmup_steps;
  diffnum::AdamWOptions opt;
  opt.learning_rate = l.learning_rate;
  opt.weight_decay = l.weight_decay;
  gdv::SslTrainer trainer(net, sched, opt, config.loss);
  Json trace = Json::array();
  const long every = std::max<long>(1, l.steps / 100);
  std::vector<Image> targets(static_cast<std::size_t>(l.batch_size));
  std::vector<Image> sources(targets.size());
  gdv::Phase last = gdv::Phase::kWarmUp;
  for (long s = 0; s < l.steps; ++s) {
    for (std::size_t b = 0; b < targets.size(); ++b) {
      const std::size_t k = (static_cast<std::size_t>(s) * targets.size() + b) % pairs;
      targets[b] = frames[k + 1];
      sources[b] = frames[k];
    }
    const gdv::StepReport r = trainer.step(targets, sources);
    if (r.phase != last && out.switch_step < 0) out.switch_step = r.step;
    last = r.phase;
    out.losses.push_back(r.loss);
    if (s % every == 0 || s + 1 == l.steps)
      trace.push_back(Json{{"step", r.step}, {"phase", gdv::phase_name(r.phase)}, {"loss", r.loss}, {"updated", r.updated_scalars}});
  }
  if (checkpoint) net.save(*checkpoint, trainer.schedule());

  Json j;
  j["seed"] = config.seed;
  j["backbone"] = {{"patch", l.patch}, {"dim", l.dim}, {"hidden", l.hidden}, {"blocks", l.blocks}, {"rank", l.rank}};
  j["trainable"] = {{"warmup", net.parameters().trainable_count(gdv::Phase::kWarmUp)},
                    {"vector_tune", net.parameters().trainable_count(gdv::Phase::kVectorTune)}};
  j["gradient_checks"] = checks;
  j["worst_gradient_error"] = out.worst_gradient_error;
  j["steps"] = l.steps;
  j["warmup_steps"] = l.warmup_steps;
  j["switch_step"] = out.switch_step;
  j["trace"] = trace;
  out.report = dump(j);
  return out;
}

metrics::MetricReport eval_depth(const fs::path& pred, const fs::path& gt, const EvalConfig& eval) {
  const metrics::DepthEvalConfig cfg = depth_eval_config(eval);
  std::vector<std::pair<fs::path, fs::path>> jobs;
  if (fs::is_directory(gt)) {
    if (!fs::is_directory(pred)) fail(ErrorKind::kData, "eval-depth: ground truth is a directory but prediction is not");
    for (const auto& g : sorted_files(gt)) {
      fs::path p = pred / g.filename();
      if (!fs::exists(p)) p = pred / (g.stem().string() + ".pfm");
      if (!fs::exists(p)) p = pred / (g.stem().string() + ".png");
      if (!fs::exists(p)) fail(ErrorKind::kData, "eval-depth: no prediction for " + g.filename().string());
      jobs.emplace_back(p, g);
    }
    if (jobs.empty()) fail(ErrorKind::kData, "eval-depth: no depth files in " + gt.string());
  } else {
    jobs.emplace_back(pred, gt);
  }
  std::vector<std::pair<std::string, double>> sums;
  std::size_t pixels = 0;
  for (const auto& [p, g] : jobs) {
    const metrics::DepthAlignment a = metrics::align_depth(io::read_depth(p), io::read_depth(g), cfg);
    const metrics::MetricReport r = metrics::depth_metrics(a.pred, a.gt);
    if (sums.empty()) sums = r.values;
    else
      for (std::size_t k = 0; k < sums.size(); ++k) sums[k].second += r.values[k].second;
    for (const auto& [name, n] : r.counts)
      if (name == "pixels") pixels += n;
  }
  metrics::MetricReport out;
  for (const auto& [name, v] : sums) out.set(name, v / static_cast<double>(jobs.size()));
  out.count("frames", jobs.size());
  out.count("pixels", pixels);
  return out;
}

metrics::MetricReport eval_pose(const fs::path& pred, const fs::path& gt) {
  return metrics::ate_rpe_5frame(io::read_poses(pred), io::read_poses(gt));
}

metrics::MetricReport eval_recon(const fusion::PointCloud& pred, const fusion::PointCloud& gt, const EvalConfig& eval) {
  if (pred.empty() || gt.empty()) fail(ErrorKind::kData, "eval-recon: empty point cloud");
  fusion::PointCloud registered = pred;
  metrics::IcpResult icp;
  if (eval.icp) {
    metrics::IcpOptions o;
    o.max_iters = eval.icp_iters;
    o.with_scale = eval.icp_scale;
    if (eval.icp_max_distance > 0.0) o.max_distance = eval.icp_max_distance;
    icp = metrics::icp_register(pred, gt, o);
    registered = metrics::transform_cloud(pred, icp.transform, icp.scale);
  }
  metrics::MetricReport r = metrics::recon_metrics(registered, gt, eval.threshold);
  if (eval.icp) {
    r.set("icp_rmse", icp.rmse);
    r.set("icp_fitness", icp.fitness);
    r.set("icp_scale", icp.scale);
    r.count("icp_iterations", static_cast<std::size_t>(icp.iterations));
  }
  return r;
}

std::string report_json(const metrics::MetricReport& report) { return dump(metric_json(report)); }

}  // namespace endorecon::pipeline
