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
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "endorecon/fusion.hpp"
#include "endorecon/geometry.hpp"
#include "endorecon/losses.hpp"
#include "endorecon/metrics.hpp"
#include "endorecon/recon_optimizer.hpp"
#include "endorecon/synth.hpp"

namespace endorecon::pipeline {

namespace fs = std::filesystem;

struct LoraConfig {
  int patch = 4;
  int dim = 16;
  int hidden = 32;
  int blocks = 2;
  int rank = 4;
  double depth_min = 10.0;
  double depth_max = 300.0;
  long warmup_steps = 5000;
  /// Total steps of `demo-lora`, warm-up included.
  long steps = 5200;
  int batch_size = 8;
  double learning_rate = 1e-4;
  double weight_decay = 0.01;
  /// Side of the square training frames rendered for the demo.
  int image_size = 16;
  /// Seeds checked by finite differences before and after the phase switch.
  int gradient_checks = 3;
};

struct ReconConfig {
  int epochs = 3;
  int iters_per_epoch = 1000;
  double learning_rate = 1e-4;
  recon::LrScales lr_scale;
  double epoch_lr_decay = 1.0;
  int patch_size = 16;
  double kernel_sigma = 0.0;
  int stride = 2;
  int local_window = 1;
  /// 0 disables global pairs; unset means max(2, frames / 5).
  std::optional<int> global_stride;
  int max_retries = 5;
  /// Frame whose pair (frame, frame + 1) `align` optimises.
  int align_frame = 0;
};

struct FusionConfig {
  /// 0 means diagonal / 128 of the observed bounds.
  double voxel_size = 0.0;
  /// 0 means three voxels.
  double truncation = 0.0;
};

struct EvalConfig {
  /// scared, simcol3d, hamlyn, c3vd or synthetic; picks the default depth cap.
  std::string dataset = "scared";
  /// Overrides the dataset cap when set.
  std::optional<double> max_depth;
  double min_depth = 1e-3;
  /// lsq, median or none.
  std::string depth_alignment = "lsq";
  /// F-score threshold in mm.
  double threshold = 5.0;
  bool icp = true;
  bool icp_scale = false;
  int icp_iters = 50;
  /// Correspondence gate for ICP in mm; 0 means unbounded.
  double icp_max_distance = 0.0;
};

struct SynthConfig {
  /// plane, sphere, terrain or orbit.
  std::string scene = "terrain";
  int frames = 10;
  int width = 64;
  int height = 64;
  synth::Corruption corruption;
  /// Side of the dense rendering used for the reference surface cloud.
  int reference_size = 256;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "endorecon_out";
  losses::LossWeights loss;
  LoraConfig lora;
  ReconConfig recon;
  FusionConfig fusion;
  EvalConfig eval;
  SynthConfig synth;

  void validate() const;
};

/// Parses JSON; every key is optional, unknown keys throw Error(kConfig).
RunConfig parse_config(std::string_view json_text);
RunConfig load_config(const fs::path& path);
/// Canonical JSON with every field present.
std::string serialize_config(const RunConfig& config);

/// Environment variable that replaces `output_dir` of the configuration.
inline constexpr const char* kOutputRootEnv = "ENDORECON_OUTPUT_ROOT";
/// Flag value wins, then the environment variable, then the configuration.
fs::path resolve_output_dir(const RunConfig& config, const std::optional<std::string>& flag);

double depth_cap(const EvalConfig& eval);
metrics::DepthEvalConfig depth_eval_config(const EvalConfig& eval);
recon::ReconOptions recon_options(const RunConfig& config);

/// On-disk sequence: ground truth plus the network-style predictions that
/// seed reconstruction.
///
///   intrinsics.txt            fx fy cx cy width height
///   poses.txt                 ground-truth camera-to-world, one 3x4 per line
///   images/NNNNNN.png
///   depth/NNNNNN.png          ground-truth depth (+ .json sidecar)
///   pred_depth/NNNNNN.pfm     affine-corrupted depth predictions
///   pred_relative.txt         predicted camera-i -> camera-(i+1) motions
///   reference.ply             dense samples of the true surface, in the
///                             coordinates of camera 0
struct Dataset {
  Intrinsics intrinsics;
  std::vector<Image> images;
  std::vector<DepthMap> depth;
  std::vector<PoseSE3> poses;
  std::vector<DepthMap> pred_depth;
  std::vector<PoseSE3> pred_relative;
  std::optional<fusion::PointCloud> reference;

  std::size_t size() const { return images.size(); }
};

std::string frame_name(std::size_t i);
synth::Scene make_scene(const SynthConfig& config, std::uint64_t seed, int width, int height);
Dataset synthesize(const SynthConfig& config, std::uint64_t seed);
void write_dataset(const fs::path& dir, const Dataset& data);
/// Missing optional parts (reference, ground truth) are left empty.
Dataset read_dataset(const fs::path& dir);

recon::Predictions predictions_from(const Dataset& data);

struct ReconstructOutput {
  recon::ReconResult result;
  fusion::PointCloud cloud;
  double voxel_size = 0.0;
  std::vector<PoseSE3> poses;
  /// Deterministic JSON report.
  std::string report;
};

/// init -> optimise -> fuse. Throws Error(kNumeric) when optimisation aborts.
ReconstructOutput reconstruct(const Dataset& data, const RunConfig& config);
/// Writes cloud.ply, poses.txt, depth/NNNNNN.pfm and report.json.
void write_reconstruction(const fs::path& dir, const ReconstructOutput& out);

struct AlignOutput {
  recon::ReconResult result;
  std::string report;
};
/// Optimises alignment and motion of the pair (align_frame, align_frame + 1).
AlignOutput align_pair(const Dataset& data, const RunConfig& config);

struct LoraDemoOutput {
  std::vector<double> losses;
  long switch_step = -1;
  double worst_gradient_error = 0.0;
  std::string report;
};
/// Trains the toy network from its initialisation; saves a checkpoint when
/// `checkpoint` is given.
LoraDemoOutput demo_lora(const RunConfig& config, const fs::path* checkpoint = nullptr);

/// Depth files (or directories of same-named files) against ground truth.
metrics::MetricReport eval_depth(const fs::path& pred, const fs::path& gt, const EvalConfig& eval);
metrics::MetricReport eval_pose(const fs::path& pred, const fs::path& gt);
/// Optional ICP pre-registration of pred onto gt, then the 3D metrics.
metrics::MetricReport eval_recon(const fusion::PointCloud& pred, const fusion::PointCloud& gt, const EvalConfig& eval);

/// JSON object of a metric report.
std::string report_json(const metrics::MetricReport& report);

}  // namespace endorecon::pipeline
