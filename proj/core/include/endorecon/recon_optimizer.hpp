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
#include <optional>
#include <string>
#include <vector>

#include "endorecon/alignment.hpp"
#include "endorecon/geometry.hpp"
#include "endorecon/losses.hpp"

namespace endorecon::recon {

using losses::FramePair;

/// max(2, n / 5).
std::size_t default_global_stride(std::size_t frames);

/// Chain pairs (i, i + d) for d <= local_window plus (i, j) for every frame j
/// that is a multiple of `global_stride`. A stride of 0 disables the global
/// pairs. Sorted, without duplicates.
std::vector<FramePair> select_keyframes(std::size_t frames, std::size_t local_window, std::size_t global_stride);

struct ReconFrame {
  Image image;
  /// Affine-invariant depth prediction.
  DepthMap depth;
};

/// Network outputs that seed the optimisation. `relative[i]` maps camera-i
/// points into camera i + 1.
struct Predictions {
  std::vector<ReconFrame> frames;
  std::vector<PoseSE3> relative;
  std::optional<Intrinsics> intrinsics;
};

/// Multipliers on the base learning rate, per variable group.
struct LrScales {
  double log_alpha = 1.0;
  double beta = 1.0;
  double weights = 1.0;
  double rotation = 1.0;
  double translation = 1.0;
};

struct ReconOptions {
  int epochs = 3;
  int iters_per_epoch = 1000;
  double learning_rate = 1e-4;
  LrScales lr_scale;
  /// Base learning rate is multiplied by this after every epoch.
  double epoch_lr_decay = 1.0;
  int patch_size = 16;
  /// Kernel width of the local regression; 0 means the patch size.
  double kernel_sigma = 0.0;
  /// Pixel stride of the loss grid during optimisation.
  int stride = 2;
  std::size_t local_window = 1;
  /// Unset means default_global_stride(frames).
  std::optional<std::size_t> global_stride;
  losses::LossWeights weights;
  std::uint64_t seed = 0;
  int max_retries = 5;

  void validate() const;
};

struct ReconProblem {
  std::vector<ReconFrame> frames;
  Intrinsics intrinsics;
  std::vector<PoseSE3> relative;
  std::vector<align::AlignmentParams> alignment;
  std::vector<double> alpha_init;
  /// 95th percentile of each frame's initial depth; shifts are regularised in
  /// units of it.
  std::vector<double> depth_reference;
  std::vector<align::PatchGrid> anchors;
  std::vector<FramePair> pairs;

  std::size_t size() const { return frames.size(); }
  /// Camera-to-world poses with frame 0 at the origin.
  std::vector<PoseSE3> absolute_poses() const;
  DepthMap aligned_depth(std::size_t frame, double kernel_sigma = 0.0) const;
};

/// Camera-to-world trajectory from adjacent relative motions (frame 0 at the origin).
std::vector<PoseSE3> chain_to_absolute(const std::vector<PoseSE3>& relative);
/// Inverse of chain_to_absolute.
std::vector<PoseSE3> absolute_to_chain(const std::vector<PoseSE3>& absolute);

/// Identity alignment, poses and intrinsics from the predictions.
/// `intrinsics_override` wins over the predicted intrinsics.
ReconProblem init_problem(Predictions predictions, const ReconOptions& options,
                          const std::optional<Intrinsics>& intrinsics_override = std::nullopt);

struct ValidityStats {
  std::size_t pairs = 0;
  std::size_t empty_pairs = 0;
  std::size_t photometric_points = 0;
  std::size_t geometric_points = 0;
  std::size_t fallback_pixels = 0;
  std::size_t invalid_depth_pixels = 0;
};

struct Evaluation {
  losses::ReconLossParts parts;
  double total = 0.0;
  ValidityStats stats;
};

/// Loss of the current parameters on a grid of the given pixel stride.
Evaluation evaluate(const ReconProblem& problem, const ReconOptions& options, int stride = 1);

struct EpochRecord {
  int epoch = 0;
  double learning_rate = 0.0;
  double start_loss = 0.0;
  double end_loss = 0.0;
  losses::ReconLossParts start_parts;
  losses::ReconLossParts end_parts;
};

struct ReconResult {
  ReconProblem problem;
  Evaluation initial;
  Evaluation final;
  std::vector<EpochRecord> epochs;
  /// Loss at every iteration on the optimisation grid.
  std::vector<double> trace;
  int retries = 0;
  bool aborted = false;
  std::string abort_reason;
};

/// Minimises the reconstruction loss over alignment parameters and adjacent
/// relative poses. Anchors are resampled at the start of every epoch after
/// the first.
ReconResult optimize(ReconProblem problem, const ReconOptions& options);

/// Deterministic JSON run report.
std::string run_report(const ReconResult& result, const ReconOptions& options);

}  // namespace endorecon::recon
