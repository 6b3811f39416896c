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

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

#include "endorecon/diffnum/ops.hpp"
#include "endorecon/geometry.hpp"
#include "endorecon/warp_ad.hpp"

namespace endorecon::losses {

namespace dn = diffnum;

struct LossWeights {
  double alpha = 0.85;
  double lambda_p = 1.0;
  double lambda_e = 0.1;
  double lambda_sssi = 0.01;
  double lambda_pc = 2.0;
  double lambda_gc = 0.5;
  double lambda_regu = 0.01;

  /// Throws Error(kConfig) on a negative weight or alpha outside [0, 1].
  void validate() const;
};

/// Offset inside smooth |x| = sqrt(x^2 + eps); contributes at most 1e-12 per term.
inline constexpr double kAbsEps = 1e-24;
inline constexpr double kSsimC1 = 0.01 * 0.01;
inline constexpr double kSsimC2 = 0.03 * 0.03;

/// One [h*w] variable per colour channel.
using Channels = std::vector<dn::Var>;
Channels image_constants(dn::Tape& tape, const Image& img);

// Tape-level objectives. Masks are per pixel, non-zero = valid.

/// Per-pixel SSIM over 3x3 windows (reflection padded), averaged over channels.
dn::Var ssim_map(const Channels& a, const Channels& b, int width, int height);
dn::Var photometric_loss(const Channels& target, const Channels& warped, int width, int height,
                         std::span<const unsigned char> valid, double alpha);
/// Edge-aware smoothness of mean-normalised disparity. `depth` is [h*w]; only
/// neighbour pairs where both depths are valid contribute.
dn::Var edge_smoothness(dn::Var depth, std::span<const unsigned char> depth_valid, const Image& img);
/// Normalised values of the valid entries of `depth`, in index order.
dn::Var normalize_depth(dn::Var depth, std::span<const unsigned char> valid);
dn::Var sssi_loss(dn::Var target_depth, dn::Var warped_depth, std::span<const unsigned char> valid);
/// mean((w - 1)^2) + mean((alpha - alpha0)^2) + mean(beta_tilde^2).
dn::Var alignment_regularizer(dn::Var weights, dn::Var alpha, dn::Var alpha0, dn::Var beta_tilde);

// Plain-value wrappers.

std::vector<double> ssim(const Image& a, const Image& b);
double photometric_loss(const Image& target, const Image& warped, std::span<const unsigned char> valid,
                        double alpha = 0.85);
double edge_smoothness(const DepthMap& depth, const Image& img);

struct NormalizedDepth {
  /// Same layout as the input map; invalid pixels hold 0.
  std::vector<double> values;
  double shift = 0.0;
  double scale = 0.0;
};
NormalizedDepth normalize_depth(const DepthMap& depth);
double sssi_loss(const DepthMap& target, const DepthMap& warped, std::span<const unsigned char> valid);

struct DepthLossParts {
  double photometric = 0.0;
  double edge = 0.0;
  double sssi = 0.0;
};
double total_depth_loss(const DepthLossParts& parts, const LossWeights& w = {});

struct ReconLossParts {
  double photometric = 0.0;
  double geometric = 0.0;
  double regularization = 0.0;
};
double total_recon_loss(const ReconLossParts& parts, const LossWeights& w = {});

// Multi-view consistency.

/// A frame as seen by the consistency terms: depth is [h*w] on the tape.
struct ConsistencyFrame {
  dn::Var depth;
  std::vector<unsigned char> depth_valid;
  const Image* image = nullptr;
};

/// Unnormalised sums for one ordered pair (i projected into j).
struct PairConsistency {
  dn::Var photometric_sum;
  dn::Var geometric_sum;
  std::size_t photometric_count = 0;
  std::size_t geometric_count = 0;
};

/// `rotation`/`translation` map camera-i points into camera j.
PairConsistency pair_consistency(const ConsistencyFrame& fi, const ConsistencyFrame& fj, dn::Var rotation,
                                 dn::Var translation, const CameraVars& cam, const PixelSet& pixels);

struct ConsistencyTotals {
  dn::Var photometric;
  dn::Var geometric;
  std::size_t photometric_count = 0;
  std::size_t geometric_count = 0;
  /// Indices (into the pair list) of pairs with no valid point.
  std::vector<std::size_t> empty_pairs;
};
/// Means over the union of valid points of every pair. A term with no valid
/// point at all evaluates to 0.
ConsistencyTotals combine(dn::Tape& tape, const std::vector<PairConsistency>& pairs);

/// Frame with known pose for the plain-value consistency wrappers.
struct PosedFrame {
  Image image;
  DepthMap depth;
  /// Camera-to-world.
  PoseSE3 pose;
};
using FramePair = std::pair<std::size_t, std::size_t>;

struct ConsistencyResult {
  double value = 0.0;
  std::size_t points = 0;
  std::vector<std::size_t> per_pair_points;
};
ConsistencyResult photometric_consistency(const std::vector<PosedFrame>& frames, const std::vector<FramePair>& pairs,
                                          const Intrinsics& k, int stride = 1);
ConsistencyResult geometric_consistency(const std::vector<PosedFrame>& frames, const std::vector<FramePair>& pairs,
                                        const Intrinsics& k, int stride = 1);

}  // namespace endorecon::losses
