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

#include <limits>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "endorecon/fusion.hpp"
#include "endorecon/geometry.hpp"

namespace endorecon::metrics {

/// Named scalar results in insertion order, plus the sample counts behind them.
struct MetricReport {
  std::vector<std::pair<std::string, double>> values;
  std::vector<std::pair<std::string, std::size_t>> counts;
  std::vector<std::string> flags;

  void set(const std::string& name, double v);
  void count(const std::string& name, std::size_t n);
  /// Throws Error(kData) for unknown names.
  double get(const std::string& name) const;
  /// One "name=value" per line.
  std::string key_value() const;
  /// Header line and value line, tab separated.
  std::string table() const;
};

enum class DepthAlignMode { kLeastSquares, kMedian, kNone };

struct DepthEvalConfig {
  double max_depth = 150.0;
  double min_depth = 1e-3;
  DepthAlignMode mode = DepthAlignMode::kLeastSquares;
};

/// Depth caps for the four evaluation datasets, in order.
inline constexpr double kDatasetDepthCaps[4] = {150.0, 200.0, 300.0, 100.0};

struct DepthAlignment {
  double scale = 1.0;
  double shift = 0.0;
  bool degenerate = false;
  /// Prediction after scale/shift, clamped to [min_depth, max_depth].
  DepthMap pred;
  /// Ground truth restricted to (min_depth, max_depth].
  DepthMap gt;
};

/// Closed-form scale and shift minimising sum (s * pred + t - gt)^2 over the
/// joint valid mask, then depth caps. Constant predictions fall back to s = 1
/// and t = mean difference.
DepthAlignment align_depth_lsq(const DepthMap& pred, const DepthMap& gt, const DepthEvalConfig& config = {});
DepthAlignment align_depth(const DepthMap& pred, const DepthMap& gt, const DepthEvalConfig& config = {});

/// AbsRel, SqRel, RMSE, RMSElog and delta (< 1.25, in percent).
MetricReport depth_metrics(const DepthMap& pred, const DepthMap& gt);

/// ATE and RPE over every window of five consecutive frames, each window
/// expressed in its first camera and scale-aligned to ground truth.
MetricReport ate_rpe_5frame(const std::vector<PoseSE3>& pred, const std::vector<PoseSE3>& gt);

/// Nearest-neighbour index over a fixed point set.
class NearestNeighbors {
 public:
  explicit NearestNeighbors(const std::vector<Eigen::Vector3d>& points);
  ~NearestNeighbors();
  NearestNeighbors(NearestNeighbors&&) noexcept;
  NearestNeighbors& operator=(NearestNeighbors&&) noexcept;

  /// Index and distance of the closest point.
  std::pair<std::size_t, double> nearest(const Eigen::Vector3d& q) const;
  std::size_t size() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

struct IcpOptions {
  int max_iters = 50;
  double tolerance = 1e-12;
  /// Correspondences farther than this are ignored.
  double max_distance = std::numeric_limits<double>::infinity();
  /// Estimate a uniform scale as well (similarity ICP).
  bool with_scale = false;
};

struct IcpResult {
  /// Maps src points onto dst: x -> scale * R x + t.
  PoseSE3 transform;
  double scale = 1.0;
  /// Fraction of src points with a correspondence at the last iteration.
  double fitness = 0.0;
  double rmse = 0.0;
  int iterations = 0;
  /// RMS correspondence distance before each update and after the last one.
  std::vector<double> residuals;
};

IcpResult icp_register(const fusion::PointCloud& src, const fusion::PointCloud& dst, const IcpOptions& options = {});

fusion::PointCloud transform_cloud(const fusion::PointCloud& cloud, const PoseSE3& pose, double scale = 1.0);

/// Acc, Comp, Chamfer, Precision, Recall, F1 (percentages for the last three).
MetricReport recon_metrics(const fusion::PointCloud& pred, const fusion::PointCloud& gt, double threshold = 5.0);

}  // namespace endorecon::metrics
