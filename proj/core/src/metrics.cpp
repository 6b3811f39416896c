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

#include "endorecon/metrics.hpp"

#include <algorithm>
#include <boost/geometry.hpp>
#include <boost/geometry/index/rtree.hpp>
#include <cmath>
#include <Eigen/Geometry>
#include <sstream>

#include "endorecon/error.hpp"
#include "endorecon/io.hpp"

namespace endorecon::metrics {

namespace bg = boost::geometry;
namespace bgi = boost::geometry::index;

void MetricReport::set(const std::string& name, double v) {
  for (auto& [n, val] : values) {
    if (n == name) {
      val = v;
      return;
    }
  }
  values.emplace_back(name, v);
}

void MetricReport::count(const std::string& name, std::size_t n) { counts.emplace_back(name, n); }

double MetricReport::get(const std::string& name) const {
  for (const auto& [n, v] : values)
    if (n == name) return v;
  fail(ErrorKind::kData, "metric report has no value named " + name);
}

std::string MetricReport::key_value() const {
  std::string out;
  for (const auto& [n, v] : values) out += n + "=" + io::format_double(v) + "\n";
  for (const auto& [n, c] : counts) out += n + "=" + std::to_string(c) + "\n";
  for (const auto& f : flags) out += "flag=" + f + "\n";
  return out;
}

std::string MetricReport::table() const {
  std::string head, row;
  for (const auto& [n, v] : values) {
    head += (head.empty() ? "" : "\t") + n;
    row += (row.empty() ? "" : "\t") + io::format_double(v);
  }
  for (const auto& [n, c] : counts) {
    head += (head.empty() ? "" : "\t") + n;
    row += (row.empty() ? "" : "\t") + std::to_string(c);
  }
  return head + "\n" + row + "\n";
}

namespace {

void check_same_size(const DepthMap& a, const DepthMap& b, const char* what) {
  if (a.width() != b.width() || a.height() != b.height()) {
    fail(ErrorKind::kData, std::string(what) + ": prediction and ground truth sizes differ");
  }
}

double median_of(std::vector<double> v) {
  const std::size_t n = v.size();
  std::sort(v.begin(), v.end());
  return n % 2 == 1 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

DepthAlignment finish(const DepthMap& pred, const DepthMap& gt, double s, double t, const DepthEvalConfig& c) {
  if (!(c.max_depth > c.min_depth) || !(c.min_depth > 0.0)) fail(ErrorKind::kConfig, "depth caps must satisfy 0 < min < max");
  DepthAlignment out;
  out.scale = s;
  out.shift = t;
  out.pred = DepthMap(pred.width(), pred.height());
  out.gt = DepthMap(gt.width(), gt.height());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred.valid(i)) out.pred.set(i, std::clamp(s * pred.at(i) + t, c.min_depth, c.max_depth));
    if (gt.valid(i) && gt.at(i) > c.min_depth && gt.at(i) <= c.max_depth) out.gt.set(i, gt.at(i));
  }
  return out;
}

}  // namespace

DepthAlignment align_depth_lsq(const DepthMap& pred, const DepthMap& gt, const DepthEvalConfig& config) {
  check_same_size(pred, gt, "align_depth_lsq");
  double n = 0, sp = 0, sg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred.valid(i) || !gt.valid(i)) continue;
    n += 1;
    sp += pred.at(i);
    sg += gt.at(i);
  }
  if (n == 0) fail(ErrorKind::kData, "align_depth_lsq: prediction and ground truth share no valid pixel");
  const double mp = sp / n;
  const double mg = sg / n;
  double spp = 0, spg = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred.valid(i) || !gt.valid(i)) continue;
    const double dp = pred.at(i) - mp;
    spp += dp * dp;
    spg += dp * (gt.at(i) - mg);
  }
  DepthAlignment out;
  if (spp <= 1e-24 * std::max(1.0, mp * mp) * n) {
    out = finish(pred, gt, 1.0, mg - mp, config);
    out.degenerate = true;
  } else {
    const double s = spg / spp;
    out = finish(pred, gt, s, mg - s * mp, config);
  }
  return out;
}

DepthAlignment align_depth(const DepthMap& pred, const DepthMap& gt, const DepthEvalConfig& config) {
  check_same_size(pred, gt, "align_depth");
  switch (config.mode) {
    case DepthAlignMode::kLeastSquares:
      return align_depth_lsq(pred, gt, config);
    case DepthAlignMode::kMedian: {
      std::vector<double> p, g;
      for (std::size_t i = 0; i < pred.size(); ++i) {
        if (pred.valid(i) && gt.valid(i)) {
          p.push_back(pred.at(i));
          g.push_back(gt.at(i));
        }
      }
      if (p.empty()) fail(ErrorKind::kData, "align_depth: prediction and ground truth share no valid pixel");
      return finish(pred, gt, median_of(g) / median_of(p), 0.0, config);
    }
    case DepthAlignMode::kNone:
      return finish(pred, gt, 1.0, 0.0, config);
  }
  return finish(pred, gt, 1.0, 0.0, config);
}

MetricReport depth_metrics(const DepthMap& pred, const DepthMap& gt) {
  check_same_size(pred, gt, "depth_metrics");
  double n = 0, abs_rel = 0, sq_rel = 0, sq = 0, sq_log = 0, good = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (!pred.valid(i) || !gt.valid(i)) continue;
    const double p = pred.at(i);
    const double g = gt.at(i);
    const double d = p - g;
    n += 1;
    abs_rel += std::abs(d) / g;
    sq_rel += d * d / g;
    sq += d * d;
    const double l = std::log(p) - std::log(g);
    sq_log += l * l;
    if (std::max(p / g, g / p) < 1.25) good += 1;
  }
  if (n == 0) fail(ErrorKind::kData, "depth_metrics: no pixel is valid in both maps");
  MetricReport r;
  r.set("abs_rel", abs_rel / n);
  r.set("sq_rel", sq_rel / n);
  r.set("rmse", std::sqrt(sq / n));
  r.set("rmse_log", std::sqrt(sq_log / n));
  r.set("delta_1.25", 100.0 * good / n);
  r.count("pixels", static_cast<std::size_t>(n));
  return r;
}

namespace {

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return s / static_cast<double>(v.size());
}

double std_of(const std::vector<double>& v) {
  const double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size()));
}

}  // namespace

MetricReport ate_rpe_5frame(const std::vector<PoseSE3>& pred, const std::vector<PoseSE3>& gt) {
  constexpr std::size_t kSnippet = 5;
  if (pred.size() != gt.size()) fail(ErrorKind::kData, "ate_rpe: trajectories differ in length");
  if (gt.size() < kSnippet) fail(ErrorKind::kData, "ate_rpe: need at least five frames");
  std::vector<double> ates, rpes;
  std::size_t degenerate = 0;
  for (std::size_t s = 0; s + kSnippet <= gt.size(); ++s) {
    const PoseSE3 gi = invert(gt[s]);
    const PoseSE3 pi = invert(pred[s]);
    std::vector<Eigen::Vector3d> g(kSnippet), p(kSnippet);
    for (std::size_t k = 0; k < kSnippet; ++k) {
      g[k] = compose(gi, gt[s + k]).translation;
      p[k] = compose(pi, pred[s + k]).translation;
    }
    double num = 0.0, den = 0.0;
    for (std::size_t k = 0; k < kSnippet; ++k) {
      num += g[k].dot(p[k]);
      den += p[k].squaredNorm();
    }
    double scale = 1.0;
    if (den > 1e-300) {
      scale = num / den;
    } else {
      ++degenerate;
    }
    double ate = 0.0;
    for (std::size_t k = 0; k < kSnippet; ++k) ate += (scale * p[k] - g[k]).squaredNorm();
    ates.push_back(std::sqrt(ate / kSnippet));
    double rpe = 0.0;
    for (std::size_t k = 0; k + 1 < kSnippet; ++k) {
      const Eigen::Vector3d rg = compose(invert(gt[s + k]), gt[s + k + 1]).translation;
      const Eigen::Vector3d rp = compose(invert(pred[s + k]), pred[s + k + 1]).translation;
      rpe += (scale * rp - rg).squaredNorm();
    }
    rpes.push_back(std::sqrt(rpe / (kSnippet - 1)));
  }
  MetricReport r;
  r.set("ate_mean", mean_of(ates));
  r.set("ate_std", std_of(ates));
  r.set("rpe_mean", mean_of(rpes));
  r.set("rpe_std", std_of(rpes));
  r.count("snippets", ates.size());
  r.count("degenerate_snippets", degenerate);
  if (degenerate > 0) r.flags.push_back("zero_motion_snippet_scale_fallback");
  return r;
}

struct NearestNeighbors::Impl {
  using Point = bg::model::point<double, 3, bg::cs::cartesian>;
  using Value = std::pair<Point, std::size_t>;
  bgi::rtree<Value, bgi::rstar<16>> tree;
  const std::vector<Eigen::Vector3d>* points = nullptr;
};

NearestNeighbors::NearestNeighbors(const std::vector<Eigen::Vector3d>& points) : impl_(std::make_unique<Impl>()) {
  if (points.empty()) fail(ErrorKind::kData, "nearest neighbours: empty point set");
  std::vector<Impl::Value> values;
  values.reserve(points.size());
  for (std::size_t i = 0; i < points.size(); ++i) {
    values.emplace_back(Impl::Point(points[i].x(), points[i].y(), points[i].z()), i);
  }
  // Packing constructor: bulk-loaded and independent of insertion heuristics.
  impl_->tree = bgi::rtree<Impl::Value, bgi::rstar<16>>(values.begin(), values.end());
  impl_->points = &points;
}

NearestNeighbors::~NearestNeighbors() = default;
NearestNeighbors::NearestNeighbors(NearestNeighbors&&) noexcept = default;
NearestNeighbors& NearestNeighbors::operator=(NearestNeighbors&&) noexcept = default;

std::size_t NearestNeighbors::size() const { return impl_->tree.size(); }

std::pair<std::size_t, double> NearestNeighbors::nearest(const Eigen::Vector3d& q) const {
  const Impl::Point p(q.x(), q.y(), q.z());
  std::size_t best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (auto it = impl_->tree.qbegin(bgi::nearest(p, 1)); it != impl_->tree.qend(); ++it) {
    const double d = ((*impl_->points)[it->second] - q).norm();
    if (d < best_d || (d == best_d && it->second < best)) {
      best_d = d;
      best = it->second;
    }
  }
  return {best, best_d};
}

fusion::PointCloud transform_cloud(const fusion::PointCloud& cloud, const PoseSE3& pose, double scale) {
  fusion::PointCloud out = cloud;
  const Eigen::Matrix3d r = pose.rotation_matrix();
  for (auto& p : out.points) p = scale * (r * p) + pose.translation;
  return out;
}

IcpResult icp_register(const fusion::PointCloud& src, const fusion::PointCloud& dst, const IcpOptions& options) {
  if (src.empty() || dst.empty()) fail(ErrorKind::kData, "icp: both clouds must be non-empty");
  if (options.max_iters < 0 || !(options.max_distance > 0.0)) fail(ErrorKind::kConfig, "icp: invalid options");
  const NearestNeighbors nn(dst.points);
  IcpResult res;
  Eigen::Matrix3d rot = Eigen::Matrix3d::Identity();
  Eigen::Vector3d trans = Eigen::Vector3d::Zero();
  double scale = 1.0;

  const auto correspond = [&](Eigen::Matrix3Xd* a, Eigen::Matrix3Xd* b) {
    std::vector<std::pair<std::size_t, std::size_t>> pairs;
    double sq = 0.0;
    for (std::size_t i = 0; i < src.size(); ++i) {
      const Eigen::Vector3d q = scale * (rot * src.points[i]) + trans;
      const auto [j, d] = nn.nearest(q);
      if (d > options.max_distance) continue;
      pairs.emplace_back(i, j);
      sq += d * d;
    }
    if (a) {
      a->resize(3, static_cast<Eigen::Index>(pairs.size()));
      b->resize(3, static_cast<Eigen::Index>(pairs.size()));
      for (std::size_t k = 0; k < pairs.size(); ++k) {
        a->col(static_cast<Eigen::Index>(k)) = src.points[pairs[k].first];
        b->col(static_cast<Eigen::Index>(k)) = dst.points[pairs[k].second];
      }
    }
    const double rmse = pairs.empty() ? 0.0 : std::sqrt(sq / static_cast<double>(pairs.size()));
    return std::make_pair(pairs.size(), rmse);
  };

  Eigen::Matrix3Xd a, b;
  auto [matched, rmse] = correspond(&a, &b);
  if (matched == 0) {
    res.fitness = 0.0;
    return res;
  }
  res.residuals.push_back(rmse);
  for (int it = 0; it < options.max_iters; ++it) {
    if (matched < 3) break;
    // Closed-form fit of the original src points onto their current partners.
    const Eigen::Matrix4d t = Eigen::umeyama(a, b, options.with_scale);
    const Eigen::Matrix3d sr = t.topLeftCorner<3, 3>();
    scale = options.with_scale ? std::cbrt(sr.determinant()) : 1.0;
    rot = sr / scale;
    trans = t.topRightCorner<3, 1>();
    res.iterations = it + 1;
    const double prev = rmse;
    std::tie(matched, rmse) = correspond(&a, &b);
    res.residuals.push_back(rmse);
    if (matched == 0 || std::abs(prev - rmse) <= options.tolerance) break;
  }
  res.transform.rotation = so3_log(rot);
  res.transform.translation = trans;
  res.scale = scale;
  res.fitness = static_cast<double>(matched) / static_cast<double>(src.size());
  res.rmse = rmse;
  return res;
}

MetricReport recon_metrics(const fusion::PointCloud& pred, const fusion::PointCloud& gt, double threshold) {
  if (pred.empty() || gt.empty()) fail(ErrorKind::kData, "recon_metrics: point clouds must be non-empty");
  if (!(threshold > 0.0)) fail(ErrorKind::kConfig, "recon_metrics: threshold must be positive");
  const auto directed = [threshold](const fusion::PointCloud& from, const fusion::PointCloud& to) {
    const NearestNeighbors nn(to.points);
    double sum = 0.0;
    std::size_t within = 0;
    for (const auto& p : from.points) {
      const double d = nn.nearest(p).second;
      sum += d;
      if (d < threshold) ++within;
    }
    return std::make_pair(sum / static_cast<double>(from.size()),
                          100.0 * static_cast<double>(within) / static_cast<double>(from.size()));
  };
  const auto [acc, prec] = directed(pred, gt);
  const auto [comp, rec] = directed(gt, pred);
  MetricReport r;
  r.set("acc", acc);
  r.set("comp", comp);
  r.set("chamfer", 0.5 * (acc + comp));
  r.set("precision", prec);
  r.set("recall", rec);
  r.set("f1", prec + rec > 0.0 ? 2.0 * prec * rec / (prec + rec) : 0.0);
  r.set("threshold", threshold);
  r.count("pred_points", pred.size());
  r.count("gt_points", gt.size());
  return r;
}

}  // namespace endorecon::metrics
