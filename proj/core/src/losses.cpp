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

#include "endorecon/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "endorecon/error.hpp"

namespace endorecon::losses {
namespace {

std::vector<std::size_t> valid_indices(std::span<const unsigned char> mask) {
  std::vector<std::size_t> idx;
  for (std::size_t i = 0; i < mask.size(); ++i)
    if (mask[i]) idx.push_back(i);
  return idx;
}

dn::Var abs_diff(dn::Var a, dn::Var b) { return dn::smooth_abs(a - b, kAbsEps); }

dn::Var sum_all(dn::Tape& tape, const std::vector<dn::Var>& terms) {
  if (terms.empty()) return tape.constant(0.0);
  dn::Var s = terms.front();
  for (std::size_t i = 1; i < terms.size(); ++i) s = s + terms[i];
  return s;
}

void check_channels(const Channels& a, const Channels& b, int width, int height) {
  if (a.empty() || a.size() != b.size()) fail(ErrorKind::kData, "image channel counts disagree");
  if (width < 3 || height < 3) {
    fail(ErrorKind::kData, "ssim: image " + std::to_string(width) + "x" + std::to_string(height) +
                               " is smaller than the 3x3 window");
  }
  const std::size_t n = static_cast<std::size_t>(width) * height;
  for (std::size_t c = 0; c < a.size(); ++c) {
    if (a[c].size() != n || b[c].size() != n) fail(ErrorKind::kData, "image channel size does not match geometry");
  }
}

}  // namespace

void LossWeights::validate() const {
  if (!(alpha >= 0.0 && alpha <= 1.0)) fail(ErrorKind::kConfig, "loss weights: alpha must lie in [0, 1]");
  for (double w : {lambda_p, lambda_e, lambda_sssi, lambda_pc, lambda_gc, lambda_regu}) {
    if (!(w >= 0.0) || !std::isfinite(w)) fail(ErrorKind::kConfig, "loss weights: weights must be finite and >= 0");
  }
}

Channels image_constants(dn::Tape& tape, const Image& img) {
  Channels out;
  for (int c = 0; c < img.channels(); ++c) {
    auto ch = img.channel(c);
    out.push_back(tape.constant(dn::Array::vector(std::vector<double>(ch.begin(), ch.end()))));
  }
  return out;
}

dn::Var ssim_map(const Channels& a, const Channels& b, int width, int height) {
  check_channels(a, b, width, height);
  const auto h = static_cast<std::size_t>(height);
  const auto w = static_cast<std::size_t>(width);
  std::vector<dn::Var> per_channel;
  for (std::size_t c = 0; c < a.size(); ++c) {
    const dn::Var mu_a = dn::box3x3_reflect(a[c], h, w);
    const dn::Var mu_b = dn::box3x3_reflect(b[c], h, w);
    const dn::Var var_a = dn::box3x3_reflect(a[c] * a[c], h, w) - mu_a * mu_a;
    const dn::Var var_b = dn::box3x3_reflect(b[c] * b[c], h, w) - mu_b * mu_b;
    const dn::Var cov = dn::box3x3_reflect(a[c] * b[c], h, w) - mu_a * mu_b;
    const dn::Var num = (2.0 * mu_a * mu_b + kSsimC1) * (2.0 * cov + kSsimC2);
    const dn::Var den = (mu_a * mu_a + mu_b * mu_b + kSsimC1) * (var_a + var_b + kSsimC2);
    per_channel.push_back(num / den);
  }
  return sum_all(a.front().tape(), per_channel) * (1.0 / static_cast<double>(per_channel.size()));
}

dn::Var photometric_loss(const Channels& target, const Channels& warped, int width, int height,
                         std::span<const unsigned char> valid, double alpha) {
  const std::size_t n = static_cast<std::size_t>(width) * height;
  if (valid.size() != n) fail(ErrorKind::kData, "photometric loss: mask size does not match the image");
  const std::vector<std::size_t> idx = valid_indices(valid);
  if (idx.empty()) fail(ErrorKind::kData, "photometric loss: empty valid mask");
  dn::Tape& tape = target.front().tape();
  std::vector<dn::Var> l1;
  for (std::size_t c = 0; c < target.size(); ++c) l1.push_back(abs_diff(target[c], warped[c]));
  dn::Var per_pixel = sum_all(tape, l1) * ((1.0 - alpha) / static_cast<double>(target.size()));
  if (alpha > 0.0) {
    per_pixel = per_pixel + (1.0 - ssim_map(target, warped, width, height)) * (0.5 * alpha);
  }
  return dn::mean(dn::gather(per_pixel, idx));
}

dn::Var edge_smoothness(dn::Var depth, std::span<const unsigned char> depth_valid, const Image& img) {
  const int w = img.width();
  const int h = img.height();
  const std::size_t n = img.pixels();
  if (depth.size() != n || depth_valid.size() != n) fail(ErrorKind::kData, "edge smoothness: depth and image sizes disagree");
  dn::Tape& tape = depth.tape();
  const std::vector<std::size_t> idx = valid_indices(depth_valid);
  if (idx.empty()) return tape.constant(0.0);
  std::vector<std::size_t> pos(n, 0);
  for (std::size_t k = 0; k < idx.size(); ++k) pos[idx[k]] = k;

  const dn::Var disp = 1.0 / dn::gather(depth, idx);
  const dn::Var norm_disp = disp / dn::mean(disp);

  auto image_weight = [&](std::size_t p, std::size_t q) {
    double g = 0.0;
    for (int c = 0; c < img.channels(); ++c) g += std::abs(img.channel(c)[p] - img.channel(c)[q]);
    return std::exp(-g / img.channels());
  };
  auto direction_term = [&](int dx, int dy) -> dn::Var {
    std::vector<std::size_t> first, second;
    std::vector<double> weight;
    for (int y = 0; y + dy < h; ++y) {
      for (int x = 0; x + dx < w; ++x) {
        const std::size_t p = static_cast<std::size_t>(y) * w + x;
        const std::size_t q = static_cast<std::size_t>(y + dy) * w + x + dx;
        if (!depth_valid[p] || !depth_valid[q]) continue;
        first.push_back(pos[p]);
        second.push_back(pos[q]);
        weight.push_back(image_weight(p, q));
      }
    }
    if (first.empty()) return tape.constant(0.0);
    const dn::Var grad = abs_diff(dn::gather(norm_disp, second), dn::gather(norm_disp, first));
    return dn::mean(grad * tape.constant(dn::Array::vector(std::move(weight))));
  };
  return direction_term(1, 0) + direction_term(0, 1);
}

dn::Var normalize_depth(dn::Var depth, std::span<const unsigned char> valid) {
  if (valid.size() != depth.size()) fail(ErrorKind::kData, "normalize_depth: mask size does not match the depth");
  const std::vector<std::size_t> idx = valid_indices(valid);
  if (idx.empty()) fail(ErrorKind::kData, "normalize_depth: no valid pixel");
  const dn::Var vals = dn::gather(depth, idx);
  std::vector<std::size_t> order(idx.size());
  std::iota(order.begin(), order.end(), 0);
  const auto& v = vals.value();
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  const std::size_t m = order.size() / 2;
  const dn::Var median = order.size() % 2 == 1
                             ? dn::gather(vals, {order[m]})
                             : (dn::gather(vals, {order[m - 1]}) + dn::gather(vals, {order[m]})) * 0.5;
  const dn::Var centred = vals - median;
  const dn::Var scale = dn::mean(dn::smooth_abs(centred, kAbsEps));
  if (!(scale.value()[0] >= 1e-9)) fail(ErrorKind::kData, "normalize_depth: degenerate (constant) depth map");
  return centred / scale;
}

dn::Var sssi_loss(dn::Var target_depth, dn::Var warped_depth, std::span<const unsigned char> valid) {
  if (target_depth.size() != warped_depth.size()) fail(ErrorKind::kData, "sssi loss: depth sizes disagree");
  return dn::mean(abs_diff(normalize_depth(target_depth, valid), normalize_depth(warped_depth, valid)));
}

dn::Var alignment_regularizer(dn::Var weights, dn::Var alpha, dn::Var alpha0, dn::Var beta_tilde) {
  return dn::mean(dn::square(weights - 1.0)) + dn::mean(dn::square(alpha - alpha0)) + dn::mean(dn::square(beta_tilde));
}

std::vector<double> ssim(const Image& a, const Image& b) {
  if (a.width() != b.width() || a.height() != b.height() || a.channels() != b.channels()) {
    fail(ErrorKind::kData, "ssim: image shapes disagree");
  }
  dn::Tape tape;
  const dn::Var s = ssim_map(image_constants(tape, a), image_constants(tape, b), a.width(), a.height());
  const auto v = s.value().values();
  return {v.begin(), v.end()};
}

double photometric_loss(const Image& target, const Image& warped, std::span<const unsigned char> valid, double alpha) {
  if (target.width() != warped.width() || target.height() != warped.height() ||
      target.channels() != warped.channels()) {
    fail(ErrorKind::kData, "photometric loss: image shapes disagree");
  }
  dn::Tape tape;
  return photometric_loss(image_constants(tape, target), image_constants(tape, warped), target.width(),
                          target.height(), valid, alpha)
      .value()[0];
}

namespace {

dn::Var depth_constant(dn::Tape& tape, const DepthMap& d) {
  std::vector<double> vals(d.size(), 0.0);
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.valid(i)) vals[i] = d.at(i);
  return tape.constant(dn::Array::vector(std::move(vals)));
}

std::vector<unsigned char> mask_of(const DepthMap& d) { return {d.mask().begin(), d.mask().end()}; }

}  // namespace

double edge_smoothness(const DepthMap& depth, const Image& img) {
  if (depth.width() != img.width() || depth.height() != img.height()) {
    fail(ErrorKind::kData, "edge smoothness: depth and image sizes disagree");
  }
  dn::Tape tape;
  return edge_smoothness(depth_constant(tape, depth), mask_of(depth), img).value()[0];
}

NormalizedDepth normalize_depth(const DepthMap& depth) {
  dn::Tape tape;
  const std::vector<unsigned char> mask = mask_of(depth);
  const dn::Var d = depth_constant(tape, depth);
  const dn::Var nd = normalize_depth(d, mask);
  NormalizedDepth out;
  out.values.assign(depth.size(), 0.0);
  std::size_t k = 0;
  for (std::size_t i = 0; i < depth.size(); ++i)
    if (mask[i]) out.values[i] = nd.value()[k++];
  // Recover shift and scale from two distinct entries.
  const dn::Var vals = dn::gather(d, valid_indices(mask));
  std::size_t a = 0, b = 0;
  for (std::size_t i = 1; i < vals.size(); ++i) {
    if (vals.value()[i] != vals.value()[a]) {
      b = i;
      break;
    }
  }
  out.scale = (vals.value()[b] - vals.value()[a]) / (nd.value()[b] - nd.value()[a]);
  out.shift = vals.value()[a] - out.scale * nd.value()[a];
  return out;
}

double sssi_loss(const DepthMap& target, const DepthMap& warped, std::span<const unsigned char> valid) {
  if (target.size() != warped.size() || valid.size() != target.size()) {
    fail(ErrorKind::kData, "sssi loss: map sizes disagree");
  }
  std::vector<unsigned char> mask(valid.begin(), valid.end());
  for (std::size_t i = 0; i < mask.size(); ++i) mask[i] = mask[i] && target.valid(i) && warped.valid(i);
  dn::Tape tape;
  return sssi_loss(depth_constant(tape, target), depth_constant(tape, warped), mask).value()[0];
}

double total_depth_loss(const DepthLossParts& p, const LossWeights& w) {
  return w.lambda_p * p.photometric + w.lambda_sssi * p.sssi + w.lambda_e * p.edge;
}

double total_recon_loss(const ReconLossParts& p, const LossWeights& w) {
  return w.lambda_pc * p.photometric + w.lambda_gc * p.geometric + w.lambda_regu * p.regularization;
}

PairConsistency pair_consistency(const ConsistencyFrame& fi, const ConsistencyFrame& fj, dn::Var rotation,
                                 dn::Var translation, const CameraVars& cam, const PixelSet& pixels) {
  dn::Tape& tape = fi.depth.tape();
  std::vector<unsigned char> src_valid(pixels.size());
  for (std::size_t k = 0; k < pixels.size(); ++k) src_valid[k] = fi.depth_valid[pixels.index[k]];
  const ProjectedPoints proj =
      project_points(dn::gather(fi.depth, pixels.index), src_valid, rotation, translation, cam, pixels);

  PairConsistency out;
  // Photometric term: image j is a constant field, so only the projection mask applies.
  const std::vector<std::size_t> pc_pos = valid_indices(proj.valid);
  out.photometric_count = pc_pos.size();
  if (pc_pos.empty()) {
    out.photometric_sum = tape.constant(0.0);
  } else {
    const int channels = fi.image->channels();
    std::vector<dn::Var> per_channel;
    for (int c = 0; c < channels; ++c) {
      auto ci = fi.image->channel(c);
      auto cj = fj.image->channel(c);
      const dn::Var field = tape.constant(dn::Array::vector(std::vector<double>(cj.begin(), cj.end())));
      const SampledField sj = sample_field(field, {}, cam.width, cam.height, proj);
      std::vector<double> own(pc_pos.size());
      for (std::size_t k = 0; k < pc_pos.size(); ++k) own[k] = ci[pixels.index[pc_pos[k]]];
      per_channel.push_back(abs_diff(tape.constant(dn::Array::vector(std::move(own))), dn::gather(sj.values, pc_pos)));
    }
    out.photometric_sum = dn::sum(sum_all(tape, per_channel)) * (1.0 / channels);
  }

  // Geometric term.
  const SampledField dj = sample_field(fj.depth, fj.depth_valid, cam.width, cam.height, proj);
  std::vector<std::size_t> gc_pos;
  for (std::size_t k = 0; k < dj.valid.size(); ++k) {
    if (dj.valid[k] && dj.values.value()[k] + proj.z.value()[k] >= 1e-9) gc_pos.push_back(k);
  }
  out.geometric_count = gc_pos.size();
  if (gc_pos.empty()) {
    out.geometric_sum = tape.constant(0.0);
  } else {
    const dn::Var a = dn::gather(dj.values, gc_pos);
    const dn::Var b = dn::gather(proj.z, gc_pos);
    out.geometric_sum = dn::sum(abs_diff(a, b) / (a + b));
  }
  return out;
}

ConsistencyTotals combine(dn::Tape& tape, const std::vector<PairConsistency>& pairs) {
  ConsistencyTotals t;
  std::vector<dn::Var> pc, gc;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    pc.push_back(pairs[i].photometric_sum);
    gc.push_back(pairs[i].geometric_sum);
    t.photometric_count += pairs[i].photometric_count;
    t.geometric_count += pairs[i].geometric_count;
    if (pairs[i].photometric_count == 0 && pairs[i].geometric_count == 0) t.empty_pairs.push_back(i);
  }
  t.photometric = t.photometric_count == 0 ? tape.constant(0.0)
                                           : sum_all(tape, pc) * (1.0 / static_cast<double>(t.photometric_count));
  t.geometric = t.geometric_count == 0 ? tape.constant(0.0)
                                       : sum_all(tape, gc) * (1.0 / static_cast<double>(t.geometric_count));
  return t;
}

namespace {

struct Evaluated {
  std::vector<PairConsistency> pairs;
  double photometric = 0.0;
  double geometric = 0.0;
  std::size_t photometric_count = 0;
  std::size_t geometric_count = 0;
};

Evaluated evaluate_consistency(const std::vector<PosedFrame>& frames, const std::vector<FramePair>& pairs,
                               const Intrinsics& k, int stride) {
  dn::Tape tape;
  const CameraVars cam = constant_camera(tape, k);
  const PixelSet pixels = PixelSet::grid(k.width, k.height, stride);
  std::vector<ConsistencyFrame> cf;
  for (const PosedFrame& f : frames) {
    if (f.depth.width() != k.width || f.depth.height() != k.height || f.image.width() != k.width ||
        f.image.height() != k.height) {
      fail(ErrorKind::kData, "consistency: frame size does not match the intrinsics");
    }
    cf.push_back({depth_constant(tape, f.depth), mask_of(f.depth), &f.image});
  }
  Evaluated e;
  for (const auto& [i, j] : pairs) {
    if (i >= frames.size() || j >= frames.size()) fail(ErrorKind::kData, "consistency: pair index out of range");
    const PoseSE3 rel = compose(invert(frames[j].pose), frames[i].pose);
    const Eigen::Matrix3d rm = rel.rotation_matrix();
    std::vector<double> rv(9);
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b) rv[a * 3 + b] = rm(a, b);
    const dn::Var rot = tape.constant(dn::Array::matrix(3, 3, rv));
    const dn::Var tr = tape.constant(dn::Array::vector({rel.translation.x(), rel.translation.y(), rel.translation.z()}));
    e.pairs.push_back(pair_consistency(cf[i], cf[j], rot, tr, cam, pixels));
  }
  const ConsistencyTotals totals = combine(tape, e.pairs);
  e.photometric = totals.photometric.value()[0];
  e.geometric = totals.geometric.value()[0];
  e.photometric_count = totals.photometric_count;
  e.geometric_count = totals.geometric_count;
  return e;
}

}  // namespace

ConsistencyResult photometric_consistency(const std::vector<PosedFrame>& frames, const std::vector<FramePair>& pairs,
                                          const Intrinsics& k, int stride) {
  const Evaluated e = evaluate_consistency(frames, pairs, k, stride);
  ConsistencyResult r{e.photometric, e.photometric_count, {}};
  for (const PairConsistency& p : e.pairs) r.per_pair_points.push_back(p.photometric_count);
  return r;
}

ConsistencyResult geometric_consistency(const std::vector<PosedFrame>& frames, const std::vector<FramePair>& pairs,
                                        const Intrinsics& k, int stride) {
  const Evaluated e = evaluate_consistency(frames, pairs, k, stride);
  ConsistencyResult r{e.geometric, e.geometric_count, {}};
  for (const PairConsistency& p : e.pairs) r.per_pair_points.push_back(p.geometric_count);
  return r;
}

}  // namespace endorecon::losses
