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

#include "endorecon/recon_optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "endorecon/diffnum/adamw.hpp"
#include "endorecon/error.hpp"
#include "endorecon/warp_ad.hpp"
#include "json.hpp"

namespace endorecon::recon {
namespace {

namespace dn = diffnum;

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t epoch, std::uint64_t frame) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (epoch + 1) + 0xbf58476d1ce4e5b9ull * (frame + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

double percentile95(const DepthMap& d) {
  std::vector<double> v;
  for (std::size_t i = 0; i < d.size(); ++i)
    if (d.valid(i)) v.push_back(d.at(i));
  if (v.empty()) fail(ErrorKind::kData, "reconstruction: frame has no valid depth");
  const std::size_t k = static_cast<std::size_t>(std::floor(0.95 * static_cast<double>(v.size() - 1)));
  std::nth_element(v.begin(), v.begin() + static_cast<std::ptrdiff_t>(k), v.end());
  return v[k];
}

// Flat parameter layout: per frame {log alpha, beta tilde, log w}, then per
// adjacent pair {rotation, translation}.
enum class Group { kLogAlpha, kBeta, kWeights, kRotation, kTranslation };

struct Layout {
  std::size_t frames = 0;
  std::size_t frame_slot(std::size_t i, int which) const { return 3 * i + static_cast<std::size_t>(which); }
  std::size_t rot_slot(std::size_t k) const { return 3 * frames + 2 * k; }
  std::size_t trans_slot(std::size_t k) const { return 3 * frames + 2 * k + 1; }
  std::size_t slots() const { return 3 * frames + 2 * (frames - 1); }
  Group group(std::size_t slot) const {
    if (slot < 3 * frames) return static_cast<Group>(slot % 3);
    return (slot - 3 * frames) % 2 == 0 ? Group::kRotation : Group::kTranslation;
  }
};

double lr_scale(const LrScales& s, Group g) {
  switch (g) {
    case Group::kLogAlpha:
      return s.log_alpha;
    case Group::kBeta:
      return s.beta;
    case Group::kWeights:
      return s.weights;
    case Group::kRotation:
      return s.rotation;
    case Group::kTranslation:
      return s.translation;
  }
  return 1.0;
}

std::vector<dn::Array> pack(const ReconProblem& p) {
  const Layout lay{p.size()};
  std::vector<dn::Array> out(lay.slots());
  for (std::size_t i = 0; i < p.size(); ++i) {
    const auto& a = p.alignment[i];
    out[lay.frame_slot(i, 0)] = dn::Array::scalar(std::log(a.alpha));
    out[lay.frame_slot(i, 1)] = dn::Array::scalar(a.beta / p.depth_reference[i]);
    std::vector<double> lw(a.anchor_weights.size());
    for (std::size_t j = 0; j < lw.size(); ++j) lw[j] = std::log(a.anchor_weights[j]);
    out[lay.frame_slot(i, 2)] = dn::Array::vector(std::move(lw));
  }
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    const auto& r = p.relative[k];
    out[lay.rot_slot(k)] = dn::Array::vector({r.rotation.x(), r.rotation.y(), r.rotation.z()});
    out[lay.trans_slot(k)] = dn::Array::vector({r.translation.x(), r.translation.y(), r.translation.z()});
  }
  return out;
}

void unpack(const std::vector<dn::Array>& params, ReconProblem& p) {
  const Layout lay{p.size()};
  for (std::size_t i = 0; i < p.size(); ++i) {
    auto& a = p.alignment[i];
    a.alpha = std::exp(params[lay.frame_slot(i, 0)][0]);
    a.beta = params[lay.frame_slot(i, 1)][0] * p.depth_reference[i];
    const auto& lw = params[lay.frame_slot(i, 2)];
    for (std::size_t j = 0; j < a.anchor_weights.size(); ++j) a.anchor_weights[j] = std::exp(lw[j]);
  }
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    const auto& r = params[lay.rot_slot(k)];
    const auto& t = params[lay.trans_slot(k)];
    p.relative[k].rotation = Eigen::Vector3d(r[0], r[1], r[2]);
    p.relative[k].translation = Eigen::Vector3d(t[0], t[1], t[2]);
  }
}

// Per-anchor-set data that stays fixed while the parameters move.
struct Context {
  std::vector<align::LwlrSystem> systems;
  std::vector<dn::Array> raw;
  std::vector<std::vector<unsigned char>> raw_valid;
};

Context make_context(const ReconProblem& p, const ReconOptions& o) {
  Context c;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const DepthMap& d = p.frames[i].depth;
    c.systems.push_back(align::make_lwlr_system(p.anchors[i], {}, o.kernel_sigma));
    std::vector<double> raw(d.depth().begin(), d.depth().end());
    std::vector<unsigned char> valid(d.mask().begin(), d.mask().end());
    // Invalid pixels never reach a loss; a positive filler keeps them harmless.
    for (std::size_t k = 0; k < raw.size(); ++k)
      if (!valid[k]) raw[k] = 1.0;
    c.raw.push_back(dn::Array::vector(std::move(raw)));
    c.raw_valid.push_back(std::move(valid));
  }
  return c;
}

struct RelativeVars {
  dn::Var rotation;
  dn::Var translation;
};

// Motion from camera i into camera j composed along the adjacent chain.
RelativeVars chain_motion(const std::vector<RelativeVars>& adjacent, std::size_t i, std::size_t j) {
  const std::size_t lo = std::min(i, j);
  const std::size_t hi = std::max(i, j);
  RelativeVars m = adjacent[lo];
  for (std::size_t k = lo + 1; k < hi; ++k) {
    m.rotation = dn::matmul(adjacent[k].rotation, m.rotation);
    m.translation = dn::matmul(adjacent[k].rotation, m.translation) + adjacent[k].translation;
  }
  if (i < j) return m;
  const dn::Var rt = dn::transpose(m.rotation);
  return {rt, -dn::matmul(rt, m.translation)};
}

struct Built {
  dn::Var loss;
  std::vector<dn::Var> inputs;
  losses::ReconLossParts parts;
  ValidityStats stats;
};

Built build(dn::Tape& tape, const ReconProblem& p, const ReconOptions& o, const Context& ctx,
            const std::vector<dn::Array>& params, const PixelSet& pixels, bool trainable) {
  const Layout lay{p.size()};
  Built b;
  for (const auto& a : params) b.inputs.push_back(tape.input(a, trainable));

  const CameraVars cam = constant_camera(tape, p.intrinsics);
  std::vector<losses::ConsistencyFrame> frames;
  dn::Var reg = tape.constant(0.0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    const dn::Var alpha = dn::exp(b.inputs[lay.frame_slot(i, 0)]);
    const dn::Var beta_tilde = b.inputs[lay.frame_slot(i, 1)];
    const dn::Var w = dn::exp(b.inputs[lay.frame_slot(i, 2)]);
    const align::AlignedVars av =
        align::align_depth(ctx.systems[i], tape.constant(ctx.raw[i]), alpha, beta_tilde * p.depth_reference[i], w);
    b.stats.fallback_pixels += av.fallback_pixels;
    std::vector<unsigned char> valid = ctx.raw_valid[i];
    const auto& dv = av.depth.value();
    for (std::size_t k = 0; k < valid.size(); ++k) {
      if (valid[k] && !(dv[k] > 0.0 && std::isfinite(dv[k]))) {
        valid[k] = 0;
        ++b.stats.invalid_depth_pixels;
      }
    }
    frames.push_back({av.depth, std::move(valid), &p.frames[i].image});
    reg = reg + losses::alignment_regularizer(w, alpha, tape.constant(p.alpha_init[i]), beta_tilde);
  }
  reg = reg * (1.0 / static_cast<double>(p.size()));

  std::vector<RelativeVars> adjacent;
  for (std::size_t k = 0; k + 1 < p.size(); ++k) {
    adjacent.push_back({dn::rodrigues(b.inputs[lay.rot_slot(k)]), b.inputs[lay.trans_slot(k)]});
  }
  std::vector<losses::PairConsistency> pcs;
  for (const auto& [i, j] : p.pairs) {
    const RelativeVars m = chain_motion(adjacent, i, j);
    pcs.push_back(losses::pair_consistency(frames[i], frames[j], m.rotation, m.translation, cam, pixels));
  }
  const losses::ConsistencyTotals tot = losses::combine(tape, pcs);
  b.stats.pairs = p.pairs.size();
  b.stats.empty_pairs = tot.empty_pairs.size();
  b.stats.photometric_points = tot.photometric_count;
  b.stats.geometric_points = tot.geometric_count;
  b.parts = {tot.photometric.value()[0], tot.geometric.value()[0], reg.value()[0]};
  const auto& w = o.weights;
  b.loss = tot.photometric * w.lambda_pc + tot.geometric * w.lambda_gc + reg * w.lambda_regu;
  return b;
}

bool all_finite(const dn::Array& a) {
  return std::all_of(a.values().begin(), a.values().end(), [](double v) { return std::isfinite(v); });
}

void resample_anchors(ReconProblem& p, const ReconOptions& o, int epoch) {
  p.anchors.clear();
  for (std::size_t i = 0; i < p.size(); ++i) {
    p.anchors.push_back(align::sample_patch_anchors(p.frames[i].depth, o.patch_size,
                                                    mix_seed(o.seed, static_cast<std::uint64_t>(epoch), i)));
  }
}

}  // namespace

std::size_t default_global_stride(std::size_t frames) { return std::max<std::size_t>(2, frames / 5); }

std::vector<FramePair> select_keyframes(std::size_t frames, std::size_t local_window, std::size_t global_stride) {
  if (frames < 2) fail(ErrorKind::kData, "select_keyframes: need at least two frames");
  if (local_window < 1) fail(ErrorKind::kConfig, "select_keyframes: local window must be at least 1");
  std::set<FramePair> pairs;
  for (std::size_t i = 0; i < frames; ++i) {
    for (std::size_t d = 1; d <= local_window && i + d < frames; ++d) pairs.insert({i, i + d});
    if (global_stride == 0) continue;
    for (std::size_t j = 0; j < frames; j += global_stride) {
      if (j != i) pairs.insert({i, j});
    }
  }
  return {pairs.begin(), pairs.end()};
}

void ReconOptions::validate() const {
  if (epochs < 0 || iters_per_epoch < 0) fail(ErrorKind::kConfig, "reconstruction: epochs and iterations must be >= 0");
  if (!(learning_rate > 0.0)) fail(ErrorKind::kConfig, "reconstruction: learning rate must be positive");
  if (!(epoch_lr_decay > 0.0)) fail(ErrorKind::kConfig, "reconstruction: epoch decay must be positive");
  for (double s : {lr_scale.log_alpha, lr_scale.beta, lr_scale.weights, lr_scale.rotation, lr_scale.translation}) {
    if (!(s >= 0.0)) fail(ErrorKind::kConfig, "reconstruction: learning-rate scales must be >= 0");
  }
  if (patch_size < 2) fail(ErrorKind::kConfig, "reconstruction: patch size must be at least 2");
  if (stride < 1) fail(ErrorKind::kConfig, "reconstruction: stride must be at least 1");
  if (kernel_sigma < 0.0) fail(ErrorKind::kConfig, "reconstruction: kernel sigma must be >= 0");
  if (max_retries < 0) fail(ErrorKind::kConfig, "reconstruction: retries must be >= 0");
  weights.validate();
}

std::vector<PoseSE3> chain_to_absolute(const std::vector<PoseSE3>& relative) {
  std::vector<PoseSE3> out{PoseSE3::identity()};
  for (const PoseSE3& r : relative) out.push_back(compose(out.back(), invert(r)));
  return out;
}

std::vector<PoseSE3> absolute_to_chain(const std::vector<PoseSE3>& absolute) {
  std::vector<PoseSE3> out;
  for (std::size_t i = 0; i + 1 < absolute.size(); ++i) out.push_back(compose(invert(absolute[i + 1]), absolute[i]));
  return out;
}

std::vector<PoseSE3> ReconProblem::absolute_poses() const { return chain_to_absolute(relative); }

DepthMap ReconProblem::aligned_depth(std::size_t frame, double kernel_sigma) const {
  return align::apply_alignment(frames[frame].depth, alignment[frame], anchors[frame], kernel_sigma);
}

ReconProblem init_problem(Predictions predictions, const ReconOptions& options,
                          const std::optional<Intrinsics>& intrinsics_override) {
  options.validate();
  ReconProblem p;
  if (predictions.frames.size() < 2) fail(ErrorKind::kData, "reconstruction: need at least two frames");
  if (predictions.relative.size() + 1 != predictions.frames.size()) {
    fail(ErrorKind::kData, "reconstruction: expected one relative pose per adjacent frame pair");
  }
  if (intrinsics_override) {
    p.intrinsics = *intrinsics_override;
  } else if (predictions.intrinsics) {
    p.intrinsics = *predictions.intrinsics;
  } else {
    fail(ErrorKind::kConfig, "reconstruction: no intrinsics predicted and no override given");
  }
  p.intrinsics.validate();
  for (const ReconFrame& f : predictions.frames) {
    if (f.image.width() != p.intrinsics.width || f.image.height() != p.intrinsics.height ||
        f.depth.width() != p.intrinsics.width || f.depth.height() != p.intrinsics.height) {
      fail(ErrorKind::kData, "reconstruction: frame size disagrees with the intrinsics");
    }
  }
  p.frames = std::move(predictions.frames);
  p.relative = std::move(predictions.relative);
  resample_anchors(p, options, 0);
  for (std::size_t i = 0; i < p.size(); ++i) {
    p.alignment.push_back(align::AlignmentParams::identity(p.anchors[i].patch_count()));
    p.alpha_init.push_back(1.0);
    p.depth_reference.push_back(percentile95(p.frames[i].depth));
  }
  p.pairs = select_keyframes(p.size(), options.local_window,
                             options.global_stride.value_or(default_global_stride(p.size())));
  return p;
}

Evaluation evaluate(const ReconProblem& problem, const ReconOptions& options, int stride) {
  const Context ctx = make_context(problem, options);
  dn::Tape tape;
  const Built b = build(tape, problem, options, ctx, pack(problem),
                        PixelSet::grid(problem.intrinsics.width, problem.intrinsics.height, stride), false);
  return {b.parts, b.loss.value()[0], b.stats};
}

ReconResult optimize(ReconProblem problem, const ReconOptions& options) {
  options.validate();
  ReconResult res;
  res.initial = evaluate(problem, options, 1);
  const Layout lay{problem.size()};
  const PixelSet pixels = PixelSet::grid(problem.intrinsics.width, problem.intrinsics.height, options.stride);
  std::vector<dn::Array> params = pack(problem);
  dn::AdamW opt({options.learning_rate, 0.9, 0.999, 1e-8, 0.0});
  std::vector<dn::Array> good_params = params;
  dn::AdamW good_opt = opt;

  for (int epoch = 0; epoch < options.epochs && !res.aborted; ++epoch) {
    if (epoch > 0) {
      resample_anchors(problem, options, epoch);
      opt.scale_learning_rate(options.epoch_lr_decay);
    }
    const Context ctx = make_context(problem, options);
    EpochRecord rec;
    rec.epoch = epoch;
    rec.learning_rate = opt.options().learning_rate;
    for (int it = 0; it <= options.iters_per_epoch; ++it) {
      dn::Tape tape;
      const Built b = build(tape, problem, options, ctx, params, pixels, true);
      const double loss = b.loss.value()[0];
      bool finite = std::isfinite(loss);
      dn::Gradients grads;
      // The last pass of an epoch only measures the end loss.
      const bool step = it < options.iters_per_epoch;
      if (finite && step) {
        grads = tape.backward(b.loss);
        for (std::size_t s = 0; s < params.size() && finite; ++s) finite = all_finite(grads.at(b.inputs[s]));
      }
      if (!finite) {
        if (res.retries >= options.max_retries) {
          res.aborted = true;
          res.abort_reason = "non-finite loss after " + std::to_string(res.retries) + " step halvings";
          break;
        }
        ++res.retries;
        params = good_params;
        opt = good_opt;
        opt.scale_learning_rate(0.5);
        --it;
        continue;
      }
      if (it == 0) {
        rec.start_loss = loss;
        rec.start_parts = b.parts;
      }
      if (!step) {
        rec.end_loss = loss;
        rec.end_parts = b.parts;
        break;
      }
      res.trace.push_back(loss);
      good_params = params;
      good_opt = opt;
      opt.begin_step();
      for (std::size_t s = 0; s < params.size(); ++s) {
        opt.update(s, params[s], grads.at(b.inputs[s]), lr_scale(options.lr_scale, lay.group(s)));
      }
    }
    if (!res.aborted) res.epochs.push_back(rec);
  }
  if (res.aborted) params = good_params;
  unpack(params, problem);
  res.problem = std::move(problem);
  res.final = evaluate(res.problem, options, 1);
  return res;
}

namespace {

nlohmann::ordered_json parts_json(const losses::ReconLossParts& p) {
  return {{"photometric", p.photometric}, {"geometric", p.geometric}, {"regularization", p.regularization}};
}

nlohmann::ordered_json eval_json(const Evaluation& e) {
  return {{"total", e.total},
          {"parts", parts_json(e.parts)},
          {"pairs", e.stats.pairs},
          {"empty_pairs", e.stats.empty_pairs},
          {"photometric_points", e.stats.photometric_points},
          {"geometric_points", e.stats.geometric_points},
          {"fallback_pixels", e.stats.fallback_pixels},
          {"invalid_depth_pixels", e.stats.invalid_depth_pixels}};
}

}  // namespace

std::string run_report(const ReconResult& r, const ReconOptions& o) {
  nlohmann::ordered_json j;
  j["frames"] = r.problem.size();
  j["epochs_requested"] = o.epochs;
  j["iters_per_epoch"] = o.iters_per_epoch;
  j["learning_rate"] = o.learning_rate;
  j["seed"] = o.seed;
  auto pairs = nlohmann::ordered_json::array();
  for (const auto& [a, b] : r.problem.pairs) pairs.push_back({a, b});
  j["pairs"] = pairs;
  j["initial"] = eval_json(r.initial);
  j["final"] = eval_json(r.final);
  auto epochs = nlohmann::ordered_json::array();
  for (const EpochRecord& e : r.epochs) {
    epochs.push_back({{"epoch", e.epoch},
                      {"learning_rate", e.learning_rate},
                      {"start_loss", e.start_loss},
                      {"end_loss", e.end_loss},
                      {"start_parts", parts_json(e.start_parts)},
                      {"end_parts", parts_json(e.end_parts)}});
  }
  j["epochs"] = epochs;
  auto frames = nlohmann::ordered_json::array();
  const auto abs = r.problem.absolute_poses();
  for (std::size_t i = 0; i < r.problem.size(); ++i) {
    const auto& a = r.problem.alignment[i];
    frames.push_back({{"alpha", a.alpha},
                      {"beta", a.beta},
                      {"weights", a.anchor_weights},
                      {"pose_rotation", {abs[i].rotation.x(), abs[i].rotation.y(), abs[i].rotation.z()}},
                      {"pose_translation", {abs[i].translation.x(), abs[i].translation.y(), abs[i].translation.z()}}});
  }
  j["frames_out"] = frames;
  j["retries"] = r.retries;
  j["aborted"] = r.aborted;
  if (r.aborted) j["abort_reason"] = r.abort_reason;
  return j.dump(2) + "\n";
}

}  // namespace endorecon::recon
