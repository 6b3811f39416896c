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

#include <gtest/gtest.h>

#include <cmath>

#include "endorecon/error.hpp"
#include "endorecon/recon_optimizer.hpp"
#include "endorecon/synth.hpp"

namespace er = endorecon;
namespace rc = endorecon::recon;
namespace sy = endorecon::synth;

namespace {

using Pairs = std::vector<rc::FramePair>;

rc::Predictions consistent_predictions(int frames, int size) {
  const auto scene = sy::make_terrain_scene(frames, 5, size, size);
  const auto seq = sy::corrupt_sequence(scene, 5);
  rc::Predictions p;
  for (int i = 0; i < frames; ++i) p.frames.push_back({seq.truth[i].image, seq.truth[i].depth});
  p.relative = seq.true_relative;
  p.intrinsics = scene.intrinsics;
  return p;
}

rc::Predictions corrupted_predictions(int frames, int size, std::uint64_t seed) {
  const auto scene = sy::make_terrain_scene(frames, seed, size, size);
  const auto seq = sy::corrupt_sequence(scene, seed);
  rc::Predictions p;
  for (int i = 0; i < frames; ++i) p.frames.push_back({seq.truth[i].image, seq.depth[i]});
  p.relative = seq.noisy_relative;
  p.intrinsics = scene.intrinsics;
  return p;
}

rc::ReconOptions small_options(int epochs, int iters) {
  rc::ReconOptions o;
  o.epochs = epochs;
  o.iters_per_epoch = iters;
  o.patch_size = 8;
  return o;
}

er::PoseSE3 pose(double rx, double ry, double rz, double tx, double ty, double tz) {
  er::PoseSE3 p;
  p.rotation = Eigen::Vector3d(rx, ry, rz);
  p.translation = Eigen::Vector3d(tx, ty, tz);
  return p;
}

}  // namespace

TEST(SelectKeyframes, ChainOnly) {
  EXPECT_EQ(rc::select_keyframes(3, 1, 0), (Pairs{{0, 1}, {1, 2}}));
}

TEST(SelectKeyframes, TwoFramesGiveOnePair) {
  EXPECT_EQ(rc::select_keyframes(2, 1, 0).size(), 1u);
  EXPECT_EQ(rc::select_keyframes(2, 1, 5), (Pairs{{0, 1}, {1, 0}}));
}

TEST(SelectKeyframes, ChainPlusGlobalFrames) {
  Pairs expected;
  for (std::size_t i = 0; i + 1 < 10; ++i) expected.push_back({i, i + 1});
  for (std::size_t i = 0; i < 10; ++i)
    for (std::size_t j : {0u, 5u})
      if (i != j) expected.push_back({i, j});
  std::sort(expected.begin(), expected.end());
  expected.erase(std::unique(expected.begin(), expected.end()), expected.end());
  EXPECT_EQ(rc::select_keyframes(10, 1, 5), expected);
}

TEST(SelectKeyframes, EveryFrameCoveredAndNoSelfPairs) {
  for (std::size_t n : {2u, 3u, 7u, 12u}) {
    const auto pairs = rc::select_keyframes(n, 2, rc::default_global_stride(n));
    std::vector<bool> seen(n, false);
    for (const auto& [i, j] : pairs) {
      EXPECT_NE(i, j);
      seen[i] = seen[j] = true;
    }
    for (bool s : seen) EXPECT_TRUE(s);
  }
  EXPECT_EQ(rc::default_global_stride(3), 2u);
  EXPECT_EQ(rc::default_global_stride(20), 4u);
  EXPECT_THROW(rc::select_keyframes(1, 1, 0), er::Error);
}

TEST(InitProblem, IdentityAlignment) {
  const auto p = rc::init_problem(consistent_predictions(3, 32), small_options(1, 1));
  ASSERT_EQ(p.size(), 3u);
  for (const auto& a : p.alignment) {
    EXPECT_EQ(a.alpha, 1.0);
    EXPECT_EQ(a.beta, 0.0);
    for (double w : a.anchor_weights) EXPECT_EQ(w, 1.0);
    EXPECT_EQ(a.anchor_weights.size(), 16u);
  }
}

TEST(InitProblem, ChainComposesToTrajectory) {
  const std::vector<er::PoseSE3> rel{pose(0.1, 0.0, 0.05, 1, 2, 3), pose(-0.02, 0.2, 0.0, -4, 0.5, 1)};
  const auto abs = rc::chain_to_absolute(rel);
  ASSERT_EQ(abs.size(), 3u);
  EXPECT_TRUE(abs[0].matrix().isIdentity(0.0));
  // abs[2]^-1 * abs[0] maps camera 0 into camera 2, i.e. rel[1] after rel[0].
  const Eigen::Matrix4d t02 = abs[2].matrix().inverse() * abs[0].matrix();
  EXPECT_TRUE(t02.isApprox(rel[1].matrix() * rel[0].matrix(), 1e-12));
  const auto back = rc::absolute_to_chain(abs);
  for (std::size_t i = 0; i < rel.size(); ++i) EXPECT_TRUE(back[i].matrix().isApprox(rel[i].matrix(), 1e-10));
}

TEST(InitProblem, IntrinsicsRequired) {
  auto preds = consistent_predictions(2, 16);
  const er::Intrinsics k = *preds.intrinsics;
  preds.intrinsics.reset();
  EXPECT_THROW(rc::init_problem(preds, small_options(1, 1)), er::Error);
  er::Intrinsics over = k;
  over.fx *= 2.0;
  EXPECT_EQ(rc::init_problem(preds, small_options(1, 1), over).intrinsics.fx, over.fx);
}

TEST(Optimize, ZeroEpochsLeavesProblemUnchanged) {
  const auto p = rc::init_problem(corrupted_predictions(3, 32, 1), small_options(0, 10));
  const auto r = rc::optimize(p, small_options(0, 10));
  EXPECT_TRUE(r.epochs.empty());
  for (std::size_t i = 0; i < p.size(); ++i) {
    EXPECT_EQ(r.problem.alignment[i].alpha, p.alignment[i].alpha);
    EXPECT_EQ(r.problem.alignment[i].beta, p.alignment[i].beta);
    EXPECT_EQ(r.problem.alignment[i].anchor_weights, p.alignment[i].anchor_weights);
  }
  for (std::size_t i = 0; i < p.relative.size(); ++i) {
    EXPECT_EQ(r.problem.relative[i].rotation, p.relative[i].rotation);
    EXPECT_EQ(r.problem.relative[i].translation, p.relative[i].translation);
  }
  EXPECT_EQ(r.final.total, r.initial.total);
}

TEST(Optimize, ConsistentInputStaysPut) {
  const auto o = small_options(1, 30);
  const auto p = rc::init_problem(consistent_predictions(4, 32), o);
  const auto r = rc::optimize(p, o);
  EXPECT_LT(r.final.parts.geometric, 1e-3);
  // Movement in the optimiser's own units: log-scale, shift per reference
  // depth, weights, radians and translation relative to its length.
  double moved = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    moved = std::max(moved, std::abs(std::log(r.problem.alignment[i].alpha)));
    moved = std::max(moved, std::abs(r.problem.alignment[i].beta) / p.depth_reference[i]);
    for (double w : r.problem.alignment[i].anchor_weights) moved = std::max(moved, std::abs(w - 1.0));
  }
  for (std::size_t i = 0; i < p.relative.size(); ++i) {
    moved = std::max(moved, (r.problem.relative[i].rotation - p.relative[i].rotation).norm());
    moved = std::max(moved, (r.problem.relative[i].translation - p.relative[i].translation).norm() /
                                p.relative[i].translation.norm());
  }
  EXPECT_LT(moved, 1e-3);
}

TEST(Optimize, ReducesGeometricLossAndEpochStartsDoNotRise) {
  const auto o = small_options(3, 300);
  const auto r = rc::optimize(rc::init_problem(corrupted_predictions(4, 32, 2), o), o);
  ASSERT_EQ(r.epochs.size(), 3u);
  EXPECT_FALSE(r.aborted);
  EXPECT_LT(r.final.parts.geometric, 0.5 * r.initial.parts.geometric);
  for (std::size_t e = 1; e < r.epochs.size(); ++e) EXPECT_LE(r.epochs[e].start_loss, r.epochs[e - 1].start_loss);
  EXPECT_EQ(r.trace.size(), 3u * 300u);
}

TEST(Optimize, DeterministicTraceAndReport) {
  auto o = small_options(2, 15);
  o.seed = 7;
  const auto p = rc::init_problem(corrupted_predictions(3, 24, 3), o);
  const auto a = rc::optimize(p, o);
  const auto b = rc::optimize(p, o);
  EXPECT_EQ(a.trace, b.trace);
  EXPECT_EQ(rc::run_report(a, o), rc::run_report(b, o));
  EXPECT_NE(rc::run_report(a, o).find("\"epochs\""), std::string::npos);
}

TEST(Optimize, RejectsBadOptions) {
  const auto p = rc::init_problem(consistent_predictions(2, 16), small_options(1, 1));
  auto o = small_options(1, 1);
  o.learning_rate = 0.0;
  EXPECT_THROW(rc::optimize(p, o), er::Error);
  o = small_options(-1, 1);
  EXPECT_THROW(rc::optimize(p, o), er::Error);
}
