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
#include <filesystem>
#include <random>

#include "endorecon/diffnum/gradcheck.hpp"
#include "endorecon/error.hpp"
#include "endorecon/gdv_lora.hpp"
#include "endorecon/synth.hpp"

namespace er = endorecon;
namespace gdv = endorecon::gdv;
namespace dn = endorecon::diffnum;
using dn::Array;

namespace {

struct SingleLayer {
  gdv::ParameterSet set;
  gdv::GdvLoraLayer layer;
};

SingleLayer make_layer(std::size_t d, std::size_t k, std::size_t r, std::uint64_t seed = 1) {
  SingleLayer s;
  std::mt19937_64 rng(seed);
  s.layer = gdv::add_gdv_layer(s.set, "l", d, k, r, rng);
  return s;
}

Array randn(dn::Shape shape, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Array a = Array::zeros(std::move(shape));
  for (double& v : a.values()) v = g(rng);
  return a;
}

void randomize_branches(SingleLayer& s, std::mt19937_64& rng) {
  for (const auto* br : {&s.layer.depth, &s.layer.motion}) {
    for (std::size_t id : {br->a, br->b, br->u, br->v}) s.set[id].value = randn(s.set[id].value.shape(), rng);
  }
}

Array eval_gdv(const SingleLayer& s, gdv::GateState g, const Array& x) {
  dn::Tape t;
  const auto bound = s.set.bind(t, gdv::Phase::kWarmUp);
  return gdv::gdv_forward(s.layer, bound, g, t.constant(x)).value();
}

er::Image random_image(int w, int h, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  er::Image img(w, h, 3);
  for (int c = 0; c < 3; ++c)
    for (double& v : img.channel(c)) v = u(rng);
  return img;
}

}  // namespace

TEST(LoraForward, ZeroInitGivesBaseOutput) {
  std::mt19937_64 rng(2);
  const Array w0 = randn({5, 3}, rng), a = randn({2, 3}, rng), x = randn({3, 4}, rng);
  dn::Tape t;
  const auto out = gdv::lora_forward(t.constant(w0), t.constant(a), t.constant(Array::zeros({5, 2})), t.constant(x));
  EXPECT_EQ(out.value(), dn::matmul(t.constant(w0), t.constant(x)).value());
}

TEST(LoraForward, IdentityFactors) {
  dn::Tape t;
  const auto out = gdv::lora_forward(t.constant(Array::zeros({2, 2})), t.constant(Array::identity(2)),
                                     t.constant(Array::identity(2)), t.constant(Array::matrix(2, 1, {1, 2})));
  EXPECT_EQ(out.value(), Array::matrix(2, 1, {1, 2}));
}

TEST(LoraForward, HandProduct) {
  dn::Tape t;
  const auto out = gdv::lora_forward(t.constant(Array::zeros({2, 2})), t.constant(Array::matrix(1, 2, {1, 1})),
                                     t.constant(Array::matrix(2, 1, {2, 0})), t.constant(Array::matrix(2, 1, {1, 2})));
  EXPECT_EQ(out.value(), Array::matrix(2, 1, {6, 0}));
}

TEST(GdvForward, UnitVectorsReduceToLoraBitForBit) {
  std::mt19937_64 rng(3);
  SingleLayer s = make_layer(6, 5, 3);
  for (const auto* br : {&s.layer.depth, &s.layer.motion}) {
    s.set[br->a].value = randn({3, 5}, rng);
    s.set[br->b].value = randn({6, 3}, rng);
  }
  const Array x = randn({5, 7}, rng);
  for (int g : {0, 1}) {
    const auto& br = g == 1 ? s.layer.depth : s.layer.motion;
    dn::Tape t;
    const Array lora = gdv::lora_forward(t.constant(s.set[s.layer.w0].value), t.constant(s.set[br.a].value),
                                         t.constant(s.set[br.b].value), t.constant(x))
                           .value();
    EXPECT_EQ(eval_gdv(s, {g}, x), lora);
  }
}

TEST(GdvForward, InactiveBranchDoesNotAffectOutput) {
  std::mt19937_64 rng(4);
  SingleLayer s = make_layer(4, 4, 2);
  randomize_branches(s, rng);
  const Array x = randn({4, 3}, rng);
  const Array before = eval_gdv(s, {1}, x);
  for (std::size_t id : {s.layer.motion.a, s.layer.motion.b, s.layer.motion.u, s.layer.motion.v}) {
    for (double& v : s.set[id].value.values()) v += 0.37;
  }
  EXPECT_EQ(eval_gdv(s, {1}, x), before);
}

TEST(GdvForward, DiagonalScaledIdentityChain) {
  SingleLayer s = make_layer(2, 2, 2);
  s.set[s.layer.w0].value = Array::zeros({2, 2});
  s.set[s.layer.depth.a].value = Array::identity(2);
  s.set[s.layer.depth.b].value = Array::identity(2);
  s.set[s.layer.depth.u].value = Array::vector({2, 3});
  s.set[s.layer.depth.v].value = Array::vector({1, -1});
  EXPECT_EQ(eval_gdv(s, {1}, Array::matrix(2, 1, {1, 1})), Array::matrix(2, 1, {2, -3}));
}

TEST(GdvForward, ShapeMismatchIsRejected) {
  SingleLayer s = make_layer(3, 4, 2);
  EXPECT_THROW(eval_gdv(s, {1}, Array::zeros({3, 2})), er::Error);
}

TEST(GdvForward, ZeroInitNeutralForBothGates) {
  std::mt19937_64 rng(5);
  SingleLayer s = make_layer(5, 4, 2);
  const Array x = randn({4, 6}, rng);
  dn::Tape t;
  const Array base = dn::matmul(t.constant(s.set[s.layer.w0].value), t.constant(x)).value();
  EXPECT_EQ(eval_gdv(s, {0}, x), base);
  EXPECT_EQ(eval_gdv(s, {1}, x), base);
}

TEST(GdvForward, GateExclusivityOfGradients) {
  std::mt19937_64 rng(6);
  SingleLayer s = make_layer(4, 3, 2);
  randomize_branches(s, rng);
  const Array x = randn({3, 5}, rng);
  for (int g : {0, 1}) {
    for (gdv::Phase phase : {gdv::Phase::kWarmUp, gdv::Phase::kVectorTune}) {
      dn::Tape t;
      const auto bound = s.set.bind(t, phase);
      const dn::Var out = dn::sum(dn::square(gdv::gdv_forward(s.layer, bound, {g}, t.constant(x))));
      const dn::Gradients grads = t.backward(out);
      const auto& off = g == 1 ? s.layer.motion : s.layer.depth;
      for (std::size_t id : {off.a, off.b, off.u, off.v}) {
        if (!grads.contains(bound[id])) continue;
        for (double v : grads.at(bound[id]).values()) EXPECT_EQ(v, 0.0);
      }
      EXPECT_FALSE(grads.contains(bound[s.layer.w0]));
    }
  }
}

TEST(GdvLayer, TrainableCounts) {
  SingleLayer s = make_layer(6, 5, 3);
  EXPECT_EQ(s.layer.trainable_count(gdv::Phase::kWarmUp), 2u * 3 * (6 + 5));
  EXPECT_EQ(s.set.trainable_count(gdv::Phase::kWarmUp), 2u * 3 * (6 + 5));
  EXPECT_EQ(s.layer.trainable_count(gdv::Phase::kVectorTune), 2u * (3 + 6));
  EXPECT_EQ(s.set.trainable_count(gdv::Phase::kVectorTune), 2u * (3 + 6));
}

TEST(GdvLayer, InitialisationConvention) {
  SingleLayer s = make_layer(8, 8, 4, 9);
  for (double v : s.set[s.layer.depth.b].value.values()) EXPECT_EQ(v, 0.0);
  for (double v : s.set[s.layer.depth.u].value.values()) EXPECT_EQ(v, 1.0);
  for (double v : s.set[s.layer.motion.v].value.values()) EXPECT_EQ(v, 1.0);
  double sq = 0.0;
  for (double v : s.set[s.layer.depth.a].value.values()) sq += v * v;
  EXPECT_NEAR(std::sqrt(sq / 32.0), 0.02, 0.01);
}

TEST(GdvLayer, RankOutOfRangeIsRejected) {
  gdv::ParameterSet set;
  std::mt19937_64 rng(1);
  EXPECT_THROW(gdv::add_gdv_layer(set, "x", 3, 2, 3, rng), er::Error);
}

TEST(Gate, ChannelRouting) {
  EXPECT_EQ(gdv::gate_from_input(3).active(), gdv::Branch::kDepth);
  EXPECT_EQ(gdv::gate_from_input(3).g, 1);
  EXPECT_EQ(gdv::gate_from_input(6).active(), gdv::Branch::kMotion);
  EXPECT_EQ(gdv::gate_from_input(6).g, 0);
  EXPECT_THROW(gdv::gate_from_input(4), er::Error);
}

TEST(Schedule, PhaseBoundary) {
  gdv::TrainSchedule s;
  EXPECT_EQ(s.warmup_steps, 5000);
  EXPECT_EQ(s.phase(), gdv::Phase::kWarmUp);
  EXPECT_TRUE(gdv::is_trainable(gdv::Role::kLoraAB, s.phase()));
  EXPECT_FALSE(gdv::is_trainable(gdv::Role::kLoraUV, s.phase()));
  s.step = 4999;
  EXPECT_EQ(s.phase(), gdv::Phase::kWarmUp);
  s.step = 5000;
  EXPECT_EQ(s.phase(), gdv::Phase::kVectorTune);
  EXPECT_FALSE(gdv::is_trainable(gdv::Role::kLoraAB, s.phase()));
  EXPECT_TRUE(gdv::is_trainable(gdv::Role::kLoraUV, s.phase()));
  EXPECT_FALSE(gdv::is_trainable(gdv::Role::kFrozen, s.phase()));
}

TEST(ConvNeck, ZeroKernelsAreIdentity) {
  gdv::ParameterSet set;
  std::mt19937_64 rng(7);
  const gdv::ConvNeck neck = gdv::add_conv_neck(set, "n", 4, 0.0, rng);
  const Array x = randn({4, 12}, rng);
  dn::Tape t;
  const auto bound = set.bind(t, gdv::Phase::kWarmUp);
  EXPECT_EQ(gdv::conv_neck_forward(neck, bound, t.constant(x), 3, 4).value(), x);
}

TEST(ConvNeck, PreservesShapeAndRejectsBadGrid) {
  gdv::ParameterSet set;
  std::mt19937_64 rng(8);
  const gdv::ConvNeck neck = gdv::add_conv_neck(set, "n", 4, 0.3, rng);
  dn::Tape t;
  const auto bound = set.bind(t, gdv::Phase::kWarmUp);
  const dn::Var x = t.constant(randn({4, 12}, rng));
  EXPECT_EQ(gdv::conv_neck_forward(neck, bound, x, 3, 4).shape(), (dn::Shape{4, 12}));
  EXPECT_THROW(gdv::conv_neck_forward(neck, bound, x, 5, 2), er::Error);
}

TEST(ConvNeck, GradientCheck) {
  gdv::ParameterSet set;
  std::mt19937_64 rng(9);
  const gdv::ConvNeck neck = gdv::add_conv_neck(set, "n", 3, 0.3, rng);
  std::vector<Array> inputs;
  for (const auto& p : set) inputs.push_back(p.value);
  inputs.push_back(randn({3, 9}, rng));
  const dn::Expression f = [&](dn::Tape&, std::span<const dn::Var> in) {
    const std::vector<dn::Var> bound(in.begin(), in.end() - 1);
    return dn::sum(dn::square(gdv::conv_neck_forward(neck, bound, in.back(), 3, 3)));
  };
  const auto r = dn::finite_diff_check(f, inputs);
  EXPECT_TRUE(r.passed(1e-4)) << r.max_rel_error;
}

TEST(Heads, ZeroFeaturesAndWeights) {
  gdv::BackboneConfig cfg;
  cfg.patch = 2;
  cfg.dim = 8;
  cfg.hidden = 8;
  gdv::ToyNetwork net(cfg, 3);
  auto& ps = net.parameters();
  for (const char* n : {"head.depth.w", "head.pose.w", "head.intrinsics.w"}) {
    auto& v = ps[ps.find(n)].value;
    v = Array::zeros(v.shape());
  }
  dn::Tape t;
  const auto bound = ps.bind(t, gdv::Phase::kWarmUp);
  const dn::Var feats = t.constant(Array::zeros({8, 16}));
  const dn::Var depth = net.depth_head(bound, feats, 8, 8);
  const double mid_disparity = 0.5 * (1.0 / cfg.depth_min + 1.0 / cfg.depth_max);
  for (double d : depth.value().values()) EXPECT_NEAR(d, 1.0 / mid_disparity, 1e-12);
  const gdv::MotionVars m = net.motion_heads(bound, feats, 8, 6);
  for (double v : m.rotation.value().values()) EXPECT_EQ(v, 0.0);
  for (double v : m.translation.value().values()) EXPECT_EQ(v, 0.0);
  EXPECT_NEAR(m.fx.value()[0], 8.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(m.fy.value()[0], 6.0 * std::log(2.0), 1e-12);
  EXPECT_NEAR(m.cx.value()[0], 4.0, 1e-12);
  EXPECT_NEAR(m.cy.value()[0], 3.0, 1e-12);
}

TEST(Heads, OutputRangesForAnyFeatures) {
  gdv::BackboneConfig cfg;
  cfg.patch = 2;
  cfg.dim = 8;
  cfg.hidden = 8;
  gdv::ToyNetwork net(cfg, 4);
  std::mt19937_64 rng(10);
  for (int trial = 0; trial < 20; ++trial) {
    dn::Tape t;
    const auto bound = net.parameters().bind(t, gdv::Phase::kWarmUp);
    Array f = randn({8, 16}, rng);
    for (double& v : f.values()) v *= 200.0;
    const dn::Var feats = t.constant(f);
    const gdv::MotionVars m = net.motion_heads(bound, feats, 8, 8);
    EXPECT_GT(m.fx.value()[0], 0.0);
    EXPECT_GT(m.fy.value()[0], 0.0);
    EXPECT_GT(m.cx.value()[0], 0.0);
    EXPECT_LT(m.cx.value()[0], 8.0);
    EXPECT_GT(m.cy.value()[0], 0.0);
    EXPECT_LT(m.cy.value()[0], 8.0);
    for (double d : net.depth_head(bound, feats, 8, 8).value().values()) {
      EXPECT_GE(d, cfg.depth_min);
      EXPECT_LE(d, cfg.depth_max);
    }
  }
}

TEST(ToyBackbone, FullGradientCheckInBothPhases) {
  gdv::BackboneConfig cfg;
  cfg.patch = 2;
  cfg.dim = 6;
  cfg.hidden = 8;
  cfg.blocks = 2;
  cfg.rank = 2;
  gdv::ToyNetwork net(cfg, 11);
  std::mt19937_64 rng(12);
  // Move B and U/V away from their neutral values so every path carries signal.
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    auto& p = net.parameters()[i];
    if (p.role == gdv::Role::kLoraAB || p.role == gdv::Role::kLoraUV) {
      std::normal_distribution<double> g(p.role == gdv::Role::kLoraUV ? 1.0 : 0.0, 0.3);
      for (double& v : p.value.values()) v = g(rng);
    }
  }
  const er::Image a = random_image(8, 8, rng);
  const er::Image b = random_image(8, 8, rng);
  std::vector<Array> inputs;
  for (const auto& p : net.parameters()) inputs.push_back(p.value);
  const dn::Expression f = [&](dn::Tape&, std::span<const dn::Var> in) {
    const std::vector<dn::Var> bound(in.begin(), in.end());
    const dn::Var depth = net.depth_head(bound, net.encode(bound, a, nullptr), 8, 8);
    const gdv::MotionVars m = net.motion_heads(bound, net.encode(bound, a, &b), 8, 8);
    return dn::mean(depth) * 0.01 + dn::sum(dn::square(m.rotation)) * 100.0 + dn::sum(dn::square(m.translation)) * 100.0 +
           m.fx * 0.1 + m.cy * 0.1;
  };
  for (gdv::Phase phase : {gdv::Phase::kWarmUp, gdv::Phase::kVectorTune}) {
    std::vector<bool> trainable;
    for (const auto& p : net.parameters()) trainable.push_back(gdv::is_trainable(p.role, phase));
    const auto r = dn::finite_diff_check(f, inputs, trainable);
    EXPECT_TRUE(r.passed(1e-4)) << gdv::phase_name(phase) << ": " << r.max_rel_error << " at "
                                << net.parameters()[r.worst_input].name;
    EXPECT_GT(r.entries_checked, 0u);
  }
}

TEST(SslTrainer, FrozenSetsStayBitIdenticalAcrossPhaseSwitch) {
  gdv::BackboneConfig cfg;
  cfg.patch = 4;
  cfg.dim = 8;
  cfg.hidden = 16;
  cfg.depth_min = 20.0;
  cfg.depth_max = 400.0;
  gdv::ToyNetwork net(cfg, 13);
  const auto scene = er::synth::make_terrain_scene(3, 5, 16, 16);
  const auto f0 = er::synth::render_scene(scene, 0);
  const auto f1 = er::synth::render_scene(scene, 1);
  gdv::TrainSchedule sched;
  sched.warmup_steps = 2;
  dn::AdamWOptions opt;
  opt.learning_rate = 1e-3;
  gdv::SslTrainer trainer(net, sched, opt, {});
  auto snapshot = [&] {
    std::vector<Array> v;
    for (const auto& p : net.parameters()) v.push_back(p.value);
    return v;
  };
  for (int s = 0; s < 4; ++s) {
    const auto before = snapshot();
    const gdv::StepReport rep = trainer.step(f0.image, f1.image);
    EXPECT_EQ(rep.phase, s < 2 ? gdv::Phase::kWarmUp : gdv::Phase::kVectorTune);
    EXPECT_TRUE(std::isfinite(rep.loss));
    EXPECT_EQ(rep.updated_scalars, net.parameters().trainable_count(rep.phase));
    const auto after = snapshot();
    bool trained_moved = false;
    for (std::size_t i = 0; i < after.size(); ++i) {
      const auto& p = net.parameters()[i];
      if (!gdv::is_trainable(p.role, rep.phase)) {
        EXPECT_EQ(after[i], before[i]) << p.name << " changed while frozen";
      } else if (!(after[i] == before[i])) {
        trained_moved = true;
      }
    }
    EXPECT_TRUE(trained_moved);
  }
  EXPECT_EQ(trainer.schedule().step, 4);
}

TEST(Checkpoint, RoundTripIsBitExact) {
  gdv::BackboneConfig cfg;
  cfg.patch = 2;
  cfg.dim = 6;
  cfg.hidden = 8;
  cfg.rank = 2;
  gdv::ToyNetwork a(cfg, 21);
  gdv::ToyNetwork b(cfg, 22);
  const auto path = std::filesystem::temp_directory_path() / "endorecon_ckpt_test.json";
  gdv::TrainSchedule s;
  s.warmup_steps = 17;
  s.step = 9;
  a.save(path, s);
  const gdv::TrainSchedule r = b.load(path);
  EXPECT_EQ(r.warmup_steps, 17);
  EXPECT_EQ(r.step, 9);
  for (std::size_t i = 0; i < a.parameters().size(); ++i) {
    EXPECT_EQ(a.parameters()[i].value, b.parameters()[i].value) << a.parameters()[i].name;
  }
  gdv::BackboneConfig other = cfg;
  other.dim = 8;
  gdv::ToyNetwork c(other, 1);
  EXPECT_THROW(c.load(path), er::Error);
  std::filesystem::remove(path);
}
