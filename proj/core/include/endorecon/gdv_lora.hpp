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
#include <cstdint>
#include <filesystem>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "endorecon/diffnum/adamw.hpp"
#include "endorecon/diffnum/gradcheck.hpp"
#include "endorecon/diffnum/ops.hpp"
#include "endorecon/geometry.hpp"
#include "endorecon/losses.hpp"

namespace endorecon::gdv {

namespace dn = diffnum;

enum class Phase { kWarmUp, kVectorTune };
enum class Branch { kDepth, kMotion };

const char* phase_name(Phase p);

/// Scalar gate G. G = 1 selects the depth branch, G = 0 the motion branch.
struct GateState {
  int g = 1;
  Branch active() const { return g == 1 ? Branch::kDepth : Branch::kMotion; }
};

/// 3 channels (single image) -> depth branch; 6 channels (image pair) -> motion branch.
GateState gate_from_input(int channels);

struct TrainSchedule {
  long warmup_steps = 5000;
  long step = 0;

  Phase phase() const { return step < warmup_steps ? Phase::kWarmUp : Phase::kVectorTune; }
};

/// How a parameter takes part in training.
enum class Role {
  kFrozen,    // pre-trained weights, never updated
  kLoraAB,    // low-rank factors, trained during warm-up
  kLoraUV,    // scaling vectors, trained after warm-up
  kTrainable  // heads, projection and neck, always trained
};

bool is_trainable(Role role, Phase phase);
const char* role_name(Role role);

struct Parameter {
  std::string name;
  Role role = Role::kFrozen;
  dn::Array value;
};

class ParameterSet {
 public:
  std::size_t add(std::string name, Role role, dn::Array value);
  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  /// Index of `name`; throws Error(kData) when absent.
  std::size_t find(const std::string& name) const;
  /// Number of scalars that are trainable in `phase`.
  std::size_t trainable_count(Phase phase) const;
  /// One tape leaf per parameter, trainable according to `phase`.
  std::vector<dn::Var> bind(dn::Tape& tape, Phase phase) const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

 private:
  std::vector<Parameter> params_;
};

struct LoraBranchIds {
  std::size_t a = 0;  // r x k
  std::size_t b = 0;  // d x r
  std::size_t u = 0;  // r
  std::size_t v = 0;  // d
};

/// Frozen W0 (d x k) plus depth and motion low-rank branches.
struct GdvLoraLayer {
  std::size_t w0 = 0;
  LoraBranchIds depth;
  LoraBranchIds motion;
  std::size_t d = 0;
  std::size_t k = 0;
  std::size_t rank = 0;

  /// Trainable scalars of this layer in `phase` (both branches).
  std::size_t trainable_count(Phase phase) const;
};

/// Adds a layer: W0 ~ N(0, 1/k), A ~ N(0, 0.02), B = 0, U = V = 1.
GdvLoraLayer add_gdv_layer(ParameterSet& set, const std::string& prefix, std::size_t d, std::size_t k,
                           std::size_t rank, std::mt19937_64& rng);

/// W0 x + B A x, with x of shape k x n.
dn::Var lora_forward(dn::Var w0, dn::Var a, dn::Var b, dn::Var x);
/// W0 x + G (V . B (U . A x)) + (1 - G)(V . B (U . A x)) over the depth/motion branches.
/// Only the active branch is evaluated, so the inactive one has exactly zero gradient.
dn::Var gdv_forward(const GdvLoraLayer& layer, const std::vector<dn::Var>& bound, GateState gate, dn::Var x);

/// Three 3x3 convolutions, each preceded by a per-token LayerNorm, added back to the input.
struct ConvNeck {
  std::size_t kernel[3] = {0, 0, 0};  // each [9C, C]
  std::size_t channels = 0;
};
ConvNeck add_conv_neck(ParameterSet& set, const std::string& prefix, std::size_t channels, double init_std,
                       std::mt19937_64& rng);
/// `tokens` is C x (h*w) with tokens in row-major grid order.
dn::Var conv_neck_forward(const ConvNeck& neck, const std::vector<dn::Var>& bound, dn::Var tokens, std::size_t h,
                          std::size_t w);

struct BackboneConfig {
  int patch = 4;
  int dim = 16;
  int hidden = 32;
  int blocks = 2;
  int rank = 4;
  double depth_min = 10.0;
  double depth_max = 300.0;

  void validate() const;
};

struct MotionVars {
  dn::Var rotation;     // 3
  dn::Var translation;  // 3
  dn::Var fx, fy, cx, cy;
};

struct MotionPrediction {
  PoseSE3 pose;
  Intrinsics intrinsics;
};

/// Patch embedding, GDV-LoRA MLP blocks with conv necks between them, and
/// depth / pose / intrinsic heads.
class ToyNetwork {
 public:
  ToyNetwork(const BackboneConfig& config, std::uint64_t seed);

  const BackboneConfig& config() const { return config_; }
  ParameterSet& parameters() { return params_; }
  const ParameterSet& parameters() const { return params_; }
  const std::vector<GdvLoraLayer>& lora_layers() const { return layers_; }

  /// Token features C x n. `second` is null for depth inputs.
  dn::Var encode(const std::vector<dn::Var>& bound, const Image& first, const Image* second) const;
  /// Depth per pixel [H*W] from features of a single image.
  dn::Var depth_head(const std::vector<dn::Var>& bound, dn::Var features, int width, int height) const;
  MotionVars motion_heads(const std::vector<dn::Var>& bound, dn::Var features, int width, int height) const;

  DepthMap predict_depth(const Image& img) const;
  MotionPrediction predict_motion(const Image& target, const Image& source) const;

  void save(const std::filesystem::path& path, const TrainSchedule& schedule) const;
  /// Restores parameters and returns the stored schedule. Throws Error(kData) on mismatch.
  TrainSchedule load(const std::filesystem::path& path);

 private:
  struct Block {
    GdvLoraLayer fc1;
    GdvLoraLayer fc2;
  };

  void check_image(const Image& img) const;

  BackboneConfig config_;
  ParameterSet params_;
  std::size_t embed_ = 0;
  std::size_t proj_ = 0;
  std::vector<Block> blocks_;
  std::vector<GdvLoraLayer> layers_;
  std::vector<ConvNeck> necks_;
  std::size_t depth_w_ = 0, depth_b_ = 0;
  std::size_t pose_w_ = 0, pose_b_ = 0;
  std::size_t intr_w_ = 0, intr_b_ = 0;
};

/// Differentiable pieces of one self-supervised step on a (target, source) pair.
struct SslTerms {
  dn::Var total;
  dn::Var photometric;
  dn::Var edge;
  dn::Var sssi;
  std::size_t valid = 0;
};
SslTerms ssl_objective(const ToyNetwork& net, const std::vector<dn::Var>& bound, const Image& target,
                       const Image& source, const losses::LossWeights& weights);

struct StepReport {
  long step = 0;
  Phase phase = Phase::kWarmUp;
  double loss = 0.0;
  double photometric = 0.0;
  double edge = 0.0;
  double sssi = 0.0;
  std::size_t valid = 0;
  std::size_t updated_scalars = 0;
};

/// Draws B and U/V from N(0, spread) and N(1, spread) so that every adapter path
/// carries signal; freshly built networks have B = 0 and U = V = 1.
void perturb_adapters(ToyNetwork& net, std::uint64_t seed, double spread = 0.3);

/// Finite-difference check of a random projection of the backbone features,
/// for a depth input (`a`) and a motion input (`a`, `b`), with respect to the
/// adapter parameters that are trainable in `phase`.
dn::GradCheckResult check_adapter_gradients(const ToyNetwork& net, const Image& a, const Image& b, Phase phase,
                                            std::uint64_t seed, double eps = 1e-5);

/// AdamW on the phase-dependent trainable set; frozen parameters are never written.
class SslTrainer {
 public:
  SslTrainer(ToyNetwork& net, TrainSchedule schedule, dn::AdamWOptions options, losses::LossWeights weights);

  StepReport step(const Image& target, const Image& source);
  /// One update on the mean loss of a batch of (target, source) pairs.
  StepReport step(std::span<const Image> targets, std::span<const Image> sources);
  const TrainSchedule& schedule() const { return schedule_; }

 private:
  ToyNetwork& net_;
  TrainSchedule schedule_;
  dn::AdamW optimizer_;
  losses::LossWeights weights_;
};

}  // namespace endorecon::gdv
