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

#include "endorecon/gdv_lora.hpp"

#include <cmath>
#include <string>

#include "endorecon/error.hpp"
#include "endorecon/io.hpp"
#include "endorecon/warp_ad.hpp"
#include "json.hpp"

namespace endorecon::gdv {
namespace {

using Json = nlohmann::json;

dn::Array gaussian(dn::Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  dn::Array a = dn::Array::zeros(std::move(shape));
  for (double& v : a.values()) v = dist(rng);
  return a;
}

dn::Var ones(dn::Tape& t, std::size_t rows, std::size_t cols, double value = 1.0) {
  return t.constant(dn::Array::full({rows, cols}, value));
}

/// x * diag-broadcast of a length-m vector over the n columns of an m x n matrix.
dn::Var scale_rows(dn::Var x, dn::Var vec) {
  const std::size_t m = x.shape()[0];
  const std::size_t n = x.shape()[1];
  return x * dn::matmul(dn::reshape(vec, {m, 1}), ones(x.tape(), 1, n));
}

/// LayerNorm (no affine) over the rows of each column of a C x n matrix.
dn::Var normalize_columns(dn::Var x) {
  dn::Tape& t = x.tape();
  const std::size_t c = x.shape()[0];
  const std::size_t n = x.shape()[1];
  const dn::Var avg = ones(t, 1, c, 1.0 / static_cast<double>(c));
  const dn::Var spread = ones(t, c, 1);
  const dn::Var centred = x - dn::matmul(spread, dn::matmul(avg, x));
  const dn::Var var = dn::matmul(avg, centred * centred);
  (void)n;
  return centred / dn::matmul(spread, dn::sqrt(var + 1e-5));
}

dn::Var gelu(dn::Var x) { return x * dn::sigmoid(x * 1.702); }

dn::Var row_bias(dn::Var bias, std::size_t n) {
  const std::size_t m = bias.size();
  return dn::matmul(dn::reshape(bias, {m, 1}), ones(bias.tape(), 1, n));
}

/// Patch vectors (3*p*p) x n for an image whose sides are multiples of p.
dn::Array patchify(const Image& img, int p) {
  const int gw = img.width() / p;
  const int gh = img.height() / p;
  const std::size_t n = static_cast<std::size_t>(gw) * gh;
  const std::size_t len = static_cast<std::size_t>(3) * p * p;
  dn::Array out = dn::Array::zeros({len, n});
  for (int gy = 0; gy < gh; ++gy)
    for (int gx = 0; gx < gw; ++gx)
      for (int c = 0; c < 3; ++c)
        for (int dy = 0; dy < p; ++dy)
          for (int dx = 0; dx < p; ++dx) {
            const std::size_t row = static_cast<std::size_t>(c) * p * p + dy * p + dx;
            const std::size_t col = static_cast<std::size_t>(gy) * gw + gx;
            out.at(row, col) = img.at(gx * p + dx, gy * p + dy, img.channels() == 3 ? c : 0);
          }
  return out;
}

std::vector<dn::Var> bind_constants(dn::Tape& tape, const ParameterSet& set) {
  std::vector<dn::Var> out;
  for (const Parameter& p : set) out.push_back(tape.constant(p.value));
  return out;
}

Role parse_role(const std::string& s) {
  for (Role r : {Role::kFrozen, Role::kLoraAB, Role::kLoraUV, Role::kTrainable})
    if (s == role_name(r)) return r;
  fail(ErrorKind::kData, "checkpoint: unknown parameter role '" + s + "'");
}

}  // namespace

const char* phase_name(Phase p) { return p == Phase::kWarmUp ? "warmup" : "vector_tune"; }

const char* role_name(Role role) {
  switch (role) {
    case Role::kFrozen:
      return "frozen";
    case Role::kLoraAB:
      return "lora_ab";
    case Role::kLoraUV:
      return "lora_uv";
    case Role::kTrainable:
      return "trainable";
  }
  return "?";
}

GateState gate_from_input(int channels) {
  if (channels == 3) return {1};
  if (channels == 6) return {0};
  fail(ErrorKind::kData, "gate: input must have 3 or 6 channels, got " + std::to_string(channels));
}

bool is_trainable(Role role, Phase phase) {
  switch (role) {
    case Role::kFrozen:
      return false;
    case Role::kLoraAB:
      return phase == Phase::kWarmUp;
    case Role::kLoraUV:
      return phase == Phase::kVectorTune;
    case Role::kTrainable:
      return true;
  }
  return false;
}

std::size_t ParameterSet::add(std::string name, Role role, dn::Array value) {
  params_.push_back({std::move(name), role, std::move(value)});
  return params_.size() - 1;
}

std::size_t ParameterSet::find(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  fail(ErrorKind::kData, "no parameter named '" + name + "'");
}

std::size_t ParameterSet::trainable_count(Phase phase) const {
  std::size_t n = 0;
  for (const Parameter& p : params_)
    if (is_trainable(p.role, phase)) n += p.value.size();
  return n;
}

std::vector<dn::Var> ParameterSet::bind(dn::Tape& tape, Phase phase) const {
  std::vector<dn::Var> out;
  out.reserve(params_.size());
  for (const Parameter& p : params_) out.push_back(tape.input(p.value, is_trainable(p.role, phase)));
  return out;
}

std::size_t GdvLoraLayer::trainable_count(Phase phase) const {
  return phase == Phase::kWarmUp ? 2 * rank * (d + k) : 2 * (rank + d);
}

GdvLoraLayer add_gdv_layer(ParameterSet& set, const std::string& prefix, std::size_t d, std::size_t k,
                           std::size_t rank, std::mt19937_64& rng) {
  if (rank == 0 || rank > std::min(d, k)) {
    fail(ErrorKind::kConfig, prefix + ": rank " + std::to_string(rank) + " must lie in [1, min(d, k)]");
  }
  GdvLoraLayer layer;
  layer.d = d;
  layer.k = k;
  layer.rank = rank;
  layer.w0 = set.add(prefix + ".w0", Role::kFrozen, gaussian({d, k}, 1.0 / std::sqrt(static_cast<double>(k)), rng));
  auto branch = [&](const char* tag) {
    LoraBranchIds ids;
    const std::string p = prefix + "." + tag;
    ids.a = set.add(p + ".a", Role::kLoraAB, gaussian({rank, k}, 0.02, rng));
    ids.b = set.add(p + ".b", Role::kLoraAB, dn::Array::zeros({d, rank}));
    ids.u = set.add(p + ".u", Role::kLoraUV, dn::Array::full({rank}, 1.0));
    ids.v = set.add(p + ".v", Role::kLoraUV, dn::Array::full({d}, 1.0));
    return ids;
  };
  layer.depth = branch("depth");
  layer.motion = branch("motion");
  return layer;
}

dn::Var lora_forward(dn::Var w0, dn::Var a, dn::Var b, dn::Var x) {
  return dn::matmul(w0, x) + dn::matmul(b, dn::matmul(a, x));
}

dn::Var gdv_forward(const GdvLoraLayer& layer, const std::vector<dn::Var>& bound, GateState gate, dn::Var x) {
  if (x.value().rank() != 2 || x.shape()[0] != layer.k) {
    fail(ErrorKind::kData, "gdv_forward: expected " + std::to_string(layer.k) + " input rows, got shape " +
                               dn::shape_string(x.shape()));
  }
  const LoraBranchIds& br = gate.active() == Branch::kDepth ? layer.depth : layer.motion;
  const dn::Var low = scale_rows(dn::matmul(bound[br.a], x), bound[br.u]);
  const dn::Var up = scale_rows(dn::matmul(bound[br.b], low), bound[br.v]);
  return dn::matmul(bound[layer.w0], x) + up;
}

ConvNeck add_conv_neck(ParameterSet& set, const std::string& prefix, std::size_t channels, double init_std,
                       std::mt19937_64& rng) {
  ConvNeck neck;
  neck.channels = channels;
  for (int i = 0; i < 3; ++i) {
    neck.kernel[i] = set.add(prefix + ".conv" + std::to_string(i + 1), Role::kTrainable,
                             gaussian({9 * channels, channels}, init_std, rng));
  }
  return neck;
}

dn::Var conv_neck_forward(const ConvNeck& neck, const std::vector<dn::Var>& bound, dn::Var tokens, std::size_t h,
                          std::size_t w) {
  if (tokens.value().rank() != 2 || tokens.shape()[0] != neck.channels || tokens.shape()[1] != h * w) {
    fail(ErrorKind::kData, "conv neck: tokens " + dn::shape_string(tokens.shape()) + " do not form a " +
                               std::to_string(h) + "x" + std::to_string(w) + " grid of " +
                               std::to_string(neck.channels) + " channels");
  }
  dn::Var y = tokens;
  for (int i = 0; i < 3; ++i) {
    const dn::Var rows = dn::transpose(normalize_columns(y));
    y = dn::transpose(dn::matmul(dn::im2col3x3(rows, h, w), bound[neck.kernel[i]]));
  }
  return tokens + y;
}

void BackboneConfig::validate() const {
  if (patch < 1 || dim < 1 || hidden < 1 || blocks < 1) fail(ErrorKind::kConfig, "backbone: sizes must be positive");
  if (rank < 1 || rank > std::min(dim, hidden)) fail(ErrorKind::kConfig, "backbone: rank must lie in [1, min(dim, hidden)]");
  if (!(depth_min > 0.0 && depth_max > depth_min)) fail(ErrorKind::kConfig, "backbone: need 0 < depth_min < depth_max");
}

ToyNetwork::ToyNetwork(const BackboneConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  std::mt19937_64 rng(seed);
  const auto c = static_cast<std::size_t>(config_.dim);
  const auto hid = static_cast<std::size_t>(config_.hidden);
  const auto pp = static_cast<std::size_t>(config_.patch) * config_.patch;
  const auto r = static_cast<std::size_t>(config_.rank);
  embed_ = params_.add("embed", Role::kFrozen, gaussian({c, 3 * pp}, 1.0 / std::sqrt(3.0 * pp), rng));
  dn::Array proj = dn::Array::zeros({c, 2 * c});
  for (std::size_t i = 0; i < c; ++i) proj.at(i, i) = proj.at(i, c + i) = 0.5;
  proj_ = params_.add("proj", Role::kTrainable, std::move(proj));
  for (int b = 0; b < config_.blocks; ++b) {
    const std::string p = "block" + std::to_string(b);
    Block blk{add_gdv_layer(params_, p + ".fc1", hid, c, r, rng), add_gdv_layer(params_, p + ".fc2", c, hid, r, rng)};
    layers_.push_back(blk.fc1);
    layers_.push_back(blk.fc2);
    blocks_.push_back(blk);
    if (b + 1 < config_.blocks) necks_.push_back(add_conv_neck(params_, "neck" + std::to_string(b), c, 0.02, rng));
  }
  depth_w_ = params_.add("head.depth.w", Role::kTrainable, gaussian({pp, c}, 0.02, rng));
  depth_b_ = params_.add("head.depth.b", Role::kTrainable, dn::Array::zeros({pp}));
  pose_w_ = params_.add("head.pose.w", Role::kTrainable, gaussian({6, c}, 0.02, rng));
  pose_b_ = params_.add("head.pose.b", Role::kTrainable, dn::Array::zeros({6}));
  intr_w_ = params_.add("head.intrinsics.w", Role::kTrainable, gaussian({4, c}, 0.02, rng));
  intr_b_ = params_.add("head.intrinsics.b", Role::kTrainable, dn::Array::zeros({4}));
}

void ToyNetwork::check_image(const Image& img) const {
  if (img.width() % config_.patch != 0 || img.height() % config_.patch != 0) {
    fail(ErrorKind::kData, "image " + std::to_string(img.width()) + "x" + std::to_string(img.height()) +
                               " is not a multiple of patch size " + std::to_string(config_.patch));
  }
}

dn::Var ToyNetwork::encode(const std::vector<dn::Var>& bound, const Image& first, const Image* second) const {
  check_image(first);
  dn::Tape& t = bound.front().tape();
  const int p = config_.patch;
  const auto gh = static_cast<std::size_t>(first.height() / p);
  const auto gw = static_cast<std::size_t>(first.width() / p);
  dn::Var tokens = dn::matmul(bound[embed_], t.constant(patchify(first, p)));
  if (second != nullptr) {
    check_image(*second);
    if (second->width() != first.width() || second->height() != first.height()) {
      fail(ErrorKind::kData, "image pair sizes disagree");
    }
    const dn::Var other = dn::matmul(bound[embed_], t.constant(patchify(*second, p)));
    const dn::Var stacked = dn::transpose(dn::concat_cols(dn::transpose(tokens), dn::transpose(other)));
    tokens = dn::matmul(bound[proj_], stacked);
  }
  const GateState gate = gate_from_input(second == nullptr ? 3 : 6);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const dn::Var h = gelu(gdv_forward(blocks_[b].fc1, bound, gate, normalize_columns(tokens)));
    tokens = tokens + gdv_forward(blocks_[b].fc2, bound, gate, h);
    if (b < necks_.size()) tokens = conv_neck_forward(necks_[b], bound, tokens, gh, gw);
  }
  return tokens;
}

dn::Var ToyNetwork::depth_head(const std::vector<dn::Var>& bound, dn::Var features, int width, int height) const {
  const int p = config_.patch;
  const std::size_t n = features.shape()[1];
  const dn::Var z = dn::matmul(bound[depth_w_], features) + row_bias(bound[depth_b_], n);
  const double a = 1.0 / config_.depth_min - 1.0 / config_.depth_max;
  const double b = 1.0 / config_.depth_max;
  const dn::Var depth = 1.0 / (dn::sigmoid(z) * a + b);
  // Entry (dy*p + dx, token) of the head output belongs to pixel (gx*p + dx, gy*p + dy).
  const int gw = width / p;
  std::vector<std::size_t> order(static_cast<std::size_t>(width) * height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const std::size_t token = static_cast<std::size_t>(y / p) * gw + x / p;
      const std::size_t sub = static_cast<std::size_t>(y % p) * p + x % p;
      order[static_cast<std::size_t>(y) * width + x] = sub * n + token;
    }
  return dn::gather(depth, std::move(order));
}

MotionVars ToyNetwork::motion_heads(const std::vector<dn::Var>& bound, dn::Var features, int width, int height) const {
  dn::Tape& t = features.tape();
  const std::size_t n = features.shape()[1];
  const dn::Var pooled = dn::matmul(features, ones(t, n, 1, 1.0 / static_cast<double>(n)));
  const dn::Var pose = (dn::matmul(bound[pose_w_], pooled) + dn::reshape(bound[pose_b_], {6, 1})) * 0.01;
  const dn::Var intr = dn::matmul(bound[intr_w_], pooled) + dn::reshape(bound[intr_b_], {4, 1});
  MotionVars m;
  m.rotation = dn::gather(pose, {0, 1, 2});
  m.translation = dn::gather(pose, {3, 4, 5});
  m.fx = dn::softplus(dn::gather(intr, {0})) * static_cast<double>(width);
  m.fy = dn::softplus(dn::gather(intr, {1})) * static_cast<double>(height);
  m.cx = dn::sigmoid(dn::gather(intr, {2})) * static_cast<double>(width);
  m.cy = dn::sigmoid(dn::gather(intr, {3})) * static_cast<double>(height);
  return m;
}

DepthMap ToyNetwork::predict_depth(const Image& img) const {
  dn::Tape tape;
  const auto bound = bind_constants(tape, params_);
  const dn::Var d = depth_head(bound, encode(bound, img, nullptr), img.width(), img.height());
  const auto v = d.value().values();
  return DepthMap(img.width(), img.height(), std::vector<double>(v.begin(), v.end()));
}

MotionPrediction ToyNetwork::predict_motion(const Image& target, const Image& source) const {
  dn::Tape tape;
  const auto bound = bind_constants(tape, params_);
  const MotionVars m = motion_heads(bound, encode(bound, target, &source), target.width(), target.height());
  MotionPrediction out;
  for (int i = 0; i < 3; ++i) {
    out.pose.rotation[i] = m.rotation.value()[i];
    out.pose.translation[i] = m.translation.value()[i];
  }
  out.intrinsics = {m.fx.value()[0], m.fy.value()[0], m.cx.value()[0], m.cy.value()[0], target.width(), target.height()};
  return out;
}

void ToyNetwork::save(const std::filesystem::path& path, const TrainSchedule& schedule) const {
  Json j;
  j["format"] = "endorecon-gdv-checkpoint";
  j["version"] = 1;
  j["config"] = {{"patch", config_.patch},         {"dim", config_.dim},           {"hidden", config_.hidden},
                 {"blocks", config_.blocks},       {"rank", config_.rank},         {"depth_min", config_.depth_min},
                 {"depth_max", config_.depth_max}};
  j["schedule"] = {{"warmup_steps", schedule.warmup_steps}, {"step", schedule.step}};
  Json params = Json::array();
  for (const Parameter& p : params_) {
    params.push_back({{"name", p.name},
                      {"role", role_name(p.role)},
                      {"shape", p.value.shape()},
                      {"values", std::vector<double>(p.value.values().begin(), p.value.values().end())}});
  }
  j["parameters"] = std::move(params);
  io::atomic_write(path, j.dump() + "\n");
}

TrainSchedule ToyNetwork::load(const std::filesystem::path& path) {
  Json j;
  try {
    j = Json::parse(io::read_file(path));
  } catch (const Json::exception& e) {
    fail(ErrorKind::kData, "checkpoint " + path.string() + ": " + e.what());
  }
  try {
    if (j.at("format") != "endorecon-gdv-checkpoint") fail(ErrorKind::kData, "checkpoint: wrong format tag");
    const Json& c = j.at("config");
    const bool same = c.at("patch") == config_.patch && c.at("dim") == config_.dim && c.at("hidden") == config_.hidden &&
                      c.at("blocks") == config_.blocks && c.at("rank") == config_.rank;
    if (!same) fail(ErrorKind::kData, "checkpoint: network shape differs from this configuration");
    const Json& ps = j.at("parameters");
    if (ps.size() != params_.size()) fail(ErrorKind::kData, "checkpoint: parameter count differs");
    ParameterSet restored = params_;
    for (std::size_t i = 0; i < ps.size(); ++i) {
      Parameter& p = restored[i];
      if (ps[i].at("name") != p.name) fail(ErrorKind::kData, "checkpoint: parameter order differs at " + p.name);
      if (parse_role(ps[i].at("role").get<std::string>()) != p.role) fail(ErrorKind::kData, "checkpoint: role of " + p.name + " differs");
      const auto shape = ps[i].at("shape").get<dn::Shape>();
      if (shape != p.value.shape()) fail(ErrorKind::kData, "checkpoint: shape of " + p.name + " differs");
      p.value = dn::Array(shape, ps[i].at("values").get<std::vector<double>>());
    }
    params_ = std::move(restored);
    TrainSchedule s;
    s.warmup_steps = j.at("schedule").at("warmup_steps").get<long>();
    s.step = j.at("schedule").at("step").get<long>();
    return s;
  } catch (const Json::exception& e) {
    fail(ErrorKind::kData, "checkpoint " + path.string() + ": " + e.what());
  }
}

SslTerms ssl_objective(const ToyNetwork& net, const std::vector<dn::Var>& bound, const Image& target,
                       const Image& source, const losses::LossWeights& weights) {
  const int w = target.width();
  const int h = target.height();
  const dn::Var dt = net.depth_head(bound, net.encode(bound, target, nullptr), w, h);
  const dn::Var ds = net.depth_head(bound, net.encode(bound, source, nullptr), w, h);
  const MotionVars m = net.motion_heads(bound, net.encode(bound, target, &source), w, h);

  const CameraVars cam{m.fx, m.fy, m.cx, m.cy, w, h};
  const PixelSet pixels = PixelSet::grid(w, h);
  const std::vector<unsigned char> all(pixels.size(), 1);
  const ProjectedPoints proj = project_points(dt, all, dn::rodrigues(m.rotation), m.translation, cam, pixels);

  dn::Tape& tape = dt.tape();
  losses::Channels target_ch = losses::image_constants(tape, target);
  losses::Channels warped;
  for (const dn::Var& ch : losses::image_constants(tape, source)) warped.push_back(sample_field(ch, {}, w, h, proj).values);
  const SampledField ds_t = sample_field(ds, {}, w, h, proj);

  SslTerms terms;
  for (unsigned char v : proj.valid) terms.valid += v;
  if (terms.valid < 2) fail(ErrorKind::kNumeric, "ssl objective: fewer than two pixels project into the source view");
  terms.photometric = losses::photometric_loss(target_ch, warped, w, h, proj.valid, weights.alpha);
  terms.edge = losses::edge_smoothness(dt, all, target);
  terms.sssi = losses::sssi_loss(dt, ds_t.values, proj.valid);
  terms.total = terms.photometric * weights.lambda_p + terms.edge * weights.lambda_e + terms.sssi * weights.lambda_sssi;
  return terms;
}

SslTrainer::SslTrainer(ToyNetwork& net, TrainSchedule schedule, dn::AdamWOptions options, losses::LossWeights weights)
    : net_(net), schedule_(schedule), optimizer_(options), weights_(weights) {
  weights_.validate();
}

void perturb_adapters(ToyNetwork& net, std::uint64_t seed, double spread) {
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    Parameter& p = net.parameters()[i];
    if (p.role != Role::kLoraUV && !(p.role == Role::kLoraAB && p.name.ends_with(".b"))) continue;
    std::normal_distribution<double> g(p.role == Role::kLoraUV ? 1.0 : 0.0, spread);
    for (double& v : p.value.values()) v = g(rng);
  }
}

dn::GradCheckResult check_adapter_gradients(const ToyNetwork& net, const Image& a, const Image& b, Phase phase,
                                            std::uint64_t seed, double eps) {
  std::vector<dn::Array> inputs;
  std::vector<bool> trainable;
  for (const Parameter& p : net.parameters()) {
    inputs.push_back(p.value);
    trainable.push_back((p.role == Role::kLoraAB || p.role == Role::kLoraUV) && is_trainable(p.role, phase));
  }
  std::mt19937_64 rng(seed);
  const std::size_t tokens = static_cast<std::size_t>(a.width() / net.config().patch) * (a.height() / net.config().patch);
  const dn::Shape shape{static_cast<std::size_t>(net.config().dim), tokens};
  const dn::Array r1 = gaussian(shape, 1.0, rng);
  const dn::Array r2 = gaussian(shape, 1.0, rng);
  const dn::Expression f = [&](dn::Tape& tape, std::span<const dn::Var> in) {
    const std::vector<dn::Var> bound(in.begin(), in.end());
    return dn::mean(net.encode(bound, a, nullptr) * tape.constant(r1)) +
           dn::mean(net.encode(bound, a, &b) * tape.constant(r2));
  };
  return dn::finite_diff_check(f, inputs, trainable, eps);
}

StepReport SslTrainer::step(const Image& target, const Image& source) {
  return step(std::span<const Image>(&target, 1), std::span<const Image>(&source, 1));
}

StepReport SslTrainer::step(std::span<const Image> targets, std::span<const Image> sources) {
  if (targets.empty() || targets.size() != sources.size()) fail(ErrorKind::kConfig, "ssl step: batch needs matching, non-empty target and source lists");
  StepReport r;
  r.step = schedule_.step;
  r.phase = schedule_.phase();
  dn::Tape tape;
  ParameterSet& params = net_.parameters();
  const std::vector<dn::Var> bound = params.bind(tape, r.phase);
  const double inv = 1.0 / static_cast<double>(targets.size());
  SslTerms terms = ssl_objective(net_, bound, targets[0], sources[0], weights_);
  for (std::size_t b = 1; b < targets.size(); ++b) {
    const SslTerms t = ssl_objective(net_, bound, targets[b], sources[b], weights_);
    terms.total = terms.total + t.total;
    terms.photometric = terms.photometric + t.photometric;
    terms.edge = terms.edge + t.edge;
    terms.sssi = terms.sssi + t.sssi;
    terms.valid += t.valid;
  }
  if (targets.size() > 1) terms.total = terms.total * inv;
  r.loss = terms.total.value()[0];
  r.photometric = terms.photometric.value()[0] * inv;
  r.edge = terms.edge.value()[0] * inv;
  r.sssi = terms.sssi.value()[0] * inv;
  r.valid = terms.valid;
  if (!std::isfinite(r.loss)) fail(ErrorKind::kNumeric, "ssl step " + std::to_string(r.step) + ": non-finite loss");
  const dn::Gradients grads = tape.backward(terms.total);
  optimizer_.begin_step();
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (!is_trainable(params[i].role, r.phase)) continue;
    const dn::Array& g = grads.at(bound[i]);
    if (!g.all_finite()) fail(ErrorKind::kNumeric, "ssl step " + std::to_string(r.step) + ": non-finite gradient for " + params[i].name);
    optimizer_.update(i, params[i].value, g);
    r.updated_scalars += g.size();
  }
  ++schedule_.step;
  return r;
}

}  // namespace endorecon::gdv
