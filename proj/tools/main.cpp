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

#include <cstdio>
#include <exception>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include "CLI11.hpp"
#include "endorecon/error.hpp"
#include "endorecon/fusion.hpp"
#include "endorecon/io.hpp"
#include "endorecon/pipeline.hpp"

namespace fs = std::filesystem;
namespace pl = endorecon::pipeline;
using endorecon::ErrorKind;

namespace {

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::kConfig:
      return 2;
    case ErrorKind::kData:
      return 3;
    case ErrorKind::kNumeric:
      return 4;
  }
  return 3;
}

int report_error(ErrorKind kind, std::string message) {
  for (char& c : message)
    if (c == '\n' || c == '\r') c = ' ';
  std::fprintf(stderr, "endorecon: error=%s code=%d message=%s\n", endorecon::error_kind_name(kind), exit_code(kind),
               message.c_str());
  return exit_code(kind);
}

struct Flags {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<int> frames;
  std::optional<int> patch_size;
  std::optional<int> epochs;
  std::optional<int> iters;
  std::optional<double> voxel_size;
  std::optional<double> threshold;
  std::string data;
  std::string pred;
  std::string gt;
};

pl::RunConfig effective_config(const std::string& cmd, const Flags& f) {
  pl::RunConfig c = f.config.empty() ? pl::RunConfig{} : pl::load_config(f.config);
  if (f.seed) c.seed = *f.seed;
  if (f.frames) c.synth.frames = *f.frames;
  if (f.patch_size) c.recon.patch_size = *f.patch_size;
  if (f.epochs) c.recon.epochs = *f.epochs;
  if (f.iters && cmd == "demo-lora") c.lora.steps = *f.iters;
  else if (f.iters) c.recon.iters_per_epoch = *f.iters;
  if (f.voxel_size) c.fusion.voxel_size = *f.voxel_size;
  if (f.threshold) c.eval.threshold = *f.threshold;
  c.validate();
  return c;
}

fs::path prepare_out(const pl::RunConfig& c, const Flags& f) {
  const fs::path dir = pl::resolve_output_dir(c, f.out);
  fs::create_directories(dir);
  endorecon::io::atomic_write(dir / "config.json", pl::serialize_config(c));
  return dir;
}

void print_metrics(const endorecon::metrics::MetricReport& r) { std::cout << r.key_value(); }

pl::Dataset load_frames(const Flags& f, const pl::RunConfig& c) {
  if (f.data.empty()) endorecon::fail(ErrorKind::kConfig, "--data is required");
  pl::Dataset d = pl::read_dataset(f.data);
  if (f.frames) {
    const auto n = static_cast<std::size_t>(c.synth.frames);
    if (n < 2 || n > d.size()) endorecon::fail(ErrorKind::kConfig, "--frames must be between 2 and the dataset length");
    d.images.resize(n);
    d.pred_depth.resize(n);
    d.pred_relative.resize(n - 1);
    if (!d.depth.empty()) d.depth.resize(n);
    if (!d.poses.empty()) d.poses.resize(n);
  }
  return d;
}

int run(const std::string& cmd, const Flags& f) {
  const pl::RunConfig c = effective_config(cmd, f);
  if (cmd == "synth") {
    const fs::path dir = prepare_out(c, f);
    pl::write_dataset(dir, pl::synthesize(c.synth, c.seed));
    std::cout << "frames=" << c.synth.frames << "\nout=" << dir.string() << "\n";
  } else if (cmd == "demo-lora") {
    const fs::path dir = prepare_out(c, f);
    const fs::path ckpt = dir / "checkpoint.json";
    const pl::LoraDemoOutput out = pl::demo_lora(c, &ckpt);
    endorecon::io::atomic_write(dir / "report.json", out.report);
    std::cout << "steps=" << out.losses.size() << "\nswitch_step=" << out.switch_step
              << "\nworst_gradient_error=" << endorecon::io::format_double(out.worst_gradient_error)
              << "\nfinal_loss=" << (out.losses.empty() ? 0.0 : out.losses.back()) << "\n";
  } else if (cmd == "align") {
    const pl::Dataset d = load_frames(f, c);
    const fs::path dir = prepare_out(c, f);
    const pl::AlignOutput out = pl::align_pair(d, c);
    fs::create_directories(dir / "depth");
    for (std::size_t i = 0; i < 2; ++i)
      endorecon::io::write_pfm(dir / "depth" / (pl::frame_name(c.recon.align_frame + i) + ".pfm"), out.result.problem.aligned_depth(i));
    endorecon::io::atomic_write(dir / "report.json", out.report);
    std::cout << "initial_loss=" << out.result.initial.total << "\nfinal_loss=" << out.result.final.total << "\n";
  } else if (cmd == "reconstruct") {
    const pl::Dataset d = load_frames(f, c);
    const fs::path dir = prepare_out(c, f);
    const pl::ReconstructOutput out = pl::reconstruct(d, c);
    pl::write_reconstruction(dir, out);
    std::cout << "initial_loss=" << out.result.initial.total << "\nfinal_loss=" << out.result.final.total
              << "\nvoxel_size=" << out.voxel_size << "\npoints=" << out.cloud.size() << "\n";
  } else {
    if (f.pred.empty() || f.gt.empty()) endorecon::fail(ErrorKind::kConfig, "--pred and --gt are required");
    for (const auto& p : {f.pred, f.gt})
      if (!fs::exists(p)) endorecon::fail(ErrorKind::kData, "not found: " + p);
    endorecon::metrics::MetricReport r;
    if (cmd == "eval-depth") r = pl::eval_depth(f.pred, f.gt, c.eval);
    else if (cmd == "eval-pose") r = pl::eval_pose(f.pred, f.gt);
    else r = pl::eval_recon(endorecon::fusion::read_ply(f.pred), endorecon::fusion::read_ply(f.gt), c.eval);
    if (f.out || std::getenv(pl::kOutputRootEnv)) {
      const fs::path dir = prepare_out(c, f);
      endorecon::io::atomic_write(dir / (cmd + ".json"), pl::report_json(r));
    }
    print_metrics(r);
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Affine-consistent endoscopic depth, pose and 3D reconstruction"};
  app.require_subcommand(1);
  Flags f;
  auto common = [&](CLI::App* s) {
    s->add_option("--config", f.config, "JSON configuration file");
    s->add_option("--seed", f.seed, "Random seed");
    s->add_option("--out", f.out, "Output directory");
  };
  auto recon_flags = [&](CLI::App* s) {
    s->add_option("--data", f.data, "Dataset directory")->required();
    s->add_option("--frames", f.frames, "Use the first N frames");
    s->add_option("--patch-size", f.patch_size, "Anchor patch size in pixels");
    s->add_option("--epochs", f.epochs, "Optimisation epochs");
    s->add_option("--iters", f.iters, "Iterations per epoch");
  };
  auto eval_flags = [&](CLI::App* s) {
    s->add_option("--pred", f.pred, "Prediction")->required();
    s->add_option("--gt", f.gt, "Ground truth")->required();
  };

  CLI::App* demo = app.add_subcommand("demo-lora", "Train the toy GDV-LoRA network with gradient checks");
  common(demo);
  demo->add_option("--iters", f.iters, "Training steps, warm-up included");
  CLI::App* align = app.add_subcommand("align", "Optimise alignment of one adjacent frame pair");
  common(align);
  recon_flags(align);
  CLI::App* rec = app.add_subcommand("reconstruct", "Optimise, fuse and export a point cloud");
  common(rec);
  recon_flags(rec);
  rec->add_option("--voxel-size", f.voxel_size, "TSDF voxel size in mm (default: diagonal / 128)");
  CLI::App* ed = app.add_subcommand("eval-depth", "Depth metrics of a file or directory");
  common(ed);
  eval_flags(ed);
  CLI::App* ep = app.add_subcommand("eval-pose", "ATE/RPE over 5-frame snippets");
  common(ep);
  eval_flags(ep);
  CLI::App* er = app.add_subcommand("eval-recon", "Point-cloud metrics after ICP");
  common(er);
  eval_flags(er);
  er->add_option("--threshold", f.threshold, "F-score threshold in mm");
  CLI::App* sy = app.add_subcommand("synth", "Write a synthetic dataset");
  common(sy);
  sy->add_option("--frames", f.frames, "Number of frames");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error(ErrorKind::kConfig, e.what());
  }

  try {
    return run(app.get_subcommands().front()->get_name(), f);
  } catch (const endorecon::Error& e) {
    return report_error(e.kind(), e.what());
  } catch (const fs::filesystem_error& e) {
    return report_error(ErrorKind::kData, e.what());
  } catch (const std::exception& e) {
    return report_error(ErrorKind::kData, e.what());
  }
}
