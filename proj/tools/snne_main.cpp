// snne: spiking convolutional encoder-decoder for underwater image
// enhancement. Subcommands: train, infer, profile, eval.

#include <CLI11.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "snne/data.hpp"
#include "snne/image_io.hpp"
#include "snne/network.hpp"
#include "snne/profiler.hpp"
#include "snne/quality.hpp"
#include "snne/training.hpp"

namespace fs = std::filesystem;
using namespace snne;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 2;       // user/config errors
constexpr int kExitArtifact = 3;    // checkpoint/ingestion errors
constexpr int kExitDivergence = 4;  // non-finite training loss

struct CommonOpts {
  int depth = 4;
  int base_channels = 64;
  int timesteps = 5;
  double threshold = 0.25;
  double surrogate_slope = 25.0;
  double decay_init = 0.5;
  int resolution = 64;
  std::uint64_t seed = 0;
  int threads = 1;
};

void add_network_options(CLI::App* cmd, CommonOpts& opts) {
  auto* g = cmd->add_option_group("network");
  g->add_option("--depth", opts.depth, "Encoder/decoder stages (3, 4 or 5)")
      ->capture_default_str();
  g->add_option("--base-channels", opts.base_channels,
                "Channels of the first stage")
      ->capture_default_str();
  g->add_option("--timesteps", opts.timesteps, "Simulation timesteps T")
      ->capture_default_str();
  g->add_option("--threshold", opts.threshold, "LIF firing threshold")
      ->capture_default_str();
  g->add_option("--surrogate-slope", opts.surrogate_slope,
                "Fast-sigmoid surrogate slope")
      ->capture_default_str();
  g->add_option("--decay-init", opts.decay_init,
                "Initial membrane decay rate in (0,1)")
      ->capture_default_str();
  g->add_option("--resolution", opts.resolution,
                "Square working resolution; rounded to a multiple of 2^depth")
      ->capture_default_str();
}

int rounded_resolution(int resolution, int depth) {
  const int unit = 1 << depth;
  const int rounded =
      static_cast<int>(std::llround(static_cast<double>(resolution) / unit)) *
      unit;
  return std::max(unit, rounded);
}

NetworkConfig network_config(const CommonOpts& opts) {
  NetworkConfig cfg;
  cfg.depth = opts.depth;
  cfg.base_channels = opts.base_channels;
  cfg.timesteps = opts.timesteps;
  cfg.lif.threshold = opts.threshold;
  cfg.lif.surrogate_slope = opts.surrogate_slope;
  cfg.lif.decay_init = opts.decay_init;
  const int res =
      rounded_resolution(opts.resolution, std::clamp(opts.depth, 3, 5));
  cfg.height = res;
  cfg.width = res;
  return cfg;
}

// Rebuilds the layer list of a trained graph at a new input resolution; the
// parameters are resolution-independent.
LayerGraph<float> reshape_graph(const LayerGraph<float>& graph, int height,
                                int width) {
  if (graph.cfg.height == height && graph.cfg.width == width) return graph;
  LayerGraph<float> out;
  out.cfg = graph.cfg;
  out.cfg.height = height;
  out.cfg.width = width;
  out.cfg.validate();
  out.layers = make_layers(out.cfg);
  out.conv_params = graph.conv_params;
  out.decay_raw = graph.decay_raw;
  audit(out);
  return out;
}

std::string format_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

void write_resolved_config(const fs::path& path, const CLI::App* cmd) {
  std::ofstream out(path);
  if (!out) {
    throw ConfigError("cannot write resolved config: " + path.string());
  }
  out << "# resolved configuration (" << cmd->get_name() << ")\n";
  out << cmd->config_to_str(true, false);
}

void require_output_dir(const fs::path& dir,
                        std::vector<std::string>& problems) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir)) {
    problems.push_back("output directory not writable: " + dir.string());
  }
}

void fail_if_any(std::vector<std::string>& problems) {
  if (problems.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& p : problems) msg += "\n  - " + p;
  throw ConfigError(msg);
}

// ---------------------------------------------------------------------------
// train

struct TrainOpts {
  CommonOpts common;
  std::string data_dir;
  std::string manifest;
  std::string out_dir;
  int epochs = 200;
  int val_start = 50;
  int batch = 4;
  double val_fraction = 0.2;
  double lr = 1e-3;
  double stop_below_mse = 0.0;  // 0 disables early stop
};

int run_train(const TrainOpts& opts, const CLI::App* cmd) {
  std::vector<std::string> problems;
  std::string data_dir = opts.data_dir;
  if (data_dir.empty() && opts.manifest.empty()) {
    if (const char* env = std::getenv("SNNE_DATA_ROOT")) data_dir = env;
  }
  if (data_dir.empty() && opts.manifest.empty()) {
    problems.push_back(
        "no dataset: pass --data or --manifest (or set SNNE_DATA_ROOT)");
  }
  NetworkConfig cfg = network_config(opts.common);
  try {
    cfg.validate();
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  TrainSchedule sched;
  sched.epochs = opts.epochs;
  sched.validation_start_epoch = std::min(opts.val_start, opts.epochs);
  sched.batch_size = opts.batch;
  sched.seed = opts.common.seed;
  sched.lr = opts.lr;
  sched.threads = opts.common.threads;
  try {
    sched.validate();
  } catch (const ConfigError& e) {
    problems.push_back(e.what());
  }
  if (!(opts.val_fraction >= 0.0 && opts.val_fraction < 1.0)) {
    problems.push_back("--val-fraction must lie in [0,1)");
  }
  const fs::path out_dir(opts.out_dir);
  require_output_dir(out_dir, problems);
  fail_if_any(problems);

  std::vector<ManifestEntry> entries;
  if (!opts.manifest.empty()) {
    entries = load_manifest(opts.manifest);
  } else {
    entries = scan_pair_dirs((fs::path(data_dir) / "raw").string(),
                             (fs::path(data_dir) / "ref").string());
  }
  if (entries.empty()) throw ConfigError("dataset is empty");
  auto [train_entries, val_entries] =
      split(entries, opts.common.seed ^ 0x5eedULL, 1.0 - opts.val_fraction);
  if (train_entries.empty()) {
    throw ConfigError("training split is empty; lower --val-fraction");
  }
  std::printf("dataset: %zu pairs (%zu train, %zu val) at %dx%d\n",
              entries.size(), train_entries.size(), val_entries.size(),
              cfg.height, cfg.width);

  write_resolved_config(out_dir / "resolved_config.ini", cmd);

  LayerGraph<float> graph = build<float>(cfg, opts.common.seed);
  std::printf("network: depth %d, %d convolutions, %zu parameters\n",
              cfg.depth, graph.conv_layer_count(), graph.parameter_count());

  std::ofstream metrics(out_dir / "metrics.csv", std::ios::trunc);
  metrics << "epoch,train_mse,val_mse,seconds\n";

  TrainHooks hooks;
  hooks.train_count = train_entries.size();
  hooks.load_train = [&, height = cfg.height,
                      width = cfg.width](std::size_t i) {
    const auto& e = train_entries[i];
    ImagePair pair = load_pair(e.raw_path, e.ref_path, height, width);
    return std::make_pair(std::move(pair.raw), std::move(pair.reference));
  };
  hooks.val_count = val_entries.size();
  hooks.load_val = [&, height = cfg.height, width = cfg.width](std::size_t i) {
    const auto& e = val_entries[i];
    ImagePair pair = load_pair(e.raw_path, e.ref_path, height, width);
    return std::make_pair(std::move(pair.raw), std::move(pair.reference));
  };
  hooks.save_checkpoint = [&](const LayerGraph<float>& g,
                              const std::string& tag) {
    save_checkpoint((out_dir / (tag + ".ckpt")).string(), g);
  };
  hooks.on_epoch = [&](const EpochStats& s) {
    metrics << s.epoch << "," << format_g(s.train_mse) << ",";
    if (s.val_mse) metrics << format_g(*s.val_mse);
    metrics << "," << format_g(s.seconds) << "\n";
    metrics.flush();
    std::printf("epoch %d: train_mse %.6g%s%s (%.1fs)\n", s.epoch, s.train_mse,
                s.val_mse ? " val_mse " : "",
                s.val_mse ? format_g(*s.val_mse).c_str() : "", s.seconds);
    std::fflush(stdout);
  };
  if (opts.stop_below_mse > 0.0) {
    hooks.stop_early = [target = opts.stop_below_mse](const EpochStats& s) {
      return s.train_mse < target;
    };
  }

  try {
    const TrainResult result = train(graph, sched, hooks);
    std::printf("best checkpoint: %s (epoch %d)\n",
                (out_dir / "best.ckpt").string().c_str(), result.best_epoch);
    return kExitOk;
  } catch (const DivergenceError& e) {
    std::fprintf(stderr, "%s\nlast checkpoint: %s\n", e.what(),
                 (out_dir / "last.ckpt").string().c_str());
    return kExitDivergence;
  }
}

// ---------------------------------------------------------------------------
// infer

struct InferOpts {
  std::string checkpoint;
  std::string in_dir;
  std::string out_dir;
  int resolution = 0;  // 0: use the checkpoint resolution
};

int run_infer(const InferOpts& opts) {
  std::vector<std::string> problems;
  const fs::path out_dir(opts.out_dir);
  require_output_dir(out_dir, problems);
  fail_if_any(problems);

  LayerGraph<float> graph = load_checkpoint(opts.checkpoint);
  if (opts.resolution > 0) {
    const int res = rounded_resolution(opts.resolution, graph.cfg.depth);
    graph = reshape_graph(graph, res, res);
  }
  const std::vector<std::string> inputs = scan_image_dir(opts.in_dir);
  if (inputs.empty()) {
    throw ConfigError("no decodable images in " + opts.in_dir);
  }
  for (const auto& path : inputs) {
    const auto t0 = std::chrono::steady_clock::now();
    Tensor4f img = resize_bilinear(image_to_tensor(read_image(path)),
                                   graph.cfg.height, graph.cfg.width);
    const Tensor4f out = forward(graph, img).output;
    const fs::path dst = out_dir / (fs::path(path).stem().string() + ".png");
    write_png(dst.string(), tensor_to_image(out));
    const double secs =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
            .count();
    std::fprintf(stderr, "infer %s -> %s (%.3fs)\n", path.c_str(),
                 dst.string().c_str(), secs);
  }
  std::printf("enhanced %zu images into %s\n", inputs.size(),
              out_dir.string().c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// profile

struct ProfileOpts {
  std::string checkpoint;
  std::string data_dir;
  std::string manifest;
  std::string out_dir;
  int resolution = 0;
  int limit = 0;  // 0: all images
  double e_mac_pj = 4.6;
  double e_acc_pj = 0.9;
};

int run_profile(const ProfileOpts& opts) {
  std::vector<std::string> problems;
  const fs::path out_dir(opts.out_dir);
  require_output_dir(out_dir, problems);
  if (opts.data_dir.empty() && opts.manifest.empty()) {
    problems.push_back("no dataset: pass --data or --manifest");
  }
  fail_if_any(problems);

  LayerGraph<float> graph = load_checkpoint(opts.checkpoint);
  if (opts.resolution > 0) {
    const int res = rounded_resolution(opts.resolution, graph.cfg.depth);
    graph = reshape_graph(graph, res, res);
  }

  std::vector<std::string> paths;
  if (!opts.manifest.empty()) {
    for (const auto& e : load_manifest(opts.manifest)) {
      paths.push_back(e.raw_path);
    }
  } else {
    paths = scan_image_dir(opts.data_dir);
  }
  if (paths.empty()) throw ConfigError("no images to profile");
  if (opts.limit > 0 && static_cast<int>(paths.size()) > opts.limit) {
    paths.resize(static_cast<std::size_t>(opts.limit));
  }

  // Decode ahead of the forward pass through a small bounded queue.
  BoundedQueue<Tensor4f> queue(2);
  std::thread producer([&] {
    for (const auto& path : paths) {
      queue.push(resize_bilinear(image_to_tensor(read_image(path)),
                                 graph.cfg.height, graph.cfg.width));
    }
    queue.close();
  });
  SpikeTrace trace;
  std::size_t done = 0;
  while (auto img = queue.pop()) {
    trace.accumulate(forward(graph, *img).trace);
    ++done;
  }
  producer.join();
  std::printf("profiled %zu images at %dx%d\n", done, graph.cfg.height,
              graph.cfg.width);

  EnergyTable table;
  table.e_mac_pj = opts.e_mac_pj;
  table.e_acc_pj = opts.e_acc_pj;
  const EnergyReport report = energy_report(graph, trace, table);

  std::ofstream csv(out_dir / "report.csv", std::ios::trunc);
  write_energy_csv(report, csv);
  const std::string summary = energy_summary(report);
  std::ofstream(out_dir / "summary.txt") << summary << "\n";
  std::printf("%s\n", summary.c_str());
  return kExitOk;
}

// ---------------------------------------------------------------------------
// eval

struct EvalOpts {
  std::string enhanced_dir;
  std::string reference_dir;
  std::string out_csv;
};

int run_eval(const EvalOpts& opts) {
  const std::vector<std::string> enhanced = scan_image_dir(opts.enhanced_dir);
  if (enhanced.empty()) {
    throw ConfigError("no decodable images in " + opts.enhanced_dir);
  }
  const bool with_reference = !opts.reference_dir.empty();

  std::ofstream csv(opts.out_csv, std::ios::trunc);
  if (!csv) throw ConfigError("cannot write " + opts.out_csv);
  csv << (with_reference ? "filename,psnr_db,ssim,uciqe,uiqm\n"
                         : "filename,uciqe,uiqm\n");

  double psnr_sum = 0.0, ssim_sum = 0.0, uciqe_sum = 0.0, uiqm_sum = 0.0;
  std::size_t matched = 0;
  for (const auto& path : enhanced) {
    const std::string name = fs::path(path).filename().string();
    const Tensor4f img = image_to_tensor(read_image(path));
    const double u1 = uciqe(img);
    const double u2 = uiqm(img);
    if (with_reference) {
      const fs::path ref_path = fs::path(opts.reference_dir) / name;
      if (!fs::exists(ref_path)) continue;
      Tensor4f ref = image_to_tensor(read_image(ref_path.string()));
      if (!ref.same_shape(img)) {
        ref = resize_bilinear(ref, img.height, img.width);
      }
      const PsnrResult p = psnr(ref, img);
      const double s = ssim(ref, img);
      const double db =
          p.identical ? std::numeric_limits<double>::infinity() : p.db;
      psnr_sum += db;
      ssim_sum += s;
      csv << name << "," << format_g(db) << "," << format_g(s) << ","
          << format_g(u1) << "," << format_g(u2) << "\n";
    } else {
      csv << name << "," << format_g(u1) << "," << format_g(u2) << "\n";
    }
    uciqe_sum += u1;
    uiqm_sum += u2;
    ++matched;
  }
  if (matched == 0) {
    throw ConfigError("no evaluable images (missing references?)");
  }
  const double n = static_cast<double>(matched);
  if (with_reference) {
    csv << "mean," << format_g(psnr_sum / n) << "," << format_g(ssim_sum / n)
        << "," << format_g(uciqe_sum / n) << "," << format_g(uiqm_sum / n)
        << "\n";
    std::printf(
        "mean over %zu images: psnr %.4f dB, ssim %.4f, uciqe %.4f, "
        "uiqm %.4f\n",
        matched, psnr_sum / n, ssim_sum / n, uciqe_sum / n, uiqm_sum / n);
  } else {
    csv << "mean," << format_g(uciqe_sum / n) << "," << format_g(uiqm_sum / n)
        << "\n";
    std::printf("mean over %zu images: uciqe %.4f, uiqm %.4f\n", matched,
                uciqe_sum / n, uiqm_sum / n);
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "spiking convolutional encoder-decoder for underwater image "
      "enhancement"};
  app.require_subcommand(1);

  TrainOpts train_opts;
  CLI::App* train_cmd =
      app.add_subcommand("train", "Train a network on paired images");
  train_cmd->set_config("--config", "", "INI config file; flags override");
  add_network_options(train_cmd, train_opts.common);
  train_cmd
      ->add_option("--seed", train_opts.common.seed,
                   "Seed for init, splits and shuffles")
      ->capture_default_str();
  train_cmd
      ->add_option("--threads", train_opts.common.threads,
                   "Parallel samples per batch")
      ->capture_default_str();
  train_cmd->add_option("--data", train_opts.data_dir,
                        "Dataset root containing raw/ and ref/");
  train_cmd->add_option("--manifest", train_opts.manifest,
                        "TSV manifest of raw<TAB>reference pairs");
  train_cmd->add_option("--out", train_opts.out_dir, "Output directory")
      ->required();
  train_cmd->add_option("--epochs", train_opts.epochs)->capture_default_str();
  train_cmd
      ->add_option("--val-start", train_opts.val_start,
                   "First epoch that runs validation")
      ->capture_default_str();
  train_cmd->add_option("--batch", train_opts.batch)->capture_default_str();
  train_cmd->add_option("--val-fraction", train_opts.val_fraction)
      ->capture_default_str();
  train_cmd->add_option("--lr", train_opts.lr, "Adam learning rate")
      ->capture_default_str();
  train_cmd
      ->add_option("--stop-below-mse", train_opts.stop_below_mse,
                   "Stop once train MSE falls below this (0 = off)")
      ->capture_default_str();

  InferOpts infer_opts;
  CLI::App* infer_cmd =
      app.add_subcommand("infer", "Enhance a directory of images");
  infer_cmd->add_option("--checkpoint", infer_opts.checkpoint)->required();
  infer_cmd->add_option("--in", infer_opts.in_dir, "Input image directory")
      ->required();
  infer_cmd->add_option("--out", infer_opts.out_dir, "Output directory")
      ->required();
  infer_cmd->add_option("--resolution", infer_opts.resolution,
                        "Override the checkpoint resolution");

  ProfileOpts profile_opts;
  CLI::App* profile_cmd = app.add_subcommand(
      "profile",
      "Spike rates, SOPs and energy versus the non-spiking baseline");
  profile_cmd->add_option("--checkpoint", profile_opts.checkpoint)->required();
  profile_cmd->add_option("--data", profile_opts.data_dir,
                          "Directory of raw images");
  profile_cmd->add_option("--manifest", profile_opts.manifest,
                          "TSV manifest; the raw column is profiled");
  profile_cmd->add_option("--out", profile_opts.out_dir, "Output directory")
      ->required();
  profile_cmd->add_option("--resolution", profile_opts.resolution,
                          "Override the checkpoint resolution");
  profile_cmd->add_option("--limit", profile_opts.limit,
                          "Profile at most this many images (0 = all)");
  profile_cmd
      ->add_option("--e-mac", profile_opts.e_mac_pj, "Energy per MAC in pJ")
      ->capture_default_str();
  profile_cmd
      ->add_option("--e-acc", profile_opts.e_acc_pj,
                   "Energy per accumulate in pJ")
      ->capture_default_str();

  EvalOpts eval_opts;
  CLI::App* eval_cmd =
      app.add_subcommand("eval", "Image quality metrics over a directory");
  eval_cmd->add_option("--enhanced", eval_opts.enhanced_dir)->required();
  eval_cmd->add_option("--reference", eval_opts.reference_dir,
                       "Reference directory (optional; enables PSNR/SSIM)");
  eval_cmd->add_option("--out", eval_opts.out_csv, "Output CSV path")
      ->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (train_cmd->parsed()) return run_train(train_opts, train_cmd);
    if (infer_cmd->parsed()) return run_infer(infer_opts);
    if (profile_cmd->parsed()) return run_profile(profile_opts);
    if (eval_cmd->parsed()) return run_eval(eval_opts);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const PreconditionError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const ShapeError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const CheckpointError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitArtifact;
  } catch (const IngestError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitArtifact;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "internal error: %s\n", e.what());
    return 1;
  }
  return kExitUsage;
}
