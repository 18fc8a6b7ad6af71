// cll: command-line front end for training, tuning and analysing
// continuous-level denoisers.

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "cll/baselines.hpp"
#include "cll/config.hpp"
#include "cll/gradcheck.hpp"
#include "cll/io.hpp"
#include "cll/metrics.hpp"
#include "cll/report.hpp"
#include "cll/runtime.hpp"
#include "cll/train.hpp"

namespace fs = std::filesystem;
using namespace cll;

namespace {

enum Exit : int {
  ok = 0,
  internal = 1,
  usage = 2,
  missing_file = 3,
  bad_checkpoint = 4,
  training_failed = 5,
  check_failed = 6,
};

const char* kExitHelp =
    "Exit codes:\n"
    "  0  success\n"
    "  1  internal error\n"
    "  2  invalid command line or config (unknown key, bad value)\n"
    "  3  missing or unreadable input file, or unwritable output\n"
    "  4  corrupt or incompatible checkpoint\n"
    "  5  training diverged (non-finite loss or gradient)\n"
    "  6  gradcheck tolerance exceeded\n"
    "Errors print one line to stderr: cll: error kind=<kind> exit=<code>: <message>";

// Raised for conditions that map to a specific exit code.
struct Failure {
  Exit code;
  std::string kind;
  std::string message;
};

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> out;
  std::optional<std::string> mode;
  std::optional<double> alpha;
  bool deterministic = false;
  std::vector<std::string> overrides;
  std::string checkpoint;
  std::string base;
};

RunConfig resolve(const Options& o) {
  RunConfig c;
  if (!o.config_path.empty()) {
    if (!fs::exists(o.config_path)) throw Failure{missing_file, "missing_file", "config not found: " + o.config_path};
    c = load_config(o.config_path);
  }
  for (const auto& kv : o.overrides) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
    set_config_value(c, kv.substr(0, eq), kv.substr(eq + 1));
  }
  if (o.seed) c.train.seed = *o.seed;
  if (o.out) c.out = *o.out;
  if (o.mode) c.mode = parse_tune_mode(*o.mode);
  if (o.alpha) c.alpha = *o.alpha;
  if (o.deterministic) c.deterministic = true;
  c.validate();
  if (c.deterministic) set_worker_limit(1);
  fs::create_directories(c.out);
  return c;
}

void write_text(const fs::path& path, const std::function<void(std::ostream&)>& body) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw Failure{missing_file, "unwritable_output", "cannot write " + path.string()};
  body(os);
  if (!os) throw Failure{missing_file, "unwritable_output", "write to " + path.string() + " failed"};
}

Network load(const std::string& path) {
  if (!fs::exists(path)) throw Failure{missing_file, "missing_file", "checkpoint not found: " + path};
  return load_checkpoint(path);
}

std::string tuned_name(TuneMode mode) { return std::string("tuned_") + to_string(mode) + ".ckpt"; }

void progress(const char* phase, std::size_t step, double loss, std::size_t total) {
  if (step % 250 == 0 || step + 1 == total) {
    std::fprintf(stderr, "%s step %zu/%zu loss %.6f\n", phase, step + 1, total, loss);
  }
}

struct Data {
  SyntheticDataset data;
  ValidationSet val;
  explicit Data(const TrainConfig& t)
      : data(t.seed), val(ValidationSet::make(data, t.validation_images, t.validation_size)) {}
};

int cmd_train(const Options& o) {
  const RunConfig c = resolve(o);
  Data d(c.train);
  Network net = Network::build(c.network, c.train.seed);
  const auto r = train_phase1(net, d.data, d.val, c.train,
                              [&](std::size_t s, double l) { progress("phase1", s, l, c.train.steps_phase1); });
  save_checkpoint(net, c.out / "phase1.ckpt");
  write_text(c.out / "phase1_loss.csv", [&](std::ostream& os) { write_loss_csv(os, r); });
  Json rep = make_report("train", c);
  rep["network"] = to_json(c.network);
  rep["parameters"] = net.store().parameter_count();
  rep["phase1"] = to_json(r);
  rep["phase1"]["val_psnr_sigma_high"] = evaluate_psnr(net, d.val, c.train.sigma_high, 0.0);
  write_json(rep, c.out / "train_report.json");
  std::printf("phase1: val PSNR %.3f dB at sigma %.0f -> %s\n", r.val_psnr_after, c.train.sigma_low * 255,
              (c.out / "phase1.ckpt").c_str());
  return ok;
}

int cmd_tune(const Options& o) {
  const RunConfig c = resolve(o);
  const std::string ckpt = o.checkpoint.empty() ? (c.out / "phase1.ckpt").string() : o.checkpoint;
  Network net = load(ckpt);
  if (net.provider_count() != 0) throw ConfigError("tune expects a phase-1 checkpoint without providers");
  Data d(c.train);
  const double before = evaluate_psnr(net, d.val, c.train.sigma_high, 0.0);
  auto cb = [&](std::size_t s, double l) { progress(to_string(c.mode), s, l, c.train.steps_phase2); };
  PhaseResult r;
  Network tuned = net;
  if (c.mode == TuneMode::finetune) {
    tuned = finetune_unconstrained(net, d.data, d.val, c.train, c.train.steps_phase2, &r, cb);
  } else {
    const ProviderConfig p = providers_for(c.mode);
    if (p.mode == ProviderMode::adafm) {
      tuned.attach_adafm();
    } else {
      tuned.attach_ftn(p.ftn, p.exclude_last);
    }
    r = train_phase2(tuned, d.data, d.val, c.train, cb);
  }
  const fs::path out = c.out / tuned_name(c.mode);
  save_checkpoint(tuned, out);
  write_text(c.out / (std::string("tune_") + to_string(c.mode) + "_loss.csv"),
             [&](std::ostream& os) { write_loss_csv(os, r); });
  Json rep = make_report("tune", c);
  rep["checkpoint_in"] = ckpt;
  rep["providers"] = to_json(tuned.providers());
  rep["tuning_parameters"] = tuned.provider_count() ? tuned.store().parameter_count() - net.store().parameter_count()
                                                     : tuned.store().parameter_count();
  rep["phase2"] = to_json(r);
  rep["phase1_val_psnr_sigma_high"] = before;
  write_json(rep, c.out / (std::string("tune_") + to_string(c.mode) + "_report.json"));
  std::printf("%s: val PSNR at sigma %.0f %.3f -> %.3f dB -> %s\n", to_string(c.mode), c.train.sigma_high * 255,
              before, r.val_psnr_after, out.c_str());
  return ok;
}

int cmd_sweep(const Options& o) {
  const RunConfig c = resolve(o);
  const std::string ckpt = o.checkpoint.empty() ? (c.out / tuned_name(c.mode)).string() : o.checkpoint;
  const Network tuned = load(ckpt);
  Data d(c.train);
  std::vector<double> sigmas;
  for (double s : c.sweep_sigmas) sigmas.push_back(s / 255.0);
  SweepResult sweep;
  SimilarityReport sim;
  if (tuned.provider_count() == 0) {
    // Plain checkpoint: the DNI family between the phase-1 network and this one.
    const std::string base = o.base.empty() ? (c.out / "phase1.ckpt").string() : o.base;
    const Network first = load(base);
    sweep = dni_sweep(first, tuned, d.val, sigmas, c.sweep_step, c.train.sigma_low, c.train.sigma_high);
    sim = network_similarity(first, tuned);
  } else {
    sweep = alpha_sweep(tuned, d.val, sigmas, c.sweep_step, c.train.sigma_low, c.train.sigma_high);
    sim = network_similarity(tuned, tuned);
  }
  write_text(c.out / "sweep.csv", [&](std::ostream& os) { write_sweep_csv(os, sweep); });
  write_text(c.out / "similarity.csv", [&](std::ostream& os) { write_similarity_csv(os, sim); });
  Json rep = make_report("sweep", c);
  rep["checkpoint"] = ckpt;
  rep["sweep"] = to_json(sweep);
  rep["similarity"] = to_json(sim);
  write_json(rep, c.out / "sweep_report.json");
  for (std::size_t s = 0; s < sigmas.size(); ++s) {
    std::printf("sigma %5.1f: argmax alpha %.2f (ideal %.2f)\n", sigmas[s] * 255, sweep.argmax_alpha[s],
                sweep.ideal_alpha[s]);
  }
  std::printf("similarity: MAE %.6f cosine %.6f (weighted)\n", sim.mae_weighted, sim.cosine_weighted);
  return ok;
}

LevelMap level_map_for(const std::string& spec, std::size_t h, std::size_t w) {
  if (spec == "ramp") return LevelMap::ramp(h, w);
  if (spec.starts_with("constant:")) {
    std::size_t used = 0;
    const std::string v = spec.substr(9);
    double a = 0;
    try {
      a = std::stod(v, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != v.size() || v.empty()) throw ConfigError("level_map: cannot parse '" + spec + "'");
    if (!(a >= 0.0 && a <= 1.0)) throw ConfigError("level_map constant must lie in [0, 1]");
    return LevelMap::constant(h, w, static_cast<Real>(a));
  }
  if (!fs::exists(spec)) throw Failure{missing_file, "missing_file", "level map image not found: " + spec};
  const Tensor<Real> img = read_image(spec);
  if (img.shape().c != 1) throw ConfigError("level map image must be grayscale");
  if (img.shape().h != h || img.shape().w != w) {
    throw ConfigError("level map is " + std::to_string(img.shape().h) + "x" + std::to_string(img.shape().w) +
                      ", input is " + std::to_string(h) + "x" + std::to_string(w));
  }
  LevelMap m{img};
  return m;
}

int cmd_pixel_demo(const Options& o) {
  const RunConfig c = resolve(o);
  const std::string ckpt = o.checkpoint.empty() ? (c.out / tuned_name(c.mode)).string() : o.checkpoint;
  const Network net = load(ckpt);
  if (net.provider_count() == 0) throw ConfigError("pixel-demo needs a checkpoint with FTN or AdaFM providers");

  Tensor<Real> clean;
  Tensor<Real> noise;
  const SyntheticDataset data(c.train.seed);
  if (c.input.empty()) {
    const auto v = ValidationSet::make(data, 1, c.input_size);
    clean = v.clean;
    noise = v.unit_noise;
  } else {
    if (!fs::exists(c.input)) throw Failure{missing_file, "missing_file", "input image not found: " + c.input};
    clean = read_image(c.input);
    if (clean.shape().c != c.network.image_channels) throw ConfigError("input image channel count does not match the network");
    noise = Tensor<Real>(clean.shape());
    data.standard_noise(Stream::validation, 0, noise.size(), noise.raw());
  }
  Tensor<Real> noisy(clean.shape());
  const double sigma = c.input_sigma / 255.0;
  for (std::size_t i = 0; i < noisy.size(); ++i) noisy[i] = clean[i] + static_cast<Real>(sigma) * noise[i];

  const LevelMap map = level_map_for(c.level_map, clean.shape().h, clean.shape().w);
  const Tensor<Real> pixel = forward(net, noisy, BlendSpec{map});
  const Tensor<Real> global = forward(net, noisy, c.alpha);
  write_image(noisy, c.out / "pixel_input.png");
  write_image(map.values, c.out / "pixel_level_map.png");
  write_image(pixel, c.out / "pixel_adaptive.png");
  write_image(global, c.out / "pixel_global.png");

  std::size_t max_code_diff = 0;
  for (std::size_t i = 0; i < pixel.size(); ++i) {
    const int d = int(quantize(pixel[i])) - int(quantize(global[i]));
    max_code_diff = std::max<std::size_t>(max_code_diff, static_cast<std::size_t>(std::abs(d)));
  }
  Json rep = make_report("pixel-demo", c);
  rep["checkpoint"] = ckpt;
  rep["input_psnr"] = psnr(noisy, clean);
  rep["pixel_adaptive_psnr"] = psnr(pixel, clean);
  rep["global_alpha_psnr"] = psnr(global, clean);
  rep["max_abs_diff_vs_global"] = max_abs_diff(pixel, global);
  rep["max_code_diff_vs_global"] = max_code_diff;
  write_json(rep, c.out / "pixel_report.json");
  std::printf("pixel-adaptive PSNR %.3f dB, global alpha %.2f PSNR %.3f dB, max diff %.3g\n", psnr(pixel, clean),
              c.alpha, psnr(global, clean), max_abs_diff(pixel, global));
  return ok;
}

int cmd_macs(const Options& o) {
  const RunConfig c = resolve(o);
  const MacsReport r = macs_instrumented(c.network, c.macs_height, c.macs_width, {1, 4, 16});
  write_text(c.out / "macs.csv", [&](std::ostream& os) { write_macs_csv(os, r); });
  Json rep = make_report("macs", c);
  rep["macs"] = to_json(r);
  write_json(rep, c.out / "macs_report.json");
  std::printf("baseline %llu MACs at %zux%zu\n", static_cast<unsigned long long>(r.baseline), r.height, r.width);
  for (const auto& comp : r.components) {
    std::printf("  %-26s %12llu  %8.4f%%\n", comp.name.c_str(), static_cast<unsigned long long>(comp.macs),
                comp.overhead_pct);
  }
  return ok;
}

int cmd_gradcheck(const Options& o) {
  const RunConfig c = resolve(o);
  const auto reports = run_gradient_suite(c.train.seed, c.gradcheck_instances);
  constexpr double kTolerance = 1e-6;
  double worst = 0.0;
  Json ops = Json::array();
  for (const auto& r : reports) {
    worst = std::max(worst, r.worst_rel_error);
    std::printf("%-28s %3zu instances  worst rel error %.3e\n", r.op.c_str(), r.instances, r.worst_rel_error);
    ops.push_back(Json{{"op", r.op},
                       {"instances", r.instances},
                       {"coordinates", r.coordinates},
                       {"excluded", r.excluded},
                       {"worst_rel_error", r.worst_rel_error}});
  }
  const bool pass = worst <= kTolerance;
  Json rep = make_report("gradcheck", c);
  rep["tolerance"] = kTolerance;
  rep["worst_rel_error"] = worst;
  rep["pass"] = pass;
  rep["ops"] = ops;
  write_json(rep, c.out / "gradcheck_report.json");
  std::printf("%s worst relative error %.3e (tolerance %.0e)\n", pass ? "PASS" : "FAIL", worst, kTolerance);
  if (!pass) throw Failure{check_failed, "gradcheck_failed", "worst relative error above tolerance"};
  return ok;
}

int fail(Exit code, const std::string& kind, std::string message) {
  for (char& ch : message) {
    if (ch == '\n' || ch == '\r') ch = ' ';
  }
  std::fprintf(stderr, "cll: error kind=%s exit=%d: %s\n", kind.c_str(), static_cast<int>(code), message.c_str());
  return code;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Continuous-level denoising with filter transition networks"};
  app.footer(kExitHelp);
  app.require_subcommand(1);

  Options o;
  auto common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "key = value config file");
    sub->add_option("--seed", o.seed, "Override the seed");
    sub->add_option("--out", o.out, "Output directory");
    sub->add_option("--set", o.overrides, "Override one config key (key=value), repeatable");
    sub->add_flag("--deterministic", o.deterministic, "Single worker thread throughout");
  };
  auto with_mode = [&](CLI::App* sub) {
    sub->add_option("--mode", o.mode, "ftn, ftn-gc4, ftn-gc16, ftn-deeper, adafm or finetune")
        ->check(CLI::IsMember({"ftn", "ftn-gc4", "ftn-gc16", "ftn-deeper", "adafm", "finetune"}));
  };

  std::map<CLI::App*, int (*)(const Options&)> handlers;
  auto* train = app.add_subcommand("train", "Phase 1: train the main network at the first level");
  common(train);
  handlers[train] = cmd_train;

  auto* tune = app.add_subcommand("tune", "Phase 2: train providers (or fine-tune) at the second level");
  common(tune);
  with_mode(tune);
  tune->add_option("--checkpoint", o.checkpoint, "Phase-1 checkpoint (default OUT/phase1.ckpt)");
  handlers[tune] = cmd_tune;

  auto* sweep = app.add_subcommand("sweep", "PSNR over the alpha grid and filter similarity");
  common(sweep);
  with_mode(sweep);
  sweep->add_option("--checkpoint", o.checkpoint, "Tuned checkpoint (default OUT/tuned_MODE.ckpt)");
  sweep->add_option("--base", o.base, "Phase-1 checkpoint for DNI sweeps (default OUT/phase1.ckpt)");
  handlers[sweep] = cmd_sweep;

  auto* pixel = app.add_subcommand("pixel-demo", "Per-pixel level control with a level map");
  common(pixel);
  with_mode(pixel);
  pixel->add_option("--checkpoint", o.checkpoint, "Tuned checkpoint (default OUT/tuned_MODE.ckpt)");
  pixel->add_option("--alpha", o.alpha, "Global alpha for the comparison output")->check(CLI::Range(0.0, 1.0));
  handlers[pixel] = cmd_pixel_demo;

  auto* macs = app.add_subcommand("macs", "Instrumented multiply-accumulate accounting");
  common(macs);
  handlers[macs] = cmd_macs;

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference check of every differentiable operation");
  common(grad);
  handlers[grad] = cmd_gradcheck;

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail(usage, "usage", e.what());
  }

  CLI::App* chosen = app.get_subcommands().front();
  try {
    return handlers.at(chosen)(o);
  } catch (const Failure& f) {
    return fail(f.code, f.kind, f.message);
  } catch (const CheckpointError& e) {
    if (e.code() == CheckpointErrorCode::io) return fail(missing_file, "checkpoint_io", e.what());
    return fail(bad_checkpoint, std::string("checkpoint_") + to_string(e.code()), e.what());
  } catch (const StoreMismatchError& e) {
    return fail(bad_checkpoint, "checkpoint_mismatch", e.what());
  } catch (const ImageError& e) {
    return fail(missing_file, "image", e.what());
  } catch (const TrainingError& e) {
    return fail(training_failed, "training_diverged", e.what());
  } catch (const NonFiniteError& e) {
    return fail(training_failed, "non_finite", e.what());
  } catch (const ConfigError& e) {
    return fail(usage, "config", e.what());
  } catch (const RangeError& e) {
    return fail(usage, "config", e.what());
  } catch (const fs::filesystem_error& e) {
    return fail(missing_file, "filesystem", e.what());
  } catch (const std::exception& e) {
    return fail(internal, "internal", e.what());
  }
}
