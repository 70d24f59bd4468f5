#include "facepatch/analyzer.hpp"
#include "facepatch/config.hpp"
#include "facepatch/harness.hpp"
#include "facepatch/image_io.hpp"
#include "facepatch/trainer.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <iostream>
#include <optional>
#include <sstream>

namespace fs = std::filesystem;
using namespace facepatch;

namespace {

struct UsageError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct Options {
  std::string weights;
  std::optional<std::uint64_t> seed;
};

WeightBundle weights_of(const Options& o) {
  return load_weights(o.weights.empty() ? default_weights_dir() : fs::path(o.weights));
}

TrainingConfig config_or_default(const std::string& path) {
  return path.empty() ? TrainingConfig{} : load_config(path);
}

std::vector<double> parse_factors(const std::string& list) {
  std::vector<double> out;
  std::stringstream ss(list);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      size_t used = 0;
      out.push_back(std::stod(item, &used));
      if (used != item.size()) throw std::invalid_argument(item);
    } catch (const std::exception&) {
      throw UsageError("--factors: '" + item + "' is not a number");
    }
  }
  if (out.empty()) throw UsageError("--factors: empty list");
  for (double f : out)
    if (!(f > 0.0 && f < 1.0)) throw UsageError("--factors: " + std::to_string(f) + " is outside (0, 1)");
  return out;
}

AttackScaleSet analyze_frames(const Detector& detector, const std::vector<TrainingSample>& frames,
                              const PyramidConfig& pyramid, ScaleStrategy strategy, bool print) {
  std::vector<std::vector<ScaleContribution>> per_frame;
  int min_side = std::numeric_limits<int>::max();
  for (const auto& f : frames) {
    per_frame.push_back(trace_scale_contributions(detector, f.image, f.face_region, pyramid));
    min_side = std::min({min_side, f.image.height(), f.image.width()});
  }
  const auto merged = merge_contributions(per_frame);
  const auto set = select_attack_scales(merged, strategy, pyramid, min_side);
  if (print) {
    std::printf("%5s %10s %10s %10s %10s\n", "index", "scale", "proposals", "on_face", "to_rnet");
    for (size_t k = 0; k < merged.size(); ++k)
      std::printf("%5zu %10.6f %10d %10d %10d\n", k, merged[k].scale, merged[k].proposals_after_pnet,
                  merged[k].proposals_overlapping_face, merged[k].survivors_to_rnet);
    std::printf("attack scales (%s): %.9g %.9g %.9g\n", to_string(strategy).c_str(), set.scales[0], set.scales[1],
                set.scales[2]);
  }
  return set;
}

PatchSet<float> read_patch_args(const std::vector<std::string>& args, const DatasetManifest& dataset) {
  if (args.size() == 1 && args[0].find('=') == std::string::npos) return load_checkpoint(args[0]).best;
  PatchSet<float> patches = dataset.patches;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    if (eq == std::string::npos) throw UsageError("--patch: expected a checkpoint or name=image.png, got '" + a + "'");
    const std::string name = a.substr(0, eq);
    auto it = std::find_if(patches.begin(), patches.end(), [&](const Patch& p) { return p.name == name; });
    if (it == patches.end()) throw UsageError("--patch: manifest has no patch named '" + name + "'");
    it->pixels = read_gray_image(a.substr(eq + 1));
    validate_patch(*it);
  }
  return patches;
}

int cmd_detect(const Options& o, const std::string& image, const std::string& config) {
  const auto cfg = config_or_default(config);
  const Detector detector(weights_of(o));
  const auto detections = detector.detect(read_image(image), cfg.pyramid);
  std::printf("%zu detection%s\n", detections.size(), detections.size() == 1 ? "" : "s");
  for (const auto& d : detections) {
    std::printf("box %.2f %.2f %.2f %.2f score %.6f\n", d.box.x1, d.box.y1, d.box.x2, d.box.y2, d.box.score);
    std::printf("landmarks");
    for (const auto& p : d.landmarks) std::printf(" %.2f,%.2f", p.x, p.y);
    std::printf("\n");
  }
  return 0;
}

int cmd_analyze(const Options& o, const std::string& manifest, const std::string& strategy,
                const std::string& config) {
  auto cfg = config.empty() || !fs::exists(config) ? TrainingConfig{} : load_config(config);
  const auto dataset = load_dataset(manifest);
  const Detector detector(weights_of(o));
  cfg.attack_scales =
      analyze_frames(detector, select_frames(dataset, Split::train), cfg.pyramid, parse_scale_strategy(strategy), true);
  if (!config.empty()) {
    save_config(cfg, config);
    std::printf("wrote %s\n", config.c_str());
  }
  return 0;
}

int cmd_train(const Options& o, const std::string& manifest, const std::string& config, const std::string& out,
              const std::string& resume, int log_every) {
  auto cfg = load_config(config);
  if (o.seed) cfg.trainer.seed = cfg.transforms.seed = *o.seed;
  const auto dataset = load_dataset(manifest);
  const auto frames = select_frames(dataset, Split::train);
  const auto weights = weights_of(o);
  if (!cfg.attack_scales) {
    const Detector detector(weights);
    cfg.attack_scales = analyze_frames(detector, frames, cfg.pyramid, ScaleStrategy::neighbors, false);
  }
  fs::create_directories(out);
  save_config(cfg, fs::path(out) / "config.json");

  TrainingState state = resume.empty() ? init_training(dataset.patches, cfg.trainer) : load_checkpoint(resume);
  const auto ckpt = fs::path(out) / "checkpoint.pfck";
  run_training(state, frames, cfg.trainer, cfg.transforms, cfg.loss, *cfg.attack_scales, weights,
               [&](const TrainingState& s) {
                 const auto& b = s.history.back();
                 if (log_every > 0 && (s.epoch % log_every == 0 || s.epoch == 1))
                   std::fprintf(stderr, "epoch %d clf %.5f %.5f %.5f tv %.4f blk %.4f total %.6f best %.6f\n", s.epoch,
                                b.clf[0], b.clf[1], b.clf[2], b.tv, b.blk, b.total, s.best_loss);
                 if (cfg.trainer.checkpoint_interval > 0 && s.epoch % cfg.trainer.checkpoint_interval == 0)
                   save_checkpoint(s, ckpt);
               });
  save_checkpoint(state, ckpt);
  write_loss_log(state.history, fs::path(out) / "loss.csv");
  for (const auto& p : state.best) export_patch(p, fs::path(out) / (p.name + ".png"));
  std::printf("trained %d epochs, best loss %.9g, output in %s\n", state.epoch, state.best_loss, out.c_str());
  return 0;
}

int cmd_eval(const Options& o, const std::string& manifest, const std::vector<std::string>& patch_args,
             const std::string& factor_list, const std::string& out, const std::string& label, bool baseline,
             const std::string& split, const std::string& config) {
  const auto factors = parse_factors(factor_list);
  const auto cfg = config_or_default(config);
  const auto dataset = load_dataset(manifest);
  std::optional<Split> which;
  if (split == "train") which = Split::train;
  else if (split == "eval") which = Split::eval;
  else if (split != "all") throw UsageError("--split must be train, eval or all");
  const auto frames = select_frames(dataset, which);
  const Detector detector(weights_of(o));

  std::vector<EvalReport> reports;
  if (baseline || patch_args.empty())
    reports.push_back(evaluate_misdetection(detector, frames, nullptr, cfg.pyramid, factors, "no patch"));
  if (!patch_args.empty()) {
    const auto patches = read_patch_args(patch_args, dataset);
    reports.push_back(evaluate_misdetection(detector, frames, &patches, cfg.pyramid, factors, label));
  }
  emit_report(reports, out);
  for (const auto& r : reports)
    for (const auto& rec : r.records)
      std::printf("%-12s factor %.4g: %d/%d misdetected (%.4f)\n", r.label.c_str(), rec.factor, rec.misdetections,
                  rec.frames, rec.probability);
  std::printf("wrote %s and %s\n", (fs::path(out) / "report.csv").c_str(), (fs::path(out) / "report.svg").c_str());
  return 0;
}

int cmd_export(const std::string& checkpoint, const std::string& out, std::optional<double> ppcm) {
  const auto state = load_checkpoint(checkpoint);
  if (state.best.size() == 1) {
    export_patch(state.best[0], out, ppcm);
    std::printf("wrote %s\n", out.c_str());
    return 0;
  }
  const fs::path base(out);
  for (const auto& p : state.best) {
    const auto path = base.parent_path() / (base.stem().string() + "_" + p.name + base.extension().string());
    export_patch(p, path, ppcm);
    std::printf("wrote %s\n", path.c_str());
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Adversarial patch attack on the MTCNN face detector"};
  app.require_subcommand(1);
  app.fallthrough();
  Options opt;
  std::uint64_t seed = 0;
  app.add_option("--weights", opt.weights, "MTCNN weight directory");
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every random draw");

  std::string image, manifest, config, out, strategy = "neighbors", resume, factors = "0.709", label = "patched",
                                               split = "train";
  std::vector<std::string> patch_args;
  int log_every = 100;
  bool baseline = false;
  std::optional<double> ppcm;

  auto* detect = app.add_subcommand("detect", "Run the detector on one image");
  detect->add_option("image", image, "Image file")->required();
  detect->add_option("--config", config, "Training config (its pyramid block is used)");

  auto* analyze = app.add_subcommand("analyze", "Trace per-scale contributions and pick attack scales");
  analyze->add_option("manifest", manifest, "Dataset manifest")->required();
  analyze->add_option("--strategy", strategy, "neighbors or size_augmentation")
      ->check(CLI::IsMember({"neighbors", "size_augmentation"}));
  analyze->add_option("--config", config, "Config file to create or update with the selected scales");

  auto* train = app.add_subcommand("train", "Optimize patches");
  train->add_option("manifest", manifest, "Dataset manifest")->required();
  train->add_option("--config", config, "Training config")->required();
  train->add_option("--out", out, "Output directory")->required();
  train->add_option("--resume", resume, "Checkpoint to continue from");
  train->add_option("--log-every", log_every, "Progress line interval in epochs (0 = quiet)");

  auto* eval = app.add_subcommand("eval", "Misdetection probability per scale step factor");
  eval->add_option("manifest", manifest, "Dataset manifest")->required();
  eval->add_option("--patch", patch_args, "Checkpoint file, or name=image.png per patch");
  eval->add_option("--factors", factors, "Comma-separated scale step factors in (0, 1)");
  eval->add_option("--out", out, "Report directory")->default_val("report");
  eval->add_option("--label", label, "Series label of the patched setup");
  eval->add_flag("--baseline", baseline, "Also evaluate the frames without patches");
  eval->add_option("--split", split, "train, eval or all");
  eval->add_option("--config", config, "Training config (its pyramid block is used)");

  auto* exp = app.add_subcommand("export", "Write the best patches of a checkpoint as grayscale PNG");
  exp->add_option("checkpoint", image, "Checkpoint file")->required();
  exp->add_option("--out", out, "Output PNG")->required();
  exp->add_option("--pixels-per-cm", ppcm, "Record the print size in a sidecar file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    if (argc < 2) std::cerr << app.help();
    return 2;
  }
  if (*seed_opt) opt.seed = seed;

  try {
    if (*detect) return cmd_detect(opt, image, config);
    if (*analyze) return cmd_analyze(opt, manifest, strategy, config);
    if (*train) return cmd_train(opt, manifest, config, out, resume, log_every);
    if (*eval) return cmd_eval(opt, manifest, patch_args, factors, out, label, baseline, split, config);
    if (*exp) return cmd_export(image, out, ppcm);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 2;
}
