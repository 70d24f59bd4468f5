// Acceptance suite: one PASS/FAIL line per criterion, exit status 1 if any fails.

#include "facepatch/analyzer.hpp"
#include "facepatch/config.hpp"
#include "facepatch/detector.hpp"
#include "facepatch/geometry.hpp"
#include "facepatch/harness.hpp"
#include "facepatch/loss.hpp"
#include "facepatch/objective.hpp"
#include "facepatch/trainer.hpp"

#include "support.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <numbers>
#include <sstream>

using namespace facepatch;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

std::string quoted(const fs::path& p) {
  return "'" + p.string() + "'";
}

// 1 -------------------------------------------------------------------------

Outcome detector_parity() {
  PyramidConfig cfg;
  cfg.min_size = 21;
  cfg.factor = 0.709;
  cfg.thresholds = {0.6, 0.7, 0.7};
  double worst_iou = 1.0, worst_lm = 0.0;
  int images = 0;
  bool counts_match = true;
  const auto t0 = std::chrono::steady_clock::now();
  for (const auto& [name, faces] : test::reference().at("photos").items()) {
    ++images;
    const auto dets = test::detector().detect(read_image(test::kDataDir / "images" / (name + ".png")), cfg);
    counts_match = counts_match && dets.size() == faces.size();
    for (const auto& f : faces) {
      const auto b = f.at("box").get<std::vector<double>>();
      const BoundingBox ref{b[0], b[1], b[2], b[3]};
      double best = 0.0;
      const Detection* match = nullptr;
      for (const auto& d : dets)
        if (iou(d.box, ref) > best) best = iou(d.box, ref), match = &d;
      worst_iou = std::min(worst_iou, best);
      if (!match) {
        worst_lm = std::numeric_limits<double>::infinity();
        continue;
      }
      const auto lm = f.at("landmarks").get<std::vector<std::vector<double>>>();
      double err = 0.0;
      for (int k = 0; k < 5; ++k) err += std::hypot(match->landmarks[k].x - lm[k][0], match->landmarks[k].y - lm[k][1]);
      worst_lm = std::max(worst_lm, err / 5.0);
    }
  }
  const double secs = seconds_since(t0);
  return {images == 2 && counts_match && worst_iou >= 0.6 && worst_lm <= 5.0 && secs < 30.0,
          fmt("%d images, min IoU %.4f (>= 0.6), max landmark error %.3f px (<= 5), %.2f s (< 30)", images, worst_iou,
              worst_lm, secs)};
}

// 2 -------------------------------------------------------------------------

std::vector<size_t> brute_nms(const std::vector<BoundingBox>& boxes, double thr) {
  auto overlap = [](const BoundingBox& a, const BoundingBox& b) {
    const double ix = std::max(0.0, std::min(a.x2, b.x2) - std::max(a.x1, b.x1));
    const double iy = std::max(0.0, std::min(a.y2, b.y2) - std::max(a.y1, b.y1));
    const double inter = ix * iy;
    return inter / ((a.x2 - a.x1) * (a.y2 - a.y1) + (b.x2 - b.x1) * (b.y2 - b.y1) - inter);
  };
  std::vector<bool> gone(boxes.size(), false);
  std::vector<size_t> kept;
  for (;;) {
    size_t best = boxes.size();
    for (size_t i = 0; i < boxes.size(); ++i)
      if (!gone[i] && (best == boxes.size() || boxes[i].score > boxes[best].score)) best = i;
    if (best == boxes.size()) return kept;
    kept.push_back(best);
    gone[best] = true;
    for (size_t i = 0; i < boxes.size(); ++i)
      if (!gone[i] && overlap(boxes[best], boxes[i]) > thr) gone[i] = true;
  }
}

Outcome nms_equivalence() {
  std::mt19937_64 rng(2024);
  std::uniform_int_distribution<int> count(0, 50);
  std::uniform_real_distribution<double> pos(0.0, 100.0), size(2.0, 40.0), score(0.0, 1.0);
  int matched = 0;
  for (int t = 0; t < 500; ++t) {
    std::vector<BoundingBox> boxes(static_cast<size_t>(count(rng)));
    for (auto& b : boxes) {
      b.x1 = pos(rng);
      b.y1 = pos(rng);
      b.x2 = b.x1 + size(rng);
      b.y2 = b.y1 + size(rng);
      b.score = std::round(score(rng) * 20.0) / 20.0;
    }
    matched += nms_indices(boxes, 0.5) == brute_nms(boxes, 0.5);
  }
  return {matched == 500, fmt("%d/500 survivor sets identical", matched)};
}

// 3 -------------------------------------------------------------------------

Outcome gradient_check() {
  // Fixed input. P-Net is piecewise smooth, so a 1e-4 central difference is
  // only meaningful where no PReLU or pooling switch lies within the step.
  std::mt19937_64 rng(3);
  std::vector<TrainingSample> samples(1);
  samples[0].image = test::random_image<float>(64, 64, rng);
  const double j = std::uniform_real_distribution<double>(0.0, 1.0)(rng) * 3.0;
  samples[0].placement.entries.push_back(
      {"p", {0, 0, 6, 6}, Quad{{Point{20.4 + j, 22.1}, Point{41.3, 20.6 + j}, Point{43.2, 40.7}, Point{19.1, 42.8 - j}}}});
  samples[0].face_region = {12, 10, 52, 56};
  const PatchSet<double> patches{{"p", test::random_plane<double>(6, 6, rng, 0.05, 0.95)}};
  const AttackScaleSet scales{{0.5, 0.5 * 0.709, 0.5 * 0.709 * 0.709}, ScaleStrategy::neighbors};
  LossWeights w;
  w.alpha = 1e-3;
  w.beta = 1e-2;
  w.clf_norm = ClfNorm::l2;
  const AttackObjective<double> obj(test::weights(), samples, patches, scales, w);
  const auto value = obj.evaluate(patches, true);
  const double h = 1e-4;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < 36; ++i) {
    auto plus = patches, minus = patches;
    plus[0].pixels.data()[i] += h;
    minus[0].pixels.data()[i] -= h;
    const double fd = (obj.evaluate(plus, false).breakdown.total - obj.evaluate(minus, false).breakdown.total) / (2 * h);
    const double an = value.gradient[0].data()[i];
    worst = std::max(worst, std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-12}));
  }
  const double clf = value.breakdown.clf[0] + value.breakdown.clf[1] + value.breakdown.clf[2];
  return {worst <= 1e-3 && clf > 0.0,
          fmt("36 pixels, 64x64 image, step 1e-4: max relative error %.3g (<= 1e-3), clf term %.4g", worst, clf)};
}

// 4 -------------------------------------------------------------------------

Quad random_quad(std::mt19937_64& rng, double cx, double cy, double r) {
  std::uniform_real_distribution<double> ang(0.15, 1.4), rad(0.5 * r, r);
  const double base[4] = {std::numbers::pi, 1.5 * std::numbers::pi, 0.0, 0.5 * std::numbers::pi};
  for (;;) {
    Quad q;
    for (int k = 0; k < 4; ++k) {
      const double a = base[k] + ang(rng), d = rad(rng);
      q.corners[k] = {cx + d * std::cos(a), cy + d * std::sin(a)};
    }
    bool convex = true;
    for (int k = 0; k < 4; ++k) {
      const auto& o = q.corners[k];
      const auto& a = q.corners[(k + 1) % 4];
      const auto& b = q.corners[(k + 2) % 4];
      convex = convex && (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x) > 1.0;
    }
    if (convex) return q;
  }
}

Outcome homography_exactness() {
  std::mt19937_64 rng(4);
  double worst = 0.0;
  for (int t = 0; t < 1000; ++t) {
    const auto src = random_quad(rng, 16, 12, 12);
    const auto dst = random_quad(rng, 320, 240, 200);
    const auto h = compute_homography(src, dst);
    for (int k = 0; k < 4; ++k) {
      const auto p = h.apply(src.corners[k]);
      worst = std::max(worst, std::hypot(p.x - dst.corners[k].x, p.y - dst.corners[k].y));
    }
  }
  return {worst < 1e-6, fmt("1000 quad pairs, max corner error %.3g px (< 1e-6)", worst)};
}

// 5 -------------------------------------------------------------------------

Outcome pyramid_arithmetic() {
  std::mt19937_64 rng(5);
  std::uniform_int_distribution<int> dim(21, 2000);
  PyramidConfig cfg;
  cfg.min_size = 21;
  cfg.factor = 0.709;
  int ok = 0;
  double worst_ratio = 0.0;
  for (int t = 0; t < 20; ++t) {
    const int h = dim(rng), w = dim(rng);
    const auto scales = build_pyramid(h, w, cfg);
    const double side = std::min(h, w);
    const int expect = static_cast<int>(std::floor(std::log(side / 21.0) / std::log(1.0 / 0.709) + 1e-12)) + 1;
    bool good = static_cast<int>(scales.size()) == expect;
    for (size_t k = 1; k < scales.size(); ++k) {
      const double dev = std::abs(scales[k] / scales[k - 1] - 0.709);
      worst_ratio = std::max(worst_ratio, dev);
      good = good && dev <= 1e-12;
    }
    ok += good;
  }
  return {ok == 20, fmt("%d/20 sizes match the closed form, max ratio deviation %.2g (<= 1e-12)", ok, worst_ratio)};
}

// 6 -------------------------------------------------------------------------

Outcome loss_units() {
  const double tv = tv_loss<double>(Plane<double>::Constant(16, 16, 0.42));
  const float blk = black_penalty<float>(Plane<float>::Zero(3, 3));
  LossWeights w;
  const std::array<double, 3> clf{0.31, 0.52, 0.07};
  const auto t = total_loss(clf, 12.5, 7.25, w);
  const double expect = 0.31 + 0.52 + 0.07 + 1e-3 * 12.5 + 1e-2 * 7.25;
  const double rel = std::abs(t.total - expect) / expect;
  return {tv <= 1e-3 && blk == 9.0f && rel <= 1e-6,
          fmt("tv(constant) %.3g (<= 1e-3), black(3x3 zeros) %g (= 9), total relative error %.2g (<= 1e-6)", tv,
              static_cast<double>(blk), rel)};
}

// 7 and 8 -------------------------------------------------------------------

struct AttackRun {
  std::vector<TrainingSample> frames;
  PatchSet<float> gray;
  PatchSet<float> trained;
  PyramidConfig pyramid;
  double seconds = 0.0;
  int epochs = 0;
};

AttackRun train_shipped() {
  const auto dataset = load_dataset(test::kDataDir / "frames" / "hopper_mask.json");
  const auto config = load_config(test::kDataDir / "frames" / "hopper_mask_config.json");
  AttackRun run;
  run.frames = select_frames(dataset, Split::train);
  run.gray = dataset.patches;
  run.pyramid = config.pyramid;
  run.epochs = config.trainer.epochs;
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<std::vector<ScaleContribution>> per_frame;
  int min_side = 1 << 30;
  for (const auto& f : run.frames) {
    per_frame.push_back(trace_scale_contributions(test::detector(), f.image, f.face_region, config.pyramid));
    min_side = std::min({min_side, f.image.height(), f.image.width()});
  }
  const auto scales = config.attack_scales.value_or(
      select_attack_scales(merge_contributions(per_frame), ScaleStrategy::neighbors, config.pyramid, min_side));
  run.trained =
      train_patch(run.frames, dataset.patches, config.trainer, config.transforms, config.loss, scales, test::weights())
          .patches;
  run.seconds = seconds_since(t0);
  return run;
}

Outcome attack_success(const AttackRun& run) {
  const auto clean = evaluate_misdetection(test::detector(), run.frames, nullptr, run.pyramid, {0.709}, "no patch");
  const auto patched = evaluate_misdetection(test::detector(), run.frames, &run.trained, run.pyramid, {0.709}, "patch");
  const auto& c = clean.records[0];
  const auto& p = patched.records[0];
  return {run.frames.size() == 3 && run.epochs <= 2000 && p.probability >= 0.9 && c.probability == 0.0 &&
              run.seconds < 7200.0,
          fmt("%d epochs on %zu frames in %.0f s; patched %d/%d misdetected (>= 90%%), unpatched %d/%d (= 0%%)",
              run.epochs, run.frames.size(), run.seconds, p.misdetections, p.frames, c.misdetections, c.frames)};
}

Outcome eot_robustness(const AttackRun& run) {
  TransformSpec held_out;
  held_out.brightness = {-0.15, 0.15};
  held_out.scale = {0.9, 1.1};
  held_out.contrast = {1.0, 1.0};
  held_out.noise_sigma = {0.0, 0.0};
  held_out.seed = 12345;
  const auto trained = evaluate_robustness(test::detector(), run.frames, &run.trained, held_out, 100, run.pyramid);
  const auto gray = evaluate_robustness(test::detector(), run.frames, &run.gray, held_out, 100, run.pyramid);
  return {trained.rate >= 0.7 && gray.rate < 0.1,
          fmt("trained patch %d/100 misdetected (>= 70%%), gray patch %d/100 (< 10%%)", trained.misdetections,
              gray.misdetections)};
}

// 9 -------------------------------------------------------------------------

Outcome determinism(const fs::path& work) {
  const auto manifest = test::kDataDir / "frames" / "hopper_mask.json";
  const auto config = test::kDataDir / "frames" / "hopper_mask_config.json";
  for (const char* run : {"a", "b"}) {
    const auto r = test::run_cli("train " + quoted(manifest) + " --config " + quoted(config) + " --out " +
                                 quoted(work / run) + " --seed 7 --log-every 0");
    if (r.code != 0) return {false, "train run " + std::string(run) + " failed: " + r.output};
  }
  const auto la = test::slurp(work / "a" / "loss.csv"), lb = test::slurp(work / "b" / "loss.csv");
  const auto a = load_checkpoint(work / "a" / "checkpoint.pfck"), b = load_checkpoint(work / "b" / "checkpoint.pfck");
  bool history = a.history.size() == b.history.size() && !a.history.empty();
  for (size_t i = 0; history && i < a.history.size(); ++i)
    history = a.history[i].total == b.history[i].total && a.history[i].clf == b.history[i].clf &&
              a.history[i].tv == b.history[i].tv && a.history[i].blk == b.history[i].blk;
  bool patches = a.best.size() == b.best.size() && a.patches.size() == b.patches.size();
  for (size_t i = 0; patches && i < a.best.size(); ++i)
    patches = a.best[i].pixels == b.best[i].pixels && a.patches[i].pixels == b.patches[i].pixels;
  const bool files = la == lb && !la.empty() &&
                     test::slurp(work / "a" / "checkpoint.pfck") == test::slurp(work / "b" / "checkpoint.pfck");
  return {history && patches && files, fmt("%zu epochs; histories %s, final patches %s, output files %s",
                                           a.history.size(), history ? "identical" : "DIFFER",
                                           patches ? "identical" : "DIFFER", files ? "identical" : "DIFFER")};
}

// 10 ------------------------------------------------------------------------

Outcome factor_sweep(const fs::path& work) {
  const auto manifest = test::kDataDir / "frames" / "hopper_mask.json";
  const auto ckpt = work / "a" / "checkpoint.pfck";
  if (!fs::exists(ckpt)) return {false, "no trained checkpoint available"};
  const auto r = test::run_cli("eval " + quoted(manifest) + " --patch " + quoted(ckpt) +
                               " --factors 0.6,0.709,0.8 --out " + quoted(work / "report"));
  if (r.code != 0) return {false, "eval failed: " + r.output};
  std::ifstream csv(work / "report" / "report.csv");
  int rows = -1;
  for (std::string line; std::getline(csv, line);) rows += !line.empty();
  const auto reports = read_report_csv(work / "report" / "report.csv");
  bool exact = !reports.empty();
  std::string probs;
  for (const auto& rep : reports)
    for (const auto& rec : rep.records) {
      exact = exact && rec.frames > 0 && rec.probability == static_cast<double>(rec.misdetections) / rec.frames;
      probs += fmt(" %g:%d/%d", rec.factor, rec.misdetections, rec.frames);
    }
  const bool chart = fs::exists(work / "report" / "report.svg") && fs::file_size(work / "report" / "report.svg") > 0;
  return {rows == 3 && exact && chart,
          fmt("%d CSV rows (= 3), chart %s, probabilities exact: %s;%s", rows, chart ? "written" : "MISSING",
              exact ? "yes" : "no", probs.c_str())};
}

}  // namespace

int main() {
  const auto work = test::scratch_dir("acceptance");
  std::vector<std::pair<std::string, std::function<Outcome()>>> criteria;
  std::optional<AttackRun> run;
  auto attack = [&]() -> const AttackRun& {
    if (!run) run = train_shipped();
    return *run;
  };
  criteria.emplace_back("detector parity", detector_parity);
  criteria.emplace_back("NMS brute-force equivalence", nms_equivalence);
  criteria.emplace_back("gradient correctness", gradient_check);
  criteria.emplace_back("homography exactness", homography_exactness);
  criteria.emplace_back("pyramid arithmetic", pyramid_arithmetic);
  criteria.emplace_back("loss unit values", loss_units);
  criteria.emplace_back("desk-scale digital attack", [&] { return attack_success(attack()); });
  criteria.emplace_back("EoT robustness", [&] { return eot_robustness(attack()); });
  criteria.emplace_back("determinism", [&] { return determinism(work); });
  criteria.emplace_back("factor-sweep report", [&] { return factor_sweep(work); });

  int failed = 0;
  for (size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failed += !o.pass;
    std::printf("criterion %2zu %-28s %s  %s\n", i + 1, criteria[i].first.c_str(), o.pass ? "PASS" : "FAIL",
                o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
