#include "facepatch/config.hpp"
#include "facepatch/harness.hpp"
#include "facepatch/objective.hpp"
#include "facepatch/resample.hpp"
#include "facepatch/trainer.hpp"

#include "support.hpp"

#include <doctest.h>

#include <fstream>
#include <sstream>

using namespace facepatch;

namespace {

PatchSet<float> one_pixel(float v) {
  return {{"p", Plane<float>::Constant(1, 1, v)}};
}

std::vector<Plane<float>> grad_of(float v) {
  return {Plane<float>::Constant(1, 1, v)};
}

std::vector<TrainingSample> tiny_samples(std::mt19937_64& rng) {
  std::vector<TrainingSample> s;
  for (int i = 0; i < 2; ++i) {
    PlacementMap m{{{"p", {0, 0, 8, 8}, Quad::rectangle(14 + i, 18, 34, 38 - i)}}};
    s.push_back({test::random_image<float>(48, 48, rng), m, BoundingBox{8, 8, 40, 40}});
  }
  return s;
}

const AttackScaleSet kTinyScales{{0.9, 0.7, 0.5}, ScaleStrategy::neighbors};

bool same_history(const std::vector<LossBreakdown>& a, const std::vector<LossBreakdown>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].clf != b[i].clf || a[i].tv != b[i].tv || a[i].blk != b[i].blk || a[i].total != b[i].total) return false;
  return true;
}

bool same_patches(const PatchSet<float>& a, const PatchSet<float>& b) {
  if (a.size() != b.size()) return false;
  for (size_t i = 0; i < a.size(); ++i)
    if (a[i].name != b[i].name || a[i].pixels != b[i].pixels) return false;
  return true;
}

}  // namespace

TEST_CASE("gradient descent step examples") {
  auto p = one_pixel(0.4f);
  step_gd(p, grad_of(0.0f), 0.1);
  CHECK(p[0].pixels(0, 0) == 0.4f);
  p = one_pixel(0.0f);
  step_gd(p, grad_of(-0.5f), 0.1);
  CHECK(p[0].pixels(0, 0) > 0.0f);
  p = one_pixel(0.95f);
  step_gd(p, grad_of(-1.0f), 0.1);
  CHECK(p[0].pixels(0, 0) == 1.0f);
  CHECK_THROWS(step_gd(p, grad_of(std::numeric_limits<float>::quiet_NaN()), 0.1));
  CHECK_THROWS(step_gd(p, {Plane<float>::Zero(2, 1)}, 0.1));
}

TEST_CASE("iterative sign step examples") {
  auto p = one_pixel(0.5f);
  const auto ref = p;
  step_ifgsm(p, grad_of(0.0f), 0.01, 0.5, ref);
  CHECK(p[0].pixels(0, 0) == 0.5f);
  step_ifgsm(p, grad_of(3.7f), 0.01, 0.5, ref);
  CHECK(p[0].pixels(0, 0) == 0.5f - 0.01f);
}

TEST_CASE("iterative sign steps stay inside the epsilon ball and the pixel range") {
  std::mt19937_64 rng(3);
  PatchSet<float> p{{"a", test::random_plane<float>(6, 5, rng)}, {"b", test::random_plane<float>(3, 4, rng)}};
  const auto ref = p;
  for (int t = 0; t < 200; ++t) {
    std::vector<Plane<float>> g{test::random_plane<float>(6, 5, rng, -1, 1), test::random_plane<float>(3, 4, rng, -1, 1)};
    step_ifgsm(p, g, 0.01, 0.5, ref);
    for (size_t k = 0; k < p.size(); ++k) {
      CHECK((p[k].pixels - ref[k].pixels).cwiseAbs().maxCoeff() <= 0.5f + 1e-6f);
      CHECK(p[k].pixels.minCoeff() >= 0.0f);
      CHECK(p[k].pixels.maxCoeff() <= 1.0f);
    }
  }
}

TEST_CASE("momentum with zero decay reduces to the unclipped sign step") {
  std::mt19937_64 rng(4);
  PatchSet<float> a{{"p", test::random_plane<float>(7, 7, rng)}};
  auto b = a;
  std::vector<Plane<float>> m{Plane<float>::Zero(7, 7)};
  for (int t = 0; t < 25; ++t) {
    std::vector<Plane<float>> g{test::random_plane<float>(7, 7, rng, -1, 1)};
    g[0](t % 7, 0) = 0.0f;
    step_mifgsm(a, m, g, 0.02, 0.0);
    step_ifgsm(b, g, 0.02, std::nullopt, {});
    CHECK(a[0].pixels == b[0].pixels);
  }
}

TEST_CASE("momentum follows the accumulated majority sign") {
  // Pattern +1, +1, -1 by hand: m = 1, 1.9, 0.71, 1.639, 2.4751, 1.2276, ...
  // The minority -1 never flips the momentum, so every step moves down.
  auto p = one_pixel(0.5f);
  std::vector<Plane<float>> m{Plane<float>::Zero(1, 1)};
  const double hand[6] = {1.0, 1.9, 0.71, 1.639, 2.4751, 1.2276};
  double expect_m = 0.0;
  for (int t = 0; t < 10; ++t) {
    const float g = t % 3 == 2 ? -1.0f : 1.0f;
    expect_m = 0.9 * expect_m + g;
    if (t < 6) CHECK(expect_m == doctest::Approx(hand[t]).epsilon(1e-4));
    step_mifgsm(p, m, grad_of(g), 0.01, 0.9);
    CHECK(m[0](0, 0) == doctest::Approx(expect_m).epsilon(1e-5));
    CHECK(p[0].pixels(0, 0) == doctest::Approx(0.5f - 0.01f * (t + 1)).epsilon(1e-5));
  }

  // A constant direction drives the momentum towards g / (1 - mu).
  std::vector<Plane<float>> c{Plane<float>::Zero(1, 1)};
  auto q = one_pixel(0.5f);
  for (int t = 0; t < 200; ++t) step_mifgsm(q, c, grad_of(-2.0f), 0.001, 0.9);
  CHECK(c[0](0, 0) == doctest::Approx(-10.0).epsilon(1e-4));

  // Zero gradient decays momentum only.
  std::vector<Plane<float>> z{Plane<float>::Constant(1, 1, 0.5f)};
  step_mifgsm(q, z, grad_of(0.0f), 0.01, 0.9);
  CHECK(z[0](0, 0) == doctest::Approx(0.45f));
}

TEST_CASE("trainer config validation") {
  TrainerConfig c;
  c.epochs = 0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.momentum_decay = 1.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.step_size = 0.0;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  c = {};
  c.epsilon = 0.001;
  CHECK_THROWS_AS(c.validate(), std::invalid_argument);
  CHECK_THROWS_AS(parse_step_rule("adam"), std::invalid_argument);
}

TEST_CASE("training is deterministic, keeps pixels in range and tracks the best loss") {
  std::mt19937_64 gen(11);
  const auto samples = tiny_samples(gen);
  TrainerConfig cfg;
  cfg.epochs = 30;
  cfg.seed = 5;
  const PatchSet<float> init{{"p", Plane<float>::Constant(8, 8, 0.5f)}};
  for (auto rule : {StepRule::gd, StepRule::ifgsm, StepRule::mifgsm}) {
    CAPTURE(to_string(rule));
    cfg.rule = rule;
    cfg.epsilon = rule == StepRule::ifgsm ? std::optional<double>(0.1) : std::nullopt;
    auto state = init_training(init, cfg);
    double best = std::numeric_limits<double>::infinity(), previous_best = best;
    run_training(state, samples, cfg, TransformSpec{}, LossWeights{}, kTinyScales, test::weights(),
                 [&](const TrainingState& s) {
                   CHECK(s.patches[0].pixels.minCoeff() >= 0.0f);
                   CHECK(s.patches[0].pixels.maxCoeff() <= 1.0f);
                   CHECK(s.momentum[0].allFinite());
                   best = std::min(best, s.history.back().total);
                   CHECK(s.best_loss == best);
                   CHECK(s.best_loss <= previous_best);
                   previous_best = s.best_loss;
                 });
    CHECK(state.epoch == 30);
    CHECK(state.history.size() == 30);

    const auto a = train_patch(samples, init, cfg, TransformSpec{}, LossWeights{}, kTinyScales, test::weights());
    const auto b = train_patch(samples, init, cfg, TransformSpec{}, LossWeights{}, kTinyScales, test::weights());
    CHECK(same_history(a.history, b.history));
    CHECK(same_patches(a.patches, b.patches));
    CHECK(same_history(a.history, state.history));
  }
}

TEST_CASE("plain descent with backtracking never increases the loss") {
  std::mt19937_64 gen(13);
  auto samples = tiny_samples(gen);
  samples.resize(1);
  LossWeights w;
  w.alpha = w.beta = 0.0;
  PatchSet<float> p{{"p", Plane<float>::Constant(8, 8, 0.5f)}};
  const AttackObjective<float> obj(test::weights(), samples, p, kTinyScales, w);
  auto current = obj.evaluate(p, true);
  const double start = current.breakdown.total;
  REQUIRE(start > 0.0);
  double step = 0.05;
  for (int t = 0; t < 15; ++t) {
    int halvings = 0;
    for (;; ++halvings) {
      REQUIRE(halvings < 30);
      auto trial = p;
      step_gd(trial, current.gradient, step);
      const auto next = obj.evaluate(trial, true);
      if (next.breakdown.total <= current.breakdown.total) {
        p = trial;
        current = next;
        break;
      }
      step *= 0.5;
    }
  }
  CHECK(current.breakdown.total < start);
}

TEST_CASE("checkpoints round-trip bit-exactly and reject bad files") {
  std::mt19937_64 gen(17);
  TrainerConfig cfg;
  cfg.rule = StepRule::mifgsm;
  cfg.epochs = 4;
  cfg.seed = 21;
  auto state = init_training({{"a", Plane<float>::Constant(5, 6, 0.5f)}, {"b", Plane<float>::Constant(3, 3, 0.5f)}}, cfg);
  state.patches[0].pixels = test::random_plane<float>(5, 6, gen);
  state.momentum[1] = test::random_plane<float>(3, 3, gen, -2, 2);
  state.epoch = 3;
  state.history.push_back({{0.1, 0.2, 0.3}, 1.5, 2.5, 0.6123456789012345});
  state.best_loss = 0.6123456789012345;
  state.rng.discard(1234);
  const auto dir = test::scratch_dir("checkpoint");
  save_checkpoint(state, dir / "s.pfck");
  auto loaded = load_checkpoint(dir / "s.pfck");
  CHECK(same_patches(loaded.patches, state.patches));
  CHECK(same_patches(loaded.reference, state.reference));
  CHECK(same_patches(loaded.best, state.best));
  CHECK(loaded.momentum[1] == state.momentum[1]);
  CHECK(loaded.epoch == 3);
  CHECK(loaded.rng == state.rng);
  CHECK(same_history(loaded.history, state.history));
  CHECK(loaded.best_loss == state.best_loss);

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.pfck"), CheckpointError);
  {
    std::ofstream out(dir / "bad.pfck", std::ios::binary);
    out << "PFCX garbage";
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "bad.pfck"), CheckpointError);
  {
    std::ifstream in(dir / "s.pfck", std::ios::binary);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto bytes = ss.str();
    std::ofstream out(dir / "short.pfck", std::ios::binary);
    out << bytes.substr(0, bytes.size() - 10);
  }
  CHECK_THROWS_AS(load_checkpoint(dir / "short.pfck"), CheckpointError);
}

TEST_CASE("resuming from a checkpoint reproduces the uninterrupted run") {
  std::mt19937_64 gen(19);
  const auto samples = tiny_samples(gen);
  TrainerConfig cfg;
  cfg.rule = StepRule::mifgsm;
  cfg.epochs = 12;
  cfg.batch_size = 1;
  cfg.seed = 8;
  const PatchSet<float> init{{"p", Plane<float>::Constant(8, 8, 0.5f)}};

  auto full = init_training(init, cfg);
  run_training(full, samples, cfg, TransformSpec{}, LossWeights{}, kTinyScales, test::weights());

  auto half_cfg = cfg;
  half_cfg.epochs = 5;
  auto part = init_training(init, half_cfg);
  run_training(part, samples, half_cfg, TransformSpec{}, LossWeights{}, kTinyScales, test::weights());
  const auto path = test::scratch_dir("resume") / "k.pfck";
  save_checkpoint(part, path);
  auto resumed = load_checkpoint(path);
  run_training(resumed, samples, cfg, TransformSpec{}, LossWeights{}, kTinyScales, test::weights());

  CHECK(same_history(resumed.history, full.history));
  CHECK(same_patches(resumed.patches, full.patches));
  CHECK(resumed.best_loss == full.best_loss);
}

TEST_CASE("loss log has one row per epoch") {
  const auto path = test::scratch_dir("losslog") / "loss.csv";
  write_loss_log({{{1, 2, 3}, 4, 5, 6}, {{0.5, 0.25, 0.125}, 1, 2, 3}}, path);
  std::ifstream in(path);
  std::string header, row1, row2, extra;
  std::getline(in, header);
  std::getline(in, row1);
  std::getline(in, row2);
  CHECK(header == "epoch,clf1,clf2,clf3,tv,blk,total");
  CHECK(row1 == "1,1,2,3,4,5,6");
  CHECK(row2 == "2,0.5,0.25,0.125,1,2,3");
  CHECK_FALSE(std::getline(in, extra));
}

TEST_CASE("desk-scale training pushes the masked P-Net score below the threshold") {
  const auto dataset = load_dataset(test::kDataDir / "frames" / "hopper_mask.json");
  const auto frames = select_frames(dataset, Split::train);
  REQUIRE(frames.size() == 3);
  auto config = load_config(test::kDataDir / "frames" / "hopper_mask_config.json");
  config.trainer.epochs = 300;

  std::vector<std::vector<ScaleContribution>> per_frame;
  int min_side = 1 << 30;
  for (const auto& f : frames) {
    per_frame.push_back(trace_scale_contributions(test::detector(), f.image, f.face_region, config.pyramid));
    min_side = std::min({min_side, f.image.height(), f.image.width()});
  }
  const auto scales =
      select_attack_scales(merge_contributions(per_frame), ScaleStrategy::neighbors, config.pyramid, min_side);

  const auto result = train_patch(frames, dataset.patches, config.trainer, config.transforms, config.loss, scales,
                                  test::weights());
  const PNet<float> pnet(test::weights());
  auto mean_score = [&](const PatchSet<float>& patches) {
    double sum = 0.0, cells = 0.0;
    for (const auto& f : frames) {
      const auto composited = apply_patches(f.image, patches, f.placement);
      for (double s : scales.scales) {
        const auto out = pnet.forward(to_network_input(resize(composited, s), test::weights().input));
        const auto mask = face_cell_mask<float>(static_cast<int>(out.face_prob.rows()),
                                                static_cast<int>(out.face_prob.cols()), s, f.face_region, true);
        sum += (out.face_prob.array() * mask.array()).sum();
        cells += mask.sum();
      }
    }
    return sum / cells;
  };
  const double before = mean_score(dataset.patches);
  const double after = mean_score(result.patches);
  MESSAGE("mean masked face score: gray " << before << ", trained " << after);
  CHECK(after < 0.6);
  CHECK(after < before);
}
