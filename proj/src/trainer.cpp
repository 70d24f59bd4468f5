#include "facepatch/trainer.hpp"

#include "facepatch/objective.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace facepatch {

std::string to_string(StepRule r) {
  switch (r) {
    case StepRule::gd: return "gd";
    case StepRule::ifgsm: return "ifgsm";
    case StepRule::mifgsm: return "mifgsm";
  }
  return "gd";
}

StepRule parse_step_rule(const std::string& s) {
  if (s == "gd") return StepRule::gd;
  if (s == "ifgsm") return StepRule::ifgsm;
  if (s == "mifgsm") return StepRule::mifgsm;
  throw std::invalid_argument("unknown step rule '" + s + "' (expected gd, ifgsm or mifgsm)");
}

std::string to_string(PatchInit i) {
  return i == PatchInit::gray ? "gray" : "random";
}

PatchInit parse_patch_init(const std::string& s) {
  if (s == "gray") return PatchInit::gray;
  if (s == "random") return PatchInit::random;
  throw std::invalid_argument("unknown patch init '" + s + "' (expected gray or random)");
}

void TrainerConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("trainer: epochs must be >= 1");
  if (batch_size < 0) throw std::invalid_argument("trainer: batch_size must be >= 0");
  if (!(std::isfinite(step_size) && step_size > 0.0)) throw std::invalid_argument("trainer: step_size must be > 0");
  if (!(momentum_decay >= 0.0 && momentum_decay < 1.0))
    throw std::invalid_argument("trainer: momentum_decay must lie in [0, 1)");
  if (epsilon && !(*epsilon >= step_size)) throw std::invalid_argument("trainer: epsilon must be >= step_size");
  if (checkpoint_interval < 0) throw std::invalid_argument("trainer: checkpoint_interval must be >= 0");
}

namespace {

void check_gradient(const PatchSet<float>& patches, const std::vector<Plane<float>>& gradient) {
  if (gradient.size() != patches.size()) throw std::invalid_argument("step: gradient count does not match patches");
  for (size_t i = 0; i < patches.size(); ++i) {
    if (gradient[i].rows() != patches[i].pixels.rows() || gradient[i].cols() != patches[i].pixels.cols())
      throw std::invalid_argument("step: gradient shape does not match patch '" + patches[i].name + "'");
    if (!gradient[i].allFinite())
      throw std::runtime_error("step: non-finite gradient for patch '" + patches[i].name + "'");
  }
}

Plane<float> sign(const Plane<float>& g) {
  return g.unaryExpr([](float v) { return static_cast<float>((v > 0.0f) - (v < 0.0f)); });
}

void clamp01(Plane<float>& p) {
  p = p.cwiseMax(0.0f).cwiseMin(1.0f);
}

}  // namespace

void step_gd(PatchSet<float>& patches, const std::vector<Plane<float>>& gradient, double step_size) {
  check_gradient(patches, gradient);
  for (size_t i = 0; i < patches.size(); ++i) {
    patches[i].pixels -= static_cast<float>(step_size) * gradient[i];
    clamp01(patches[i].pixels);
  }
}

void step_ifgsm(PatchSet<float>& patches, const std::vector<Plane<float>>& gradient, double step_size,
                std::optional<double> epsilon, const PatchSet<float>& reference) {
  check_gradient(patches, gradient);
  if (epsilon && reference.size() != patches.size())
    throw std::invalid_argument("step_ifgsm: reference does not match patches");
  for (size_t i = 0; i < patches.size(); ++i) {
    auto& p = patches[i].pixels;
    p -= static_cast<float>(step_size) * sign(gradient[i]);
    if (epsilon) {
      const float e = static_cast<float>(*epsilon);
      p = p.cwiseMax((reference[i].pixels.array() - e).matrix()).cwiseMin((reference[i].pixels.array() + e).matrix());
    }
    clamp01(p);
  }
}

void step_mifgsm(PatchSet<float>& patches, std::vector<Plane<float>>& momentum,
                 const std::vector<Plane<float>>& gradient, double step_size, double mu) {
  check_gradient(patches, gradient);
  if (momentum.size() != patches.size()) throw std::invalid_argument("step_mifgsm: momentum does not match patches");
  for (size_t i = 0; i < patches.size(); ++i) {
    const float l1 = gradient[i].cwiseAbs().sum();
    momentum[i] *= static_cast<float>(mu);
    if (l1 > 0.0f) momentum[i] += gradient[i] / l1;
    patches[i].pixels -= static_cast<float>(step_size) * sign(momentum[i]);
    clamp01(patches[i].pixels);
  }
}

TrainingState init_training(const PatchSet<float>& shapes, const TrainerConfig& config) {
  config.validate();
  if (shapes.empty()) throw std::invalid_argument("trainer: no patches to optimize");
  TrainingState state;
  state.rng.seed(config.seed);
  for (const auto& s : shapes) {
    Patch p{s.name, Plane<float>::Constant(s.height(), s.width(), 0.5f)};
    if (config.init == PatchInit::random) {
      std::uniform_real_distribution<float> uniform(0.0f, 1.0f);
      for (Eigen::Index k = 0; k < p.pixels.size(); ++k) p.pixels.data()[k] = uniform(state.rng);
    }
    validate_patch(p);
    state.patches.push_back(p);
    state.momentum.push_back(Plane<float>::Zero(s.height(), s.width()));
  }
  state.reference = state.patches;
  state.best = state.patches;
  return state;
}

void run_training(TrainingState& state, const std::vector<TrainingSample>& samples, const TrainerConfig& config,
                  const TransformSpec& transforms, const LossWeights& loss, const AttackScaleSet& scales,
                  const WeightBundle& weights, const EpochCallback& on_epoch) {
  config.validate();
  transforms.validate();
  const AttackObjective<float> objective(weights, samples, state.patches, scales, loss);
  const size_t n = samples.size();
  const size_t batch_size = config.batch_size == 0 ? n : std::min<size_t>(config.batch_size, n);
  std::vector<size_t> order(n);

  while (state.epoch < config.epochs) {
    std::iota(order.begin(), order.end(), size_t{0});
    if (batch_size < n) std::shuffle(order.begin(), order.end(), state.rng);
    const std::vector<size_t> batch(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(batch_size));
    std::vector<TransformParams> params;
    for (size_t i = 0; i < batch.size(); ++i) params.push_back(sample_transform(transforms, state.rng));

    const auto value = objective.evaluate(state.patches, batch, params, true);
    if (!std::isfinite(value.breakdown.total))
      throw std::runtime_error("training: non-finite loss at epoch " + std::to_string(state.epoch + 1));
    state.history.push_back(value.breakdown);
    if (state.history.size() == 1 || value.breakdown.total < state.best_loss) {
      state.best_loss = value.breakdown.total;
      state.best = state.patches;
    }

    switch (config.rule) {
      case StepRule::gd: step_gd(state.patches, value.gradient, config.step_size); break;
      case StepRule::ifgsm:
        step_ifgsm(state.patches, value.gradient, config.step_size, config.epsilon, state.reference);
        break;
      case StepRule::mifgsm:
        step_mifgsm(state.patches, state.momentum, value.gradient, config.step_size, config.momentum_decay);
        break;
    }
    ++state.epoch;
    if (on_epoch) on_epoch(state);
  }
}

TrainingResult train_patch(const std::vector<TrainingSample>& samples, const PatchSet<float>& patches_init,
                           const TrainerConfig& config, const TransformSpec& transforms, const LossWeights& loss,
                           const AttackScaleSet& scales, const WeightBundle& weights) {
  TrainingState state = init_training(patches_init, config);
  for (const auto& p : patches_init) validate_patch(p);
  state.patches = state.reference = state.best = patches_init;
  state.rng.seed(config.seed);
  run_training(state, samples, config, transforms, loss, scales, weights);
  return {state.best, state.history};
}

void write_loss_log(const std::vector<LossBreakdown>& history, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write loss log " + path.string());
  out << "epoch,clf1,clf2,clf3,tv,blk,total\n";
  char line[256];
  for (size_t e = 0; e < history.size(); ++e) {
    const auto& b = history[e];
    std::snprintf(line, sizeof line, "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", e + 1, b.clf[0], b.clf[1], b.clf[2], b.tv,
                  b.blk, b.total);
    out << line;
  }
  if (!out) throw std::runtime_error("failed writing loss log " + path.string());
}

}  // namespace facepatch
