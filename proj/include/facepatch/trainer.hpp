#pragma once

#include "facepatch/analyzer.hpp"
#include "facepatch/eot.hpp"
#include "facepatch/geometry.hpp"
#include "facepatch/loss.hpp"
#include "facepatch/weights.hpp"

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

namespace facepatch {

enum class StepRule { gd, ifgsm, mifgsm };
enum class PatchInit { gray, random };

std::string to_string(StepRule r);
StepRule parse_step_rule(const std::string& s);
std::string to_string(PatchInit i);
PatchInit parse_patch_init(const std::string& s);

struct TrainerConfig {
  int epochs = 2000;
  int batch_size = 0;  // 0 = every sample each epoch
  StepRule rule = StepRule::gd;
  double step_size = 0.01;
  std::optional<double> epsilon;  // ifgsm clip radius around the initial patch
  double momentum_decay = 0.9;
  std::uint64_t seed = 0;
  int checkpoint_interval = 0;  // epochs between checkpoints, 0 = none
  PatchInit init = PatchInit::gray;

  void validate() const;
};

struct TrainingState {
  PatchSet<float> patches;
  PatchSet<float> reference;  // initial patches, centre of the ifgsm clip
  std::vector<Plane<float>> momentum;
  int epoch = 0;  // completed epochs
  Rng rng;
  std::vector<LossBreakdown> history;
  PatchSet<float> best;
  double best_loss = 0.0;  // meaningful once history is non-empty
};

/// p <- clamp(p - step * g, 0, 1). Throws on a non-finite gradient.
void step_gd(PatchSet<float>& patches, const std::vector<Plane<float>>& gradient, double step_size);

/// p <- clamp(clip(p - step * sign(g), reference +- epsilon), 0, 1), sign(0) = 0.
/// No clip when epsilon is empty.
void step_ifgsm(PatchSet<float>& patches, const std::vector<Plane<float>>& gradient, double step_size,
                std::optional<double> epsilon, const PatchSet<float>& reference);

/// m <- mu * m + g / |g|_1 per patch (normalization skipped when |g|_1 = 0),
/// then p <- clamp(p - step * sign(m), 0, 1).
void step_mifgsm(PatchSet<float>& patches, std::vector<Plane<float>>& momentum,
                 const std::vector<Plane<float>>& gradient, double step_size, double mu);

/// Patches at their initial values and a fresh state seeded from config.seed.
TrainingState init_training(const PatchSet<float>& shapes, const TrainerConfig& config);

struct TrainingResult {
  PatchSet<float> patches;  // best-loss state
  std::vector<LossBreakdown> history;
};

/// Called after every epoch with the updated state.
using EpochCallback = std::function<void(const TrainingState&)>;

/// Runs epochs until state.epoch == config.epochs. Each epoch samples a batch
/// and one transform per batch element, evaluates the loss at the current
/// patches, records it, tracks the best state, and takes one step.
void run_training(TrainingState& state, const std::vector<TrainingSample>& samples, const TrainerConfig& config,
                  const TransformSpec& transforms, const LossWeights& loss, const AttackScaleSet& scales,
                  const WeightBundle& weights, const EpochCallback& on_epoch = {});

TrainingResult train_patch(const std::vector<TrainingSample>& samples, const PatchSet<float>& patches_init,
                           const TrainerConfig& config, const TransformSpec& transforms, const LossWeights& loss,
                           const AttackScaleSet& scales, const WeightBundle& weights);

struct CheckpointError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Binary "PFCK" container holding every field of the state bit-exactly.
void save_checkpoint(const TrainingState& state, const std::filesystem::path& path);
TrainingState load_checkpoint(const std::filesystem::path& path);

/// CSV with columns epoch, clf1, clf2, clf3, tv, blk, total.
void write_loss_log(const std::vector<LossBreakdown>& history, const std::filesystem::path& path);

}  // namespace facepatch
