#pragma once

#include "facepatch/analyzer.hpp"
#include "facepatch/eot.hpp"
#include "facepatch/loss.hpp"
#include "facepatch/trainer.hpp"

#include <filesystem>
#include <optional>
#include <string>

namespace facepatch {

/// Everything a training run needs, stored as one JSON document. Missing
/// blocks and fields keep their defaults; unknown fields are rejected.
struct TrainingConfig {
  PyramidConfig pyramid;
  TransformSpec transforms;
  LossWeights loss;
  TrainerConfig trainer;
  std::optional<AttackScaleSet> attack_scales;  // filled in by `analyze`

  void validate() const;
};

TrainingConfig parse_config(const std::string& json_text);
std::string format_config(const TrainingConfig& config);

TrainingConfig load_config(const std::filesystem::path& path);
void save_config(const TrainingConfig& config, const std::filesystem::path& path);

}  // namespace facepatch
