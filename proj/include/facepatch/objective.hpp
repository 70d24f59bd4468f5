#pragma once

#include "facepatch/analyzer.hpp"
#include "facepatch/eot.hpp"
#include "facepatch/geometry.hpp"
#include "facepatch/loss.hpp"
#include "facepatch/nets.hpp"

#include <vector>

namespace facepatch {

template <class T>
struct ObjectiveValue {
  LossBreakdown breakdown;
  std::vector<Plane<T>> gradient;  // per patch; empty unless requested
};

/// The attack loss as a differentiable function of the patch pixels.
///
/// For every sample: composite the patches, apply its transform, resize to
/// each attack scale, run P-Net and score the face-probability map. The
/// classification term of each scale is averaged over the samples; TV and
/// black penalty are summed over all patches.
template <class T>
class AttackObjective {
 public:
  AttackObjective(const WeightBundle& weights, const std::vector<TrainingSample>& samples,
                  const PatchSet<T>& patch_shapes, const AttackScaleSet& scales, const LossWeights& loss);

  size_t sample_count() const { return samples_.size(); }

  /// Loss over the samples listed in `batch`, each paired with its transform.
  ObjectiveValue<T> evaluate(const PatchSet<T>& patches, const std::vector<size_t>& batch,
                             const std::vector<TransformParams>& params, bool with_gradient) const;

  /// All samples under identity transforms.
  ObjectiveValue<T> evaluate(const PatchSet<T>& patches, bool with_gradient) const;

 private:
  struct Cached {
    Image<T> image;
    BoundingBox face;
    Compositor<T> compositor;
  };

  NetworkInput norm_;
  PNet<T> pnet_;
  AttackScaleSet scales_;
  LossWeights loss_;
  std::vector<Cached> samples_;
};

}  // namespace facepatch
