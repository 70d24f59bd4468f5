#pragma once

#include "facepatch/geometry.hpp"
#include "facepatch/types.hpp"

#include <cstdint>
#include <random>
#include <vector>

namespace facepatch {

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

/// Nuisance distribution for Expectation over Transformation. Each range is
/// sampled uniformly; a degenerate range (lo == hi) disables that jitter.
struct TransformSpec {
  Range brightness{-0.15, 0.15};  // additive, fraction of full scale
  Range contrast{0.85, 1.15};     // multiplicative gain about mid-gray
  Range scale{0.9, 1.1};          // resize of the composited image
  Range noise_sigma{0.0, 0.02};   // additive gaussian noise
  std::uint64_t seed = 0;

  static TransformSpec identity();
  void validate() const;
};

/// One concrete draw from a TransformSpec. The noise field is generated from
/// noise_seed so parameters can be drawn up front and applied in any order.
struct TransformParams {
  double brightness = 0.0;
  double contrast = 1.0;
  double scale = 1.0;
  double noise_sigma = 0.0;
  std::uint64_t noise_seed = 0;

  bool is_identity() const;
};

using Rng = std::mt19937_64;

TransformParams sample_transform(const TransformSpec& spec, Rng& rng);

/// One training frame: the image, where its patches go, and the true face.
struct TrainingSample {
  Image<float> image;
  PlacementMap placement;
  BoundingBox face_region;
};

/// Photometric and scale transform applied after compositing:
///   y = clamp(resize(gain * x + (0.5 * (1 - gain) + brightness)) + noise, 0, 1)
/// with identity parameters leaving x bit-for-bit unchanged.
template <class T>
class Augmentation {
 public:
  Augmentation(int height, int width, const TransformParams& params);

  Image<T> forward(const Image<T>& composited);
  Image<T> backward(const Image<T>& grad_out) const;

  /// Box mapped into the augmented image's coordinates.
  BoundingBox map_box(const BoundingBox& box) const;

 private:
  TransformParams params_;
  bool resized_ = false;
  SparseOp<T> rows_, cols_;
  Image<T> pre_clamp_;
};

/// Augmented images plus the face region in each augmented image.
struct AugmentedBatch {
  std::vector<Image<float>> images;
  std::vector<BoundingBox> face_regions;
  std::vector<TransformParams> params;
};

/// Composites `patches` onto each sample and applies one freshly sampled
/// transform per sample, clamping to [0, 1].
AugmentedBatch augment_batch(const std::vector<TrainingSample>& samples, const PatchSet<float>& patches,
                             const TransformSpec& spec, Rng& rng);

}  // namespace facepatch
