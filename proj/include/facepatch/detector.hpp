#pragma once

#include "facepatch/nets.hpp"
#include "facepatch/types.hpp"
#include "facepatch/weights.hpp"

#include <span>
#include <vector>

namespace facepatch {

/// Scale factors of the image pyramid: 12 / min_size, then repeatedly times
/// `factor`, while the scaled shorter side stays >= 12. Empty when the image
/// cannot hold a min_size face.
std::vector<double> build_pyramid(int height, int width, const PyramidConfig& config);

/// One box per score cell >= threshold. Cell (i, j) at `scale` covers
/// [2j, 2j + 12) x [2i, 2i + 12) in the scaled image, i.e. that square divided
/// by `scale` in the source image. Regression offsets are recorded on the box,
/// not applied.
std::vector<BoundingBox> generate_proposals(const Plane<float>& score_map, const FeatureMap<float>& regression_map,
                                            double scale, double threshold);

enum class NmsMode { union_, min };

/// Greedy suppression, highest score first; equal scores keep input order.
/// A box is dropped when its overlap with an already kept box exceeds
/// `threshold`. Output is sorted by descending score.
std::vector<BoundingBox> nms(std::span<const BoundingBox> boxes, double threshold, NmsMode mode = NmsMode::union_);

/// Same as nms() but returns the input indices of the survivors.
std::vector<size_t> nms_indices(std::span<const BoundingBox> boxes, double threshold, NmsMode mode = NmsMode::union_);

/// Applies the box's regression offsets (scaled by its width and height).
BoundingBox apply_regression(const BoundingBox& box);

/// Square box with side max(width, height), same centre.
BoundingBox square(const BoundingBox& box);

/// Full MTCNN cascade. Immutable after construction; safe to share across threads.
class Detector {
 public:
  explicit Detector(const WeightBundle& weights);

  const PNet<float>& pnet() const { return pnet_; }
  const NetworkInput& input_normalization() const { return norm_; }

  /// P-Net on the image resized by `scale`.
  PNetOutput<float> score_scale(const Image<float>& image, double scale) const;

  /// Proposals of one pyramid scale after intra-scale NMS.
  std::vector<BoundingBox> scale_proposals(const Image<float>& image, double scale, const PyramidConfig& config) const;

  /// Stage 1: all scales, intra-scale NMS, cross-scale NMS, regression, squaring.
  std::vector<BoundingBox> propose(const Image<float>& image, const PyramidConfig& config) const;

  /// Stage 2 on 24x24 crops: rescore, threshold, NMS, regression, squaring.
  std::vector<BoundingBox> rnet_refine(const Image<float>& image, std::span<const BoundingBox> boxes, double threshold,
                                       double nms_threshold = 0.7) const;

  /// Stage 3 on 48x48 crops: rescore, threshold, landmarks, regression, min-mode NMS.
  std::vector<Detection> onet_refine(const Image<float>& image, std::span<const BoundingBox> boxes, double threshold,
                                     double nms_threshold = 0.7) const;

  std::vector<Detection> detect(const Image<float>& image, const PyramidConfig& config) const;

 private:
  NetworkInput norm_;
  PNet<float> pnet_;
  RNet<float> rnet_;
  ONet<float> onet_;
};

}  // namespace facepatch
