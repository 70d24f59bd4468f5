#pragma once

#include "facepatch/detector.hpp"

#include <array>
#include <string>
#include <vector>

namespace facepatch {

/// How one pyramid scale feeds the refinement stage for a given face.
struct ScaleContribution {
  double scale = 0.0;
  int proposals_after_pnet = 0;        // cells over the P-Net threshold
  int proposals_overlapping_face = 0;  // intra-scale NMS survivors with IoU >= 0.5 to the face
  int survivors_to_rnet = 0;           // of this scale's boxes, those left after cross-scale NMS
};

enum class ScaleStrategy { neighbors, size_augmentation };

std::string to_string(ScaleStrategy s);
ScaleStrategy parse_scale_strategy(const std::string& s);

/// Three P-Net scales the attack optimizes against, strictly decreasing.
struct AttackScaleSet {
  std::array<double, 3> scales{};
  ScaleStrategy strategy = ScaleStrategy::neighbors;

  void validate() const;
};

/// One record per pyramid scale; empty when the pyramid is empty.
std::vector<ScaleContribution> trace_scale_contributions(const Detector& detector, const Image<float>& image,
                                                         const BoundingBox& face_region, const PyramidConfig& config);

/// Sums per-index counts over several frames. Pyramid scales depend only on
/// the index, so records of different image sizes line up; the result is as
/// long as the longest input.
std::vector<ScaleContribution> merge_contributions(const std::vector<std::vector<ScaleContribution>>& per_frame);

/// Picks the scale with the most face-overlapping proposals (ties go to the
/// larger scale) and two companions: its pyramid neighbours, or the geometric
/// midpoints s / sqrt(factor) and s * sqrt(factor). `min_side` is the shorter
/// image side; every returned scale must keep it >= 12 pixels.
AttackScaleSet select_attack_scales(const std::vector<ScaleContribution>& contributions, ScaleStrategy strategy,
                                    const PyramidConfig& config, int min_side);

}  // namespace facepatch
