#include "facepatch/analyzer.hpp"

#include <algorithm>
#include <cmath>

namespace facepatch {

std::string to_string(ScaleStrategy s) {
  return s == ScaleStrategy::neighbors ? "neighbors" : "size_augmentation";
}

ScaleStrategy parse_scale_strategy(const std::string& s) {
  if (s == "neighbors") return ScaleStrategy::neighbors;
  if (s == "size_augmentation") return ScaleStrategy::size_augmentation;
  throw std::invalid_argument("unknown scale strategy '" + s + "' (expected neighbors or size_augmentation)");
}

void AttackScaleSet::validate() const {
  if (!(scales[0] > scales[1] && scales[1] > scales[2] && scales[2] > 0.0))
    throw std::invalid_argument("attack scales must be positive and strictly decreasing");
}

std::vector<ScaleContribution> trace_scale_contributions(const Detector& detector, const Image<float>& image,
                                                         const BoundingBox& face_region, const PyramidConfig& config) {
  const auto scales = build_pyramid(image.height(), image.width(), config);
  std::vector<ScaleContribution> out;
  std::vector<BoundingBox> pooled;
  std::vector<size_t> owner;
  for (size_t k = 0; k < scales.size(); ++k) {
    const auto maps = detector.score_scale(image, scales[k]);
    const auto raw = generate_proposals(maps.face_prob, maps.regression, scales[k], config.thresholds[0]);
    const auto kept = nms(raw, config.nms_intra_scale);
    ScaleContribution c;
    c.scale = scales[k];
    c.proposals_after_pnet = static_cast<int>(raw.size());
    c.proposals_overlapping_face = static_cast<int>(std::count_if(kept.begin(), kept.end(), [&](const BoundingBox& b) {
      return iou(apply_regression(b), face_region) >= 0.5;
    }));
    out.push_back(c);
    for (const auto& b : kept) {
      pooled.push_back(b);
      owner.push_back(k);
    }
  }
  for (size_t i : nms_indices(pooled, config.nms_cross_stage)) ++out[owner[i]].survivors_to_rnet;
  return out;
}

std::vector<ScaleContribution> merge_contributions(const std::vector<std::vector<ScaleContribution>>& per_frame) {
  std::vector<ScaleContribution> out;
  for (const auto& frame : per_frame)
    for (size_t k = 0; k < frame.size(); ++k) {
      if (out.size() <= k) {
        out.push_back(frame[k]);
        continue;
      }
      out[k].proposals_after_pnet += frame[k].proposals_after_pnet;
      out[k].proposals_overlapping_face += frame[k].proposals_overlapping_face;
      out[k].survivors_to_rnet += frame[k].survivors_to_rnet;
    }
  return out;
}

AttackScaleSet select_attack_scales(const std::vector<ScaleContribution>& contributions, ScaleStrategy strategy,
                                    const PyramidConfig& config, int min_side) {
  if (contributions.empty()) throw std::invalid_argument("select_attack_scales: no scale contributions");
  size_t best = 0;
  for (size_t k = 1; k < contributions.size(); ++k)
    if (contributions[k].proposals_overlapping_face > contributions[best].proposals_overlapping_face) best = k;

  AttackScaleSet set;
  set.strategy = strategy;
  if (strategy == ScaleStrategy::neighbors) {
    const size_t n = contributions.size();
    if (n < 3) throw std::invalid_argument("select_attack_scales: neighbors strategy needs at least 3 pyramid scales");
    const size_t first = best == 0 ? 0 : std::min(best - 1, n - 3);
    for (size_t i = 0; i < 3; ++i) set.scales[i] = contributions[first + i].scale;
  } else {
    const double s = contributions[best].scale;
    const double root = std::sqrt(config.factor);
    set.scales = {s / root, s, s * root};
  }
  for (double s : set.scales)
    if (min_side * s < 12.0)
      throw std::invalid_argument("select_attack_scales: scale " + std::to_string(s) +
                                  " shrinks the image below the 12-pixel receptive field");
  set.validate();
  return set;
}

}  // namespace facepatch
