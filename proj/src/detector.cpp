#include "facepatch/detector.hpp"

#include "facepatch/resample.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace facepatch {

double iou(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  const double inter = iw * ih;
  return inter / (a.area() + b.area() - inter);
}

double overlap_min(const BoundingBox& a, const BoundingBox& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih / std::min(a.area(), b.area());
}

void PyramidConfig::validate() const {
  if (min_size < 12) throw std::invalid_argument("pyramid: min_size must be >= 12 (P-Net receptive field)");
  if (!(factor > 0.0 && factor < 1.0)) throw std::invalid_argument("pyramid: factor must lie in (0, 1)");
  for (double t : thresholds)
    if (!(t > 0.0 && t < 1.0)) throw std::invalid_argument("pyramid: thresholds must lie in (0, 1)");
  if (!(nms_intra_scale > 0.0 && nms_intra_scale <= 1.0) || !(nms_cross_stage > 0.0 && nms_cross_stage <= 1.0))
    throw std::invalid_argument("pyramid: NMS thresholds must lie in (0, 1]");
}

std::vector<double> build_pyramid(int height, int width, const PyramidConfig& config) {
  config.validate();
  std::vector<double> scales;
  double scale = 12.0 / config.min_size;
  double side = std::min(height, width) * scale;
  while (side >= 12.0) {
    scales.push_back(scale);
    scale *= config.factor;
    side *= config.factor;
  }
  return scales;
}

std::vector<BoundingBox> generate_proposals(const Plane<float>& score_map, const FeatureMap<float>& regression_map,
                                            double scale, double threshold) {
  std::vector<BoundingBox> boxes;
  const int h = static_cast<int>(score_map.rows());
  const int w = static_cast<int>(score_map.cols());
  for (int i = 0; i < h; ++i)
    for (int j = 0; j < w; ++j) {
      const double score = score_map(i, j);
      if (score < threshold) continue;
      BoundingBox b;
      b.x1 = 2.0 * j / scale;
      b.y1 = 2.0 * i / scale;
      b.x2 = (2.0 * j + 12.0) / scale;
      b.y2 = (2.0 * i + 12.0) / scale;
      b.score = score;
      for (int k = 0; k < 4; ++k) b.regression[k] = regression_map.data(k, i * w + j);
      boxes.push_back(b);
    }
  return boxes;
}

std::vector<size_t> nms_indices(std::span<const BoundingBox> boxes, double threshold, NmsMode mode) {
  std::vector<size_t> order(boxes.size());
  std::iota(order.begin(), order.end(), size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](size_t a, size_t b) { return boxes[a].score > boxes[b].score; });
  std::vector<size_t> kept;
  for (size_t idx : order) {
    const auto& cand = boxes[idx];
    const bool suppressed = std::any_of(kept.begin(), kept.end(), [&](size_t k) {
      const double o = mode == NmsMode::union_ ? iou(boxes[k], cand) : overlap_min(boxes[k], cand);
      return o > threshold;
    });
    if (!suppressed) kept.push_back(idx);
  }
  return kept;
}

std::vector<BoundingBox> nms(std::span<const BoundingBox> boxes, double threshold, NmsMode mode) {
  std::vector<BoundingBox> kept;
  for (size_t i : nms_indices(boxes, threshold, mode)) kept.push_back(boxes[i]);
  return kept;
}

BoundingBox apply_regression(const BoundingBox& box) {
  BoundingBox out = box;
  const double w = box.width(), h = box.height();
  out.x1 = box.x1 + box.regression[0] * w;
  out.y1 = box.y1 + box.regression[1] * h;
  out.x2 = box.x2 + box.regression[2] * w;
  out.y2 = box.y2 + box.regression[3] * h;
  out.regression = {};
  return out;
}

BoundingBox square(const BoundingBox& box) {
  BoundingBox out = box;
  const double side = std::max(box.width(), box.height());
  const double cx = 0.5 * (box.x1 + box.x2), cy = 0.5 * (box.y1 + box.y2);
  out.x1 = cx - 0.5 * side;
  out.y1 = cy - 0.5 * side;
  out.x2 = out.x1 + side;
  out.y2 = out.y1 + side;
  return out;
}

Detector::Detector(const WeightBundle& weights)
    : norm_(weights.input), pnet_(weights), rnet_(weights), onet_(weights) {}

PNetOutput<float> Detector::score_scale(const Image<float>& image, double scale) const {
  return pnet_.forward(to_network_input(resize(image, scale), norm_));
}

std::vector<BoundingBox> Detector::scale_proposals(const Image<float>& image, double scale,
                                                   const PyramidConfig& config) const {
  const auto out = score_scale(image, scale);
  const auto boxes = generate_proposals(out.face_prob, out.regression, scale, config.thresholds[0]);
  return nms(boxes, config.nms_intra_scale);
}

std::vector<BoundingBox> Detector::propose(const Image<float>& image, const PyramidConfig& config) const {
  std::vector<BoundingBox> all;
  for (double scale : build_pyramid(image.height(), image.width(), config)) {
    auto boxes = scale_proposals(image, scale, config);
    all.insert(all.end(), boxes.begin(), boxes.end());
  }
  auto kept = nms(all, config.nms_cross_stage);
  for (auto& b : kept) b = square(apply_regression(b));
  std::erase_if(kept, [](const BoundingBox& b) { return !b.valid(); });
  return kept;
}

std::vector<BoundingBox> Detector::rnet_refine(const Image<float>& image, std::span<const BoundingBox> boxes,
                                               double threshold, double nms_threshold) const {
  std::vector<BoundingBox> passed;
  for (const auto& box : boxes) {
    const auto out = rnet_.forward(to_network_input(crop_resize(image, box, 24), norm_));
    if (out.face_prob < threshold) continue;
    BoundingBox b = box;
    b.score = out.face_prob;
    for (int k = 0; k < 4; ++k) b.regression[k] = out.regression[k];
    passed.push_back(b);
  }
  auto kept = nms(passed, nms_threshold);
  for (auto& b : kept) b = square(apply_regression(b));
  std::erase_if(kept, [](const BoundingBox& b) { return !b.valid(); });
  return kept;
}

std::vector<Detection> Detector::onet_refine(const Image<float>& image, std::span<const BoundingBox> boxes,
                                             double threshold, double nms_threshold) const {
  std::vector<Detection> passed;
  for (const auto& box : boxes) {
    const auto out = onet_.forward(to_network_input(crop_resize(image, box, 48), norm_));
    if (out.face_prob < threshold) continue;
    Detection d;
    for (int k = 0; k < 5; ++k)
      d.landmarks[k] = {box.x1 + box.width() * out.landmarks[k], box.y1 + box.height() * out.landmarks[k + 5]};
    d.box = box;
    d.box.score = out.face_prob;
    for (int k = 0; k < 4; ++k) d.box.regression[k] = out.regression[k];
    d.box = apply_regression(d.box);
    if (d.box.valid()) passed.push_back(d);
  }

  std::vector<BoundingBox> boxes_only;
  for (const auto& d : passed) boxes_only.push_back(d.box);
  std::vector<Detection> kept;
  for (size_t i : nms_indices(boxes_only, nms_threshold, NmsMode::min)) kept.push_back(passed[i]);

  const double w = image.width(), h = image.height();
  for (auto& d : kept) {
    d.box.x1 = std::clamp(d.box.x1, 0.0, w);
    d.box.x2 = std::clamp(d.box.x2, 0.0, w);
    d.box.y1 = std::clamp(d.box.y1, 0.0, h);
    d.box.y2 = std::clamp(d.box.y2, 0.0, h);
    for (auto& p : d.landmarks) {
      p.x = std::clamp(p.x, 0.0, w);
      p.y = std::clamp(p.y, 0.0, h);
    }
  }
  std::erase_if(kept, [](const Detection& d) { return !d.box.valid(); });
  return kept;
}

std::vector<Detection> Detector::detect(const Image<float>& image, const PyramidConfig& config) const {
  config.validate();
  const auto proposals = propose(image, config);
  if (proposals.empty()) return {};
  const auto refined = rnet_refine(image, proposals, config.thresholds[1], config.nms_cross_stage);
  if (refined.empty()) return {};
  return onet_refine(image, refined, config.thresholds[2], config.nms_cross_stage);
}

}  // namespace facepatch
