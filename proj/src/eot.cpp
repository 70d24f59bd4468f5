#include "facepatch/eot.hpp"

#include "facepatch/resample.hpp"

#include <algorithm>
#include <cmath>

namespace facepatch {

TransformSpec TransformSpec::identity() {
  TransformSpec s;
  s.brightness = {0.0, 0.0};
  s.contrast = {1.0, 1.0};
  s.scale = {1.0, 1.0};
  s.noise_sigma = {0.0, 0.0};
  return s;
}

void TransformSpec::validate() const {
  auto check = [](const Range& r, const char* name) {
    if (!(std::isfinite(r.lo) && std::isfinite(r.hi) && r.lo <= r.hi))
      throw std::invalid_argument(std::string("transform: ") + name + " range must satisfy lo <= hi");
  };
  check(brightness, "brightness");
  check(contrast, "contrast");
  check(scale, "scale");
  check(noise_sigma, "noise_sigma");
  if (brightness.lo < -1.0 || brightness.hi > 1.0) throw std::invalid_argument("transform: brightness outside [-1, 1]");
  if (contrast.lo < 0.0) throw std::invalid_argument("transform: contrast gain must be non-negative");
  if (!(scale.lo > 0.0)) throw std::invalid_argument("transform: scale must be positive");
  if (noise_sigma.lo < 0.0) throw std::invalid_argument("transform: noise sigma must be non-negative");
}

bool TransformParams::is_identity() const {
  return brightness == 0.0 && contrast == 1.0 && scale == 1.0 && noise_sigma == 0.0;
}

TransformParams sample_transform(const TransformSpec& spec, Rng& rng) {
  auto uniform = [&rng](const Range& r) { return std::uniform_real_distribution<double>(r.lo, r.hi)(rng); };
  TransformParams p;
  p.brightness = uniform(spec.brightness);
  p.contrast = uniform(spec.contrast);
  p.scale = uniform(spec.scale);
  p.noise_sigma = uniform(spec.noise_sigma);
  p.noise_seed = rng();
  return p;
}

template <class T>
Augmentation<T>::Augmentation(int height, int width, const TransformParams& params) : params_(params) {
  if (params.scale != 1.0) {
    resized_ = true;
    rows_ = resample_operator<T>(height, scaled_size(height, params.scale), 0.0, 1.0 / params.scale, Edge::renormalize);
    cols_ = resample_operator<T>(width, scaled_size(width, params.scale), 0.0, 1.0 / params.scale, Edge::renormalize);
  }
}

template <class T>
Image<T> Augmentation<T>::forward(const Image<T>& composited) {
  const T gain = static_cast<T>(params_.contrast);
  const T offset = static_cast<T>(0.5 * (1.0 - params_.contrast) + params_.brightness);
  Image<T> x = composited;
  for (auto& c : x.channels) c = (c.array() * gain + offset).matrix();
  if (resized_) x = resample(x, rows_, cols_);
  if (params_.noise_sigma > 0.0) {
    Rng noise_rng(params_.noise_seed);
    std::normal_distribution<double> normal(0.0, params_.noise_sigma);
    for (auto& c : x.channels)
      for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] += static_cast<T>(normal(noise_rng));
  }
  pre_clamp_ = x;
  for (auto& c : x.channels) c = c.cwiseMax(T(0)).cwiseMin(T(1));
  return x;
}

template <class T>
Image<T> Augmentation<T>::backward(const Image<T>& grad_out) const {
  Image<T> g = grad_out;
  for (int c = 0; c < 3; ++c) {
    const auto& pre = pre_clamp_.channels[c];
    g.channels[c] = (pre.array() >= T(0) && pre.array() <= T(1)).select(g.channels[c], T(0));
  }
  if (resized_) g = resample_adjoint(g, rows_, cols_);
  const T gain = static_cast<T>(params_.contrast);
  for (auto& c : g.channels) c *= gain;
  return g;
}

template <class T>
BoundingBox Augmentation<T>::map_box(const BoundingBox& box) const {
  BoundingBox b = box;
  b.x1 *= params_.scale;
  b.y1 *= params_.scale;
  b.x2 *= params_.scale;
  b.y2 *= params_.scale;
  return b;
}

template class Augmentation<float>;
template class Augmentation<double>;

AugmentedBatch augment_batch(const std::vector<TrainingSample>& samples, const PatchSet<float>& patches,
                             const TransformSpec& spec, Rng& rng) {
  if (samples.empty()) throw std::invalid_argument("augment_batch: no samples");
  spec.validate();
  AugmentedBatch batch;
  for (size_t i = 0; i < samples.size(); ++i) batch.params.push_back(sample_transform(spec, rng));
  for (size_t i = 0; i < samples.size(); ++i) {
    const auto& s = samples[i];
    const Image<float> patched = apply_patches(s.image, patches, s.placement);
    Augmentation<float> aug(s.image.height(), s.image.width(), batch.params[i]);
    batch.images.push_back(aug.forward(patched));
    batch.face_regions.push_back(aug.map_box(s.face_region));
  }
  return batch;
}

}  // namespace facepatch
