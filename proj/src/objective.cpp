#include "facepatch/objective.hpp"

#include "facepatch/resample.hpp"

#include <cmath>

namespace facepatch {

template <class T>
AttackObjective<T>::AttackObjective(const WeightBundle& weights, const std::vector<TrainingSample>& samples,
                                    const PatchSet<T>& patch_shapes, const AttackScaleSet& scales,
                                    const LossWeights& loss)
    : norm_(weights.input), pnet_(weights), scales_(scales), loss_(loss) {
  if (samples.empty()) throw std::invalid_argument("attack objective: no training samples");
  scales_.validate();
  loss_.validate();
  for (const auto& s : samples)
    samples_.push_back({s.image.template cast<T>(), s.face_region,
                        Compositor<T>(s.image.height(), s.image.width(), patch_shapes, s.placement)});
}

template <class T>
ObjectiveValue<T> AttackObjective<T>::evaluate(const PatchSet<T>& patches, const std::vector<size_t>& batch,
                                               const std::vector<TransformParams>& params,
                                               bool with_gradient) const {
  if (batch.empty() || batch.size() != params.size())
    throw std::invalid_argument("attack objective: batch and transform lists must be non-empty and equal length");

  std::array<double, 3> clf{};
  ObjectiveValue<T> result;
  if (with_gradient)
    for (const auto& p : patches) result.gradient.push_back(Plane<T>::Zero(p.height(), p.width()));
  const T weight = T(1) / static_cast<T>(batch.size());

  for (size_t b = 0; b < batch.size(); ++b) {
    const Cached& sample = samples_.at(batch[b]);
    Augmentation<T> aug(sample.image.height(), sample.image.width(), params[b]);
    const Image<T> x = aug.forward(sample.compositor.apply(sample.image, patches));
    const BoundingBox face = aug.map_box(sample.face);

    Image<T> grad_x(x.height(), x.width());
    for (int k = 0; k < 3; ++k) {
      const double s = scales_.scales[k];
      const int h = scaled_size(x.height(), s), w = scaled_size(x.width(), s);
      if (h < 12 || w < 12) continue;
      const auto rows = resample_operator<T>(x.height(), h, 0.0, 1.0 / s, Edge::renormalize);
      const auto cols = resample_operator<T>(x.width(), w, 0.0, 1.0 / s, Edge::renormalize);
      PNetTape<T> tape;
      const auto out = pnet_.forward(to_network_input(resample(x, rows, cols), norm_), with_gradient ? &tape : nullptr);
      const Plane<T> mask = face_cell_mask<T>(static_cast<int>(out.face_prob.rows()),
                                              static_cast<int>(out.face_prob.cols()), s, face, loss_.face_mask_only);
      Plane<T> g;
      const T value = clf_loss(out.face_prob, mask, loss_.clf_norm, with_gradient ? &g : nullptr);
      clf[k] += static_cast<double>(value * weight);
      if (!with_gradient || value == T(0)) continue;
      g *= weight;
      grad_x += resample_adjoint(network_input_adjoint(pnet_.backward(tape, g), norm_), rows, cols);
    }
    if (!with_gradient) continue;
    const auto grads = sample.compositor.backward(aug.backward(grad_x));
    for (size_t p = 0; p < grads.size(); ++p) result.gradient[p] += grads[p];
  }

  double tv = 0.0, blk = 0.0;
  for (size_t p = 0; p < patches.size(); ++p) {
    Plane<T> g_tv, g_blk;
    tv += static_cast<double>(tv_loss(patches[p].pixels, with_gradient ? &g_tv : nullptr));
    blk += static_cast<double>(black_penalty(patches[p].pixels, with_gradient ? &g_blk : nullptr));
    if (with_gradient)
      result.gradient[p] += static_cast<T>(loss_.alpha) * g_tv + static_cast<T>(loss_.beta) * g_blk;
  }
  result.breakdown = total_loss(clf, tv, blk, loss_);
  return result;
}

template <class T>
ObjectiveValue<T> AttackObjective<T>::evaluate(const PatchSet<T>& patches, bool with_gradient) const {
  std::vector<size_t> batch(samples_.size());
  for (size_t i = 0; i < batch.size(); ++i) batch[i] = i;
  return evaluate(patches, batch, std::vector<TransformParams>(batch.size()), with_gradient);
}

template class AttackObjective<float>;
template class AttackObjective<double>;

}  // namespace facepatch
