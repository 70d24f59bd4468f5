#pragma once

#include "facepatch/types.hpp"

#include <array>
#include <string>

namespace facepatch {

enum class ClfNorm { l2, linf };

std::string to_string(ClfNorm n);
ClfNorm parse_clf_norm(const std::string& s);

struct LossWeights {
  double alpha = 1e-3;  // total variation
  double beta = 1e-2;   // black penalty
  ClfNorm clf_norm = ClfNorm::l2;
  bool face_mask_only = true;

  void validate() const;
};

struct LossBreakdown {
  std::array<double, 3> clf{};
  double tv = 0.0;
  double blk = 0.0;
  double total = 0.0;
};

/// Smoothing inside the TV square root; keeps the gradient finite on flat regions.
inline constexpr double kTvEpsilon = 1e-8;

/// Face-classification loss of one score map restricted to `mask` (1 = cell
/// counts). L2: sqrt of the sum of squared masked scores. Linf: the largest
/// masked score. An empty mask contributes zero. When `grad` is non-null it
/// receives d loss / d score.
template <class T>
T clf_loss(const Plane<T>& scores, const Plane<T>& mask, ClfNorm norm, Plane<T>* grad = nullptr);

/// Isotropic total variation: sum over pixels of
///   sqrt(dy^2 + dx^2 + eps) - sqrt(eps)
/// with dy = p[i,j] - p[i+1,j] and dx = p[i,j] - p[i,j+1]; differences that
/// would leave the patch are omitted. Subtracting sqrt(eps) makes a constant
/// patch cost exactly zero.
template <class T>
T tv_loss(const Plane<T>& patch, Plane<T>* grad = nullptr);

/// Sum of (1 - p) over the patch.
template <class T>
T black_penalty(const Plane<T>& patch, Plane<T>* grad = nullptr);

/// total = sum(clf) + alpha * tv + beta * blk.
LossBreakdown total_loss(const std::array<double, 3>& clf, double tv, double blk, const LossWeights& weights);

/// Mask over P-Net cells at `scale` whose 12x12 receptive window (in source
/// image coordinates) intersects `face`. All ones when face_mask_only is false.
template <class T>
Plane<T> face_cell_mask(int rows, int cols, double scale, const BoundingBox& face, bool face_mask_only);

}  // namespace facepatch
