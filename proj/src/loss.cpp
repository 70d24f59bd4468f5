#include "facepatch/loss.hpp"

#include <cmath>

namespace facepatch {

std::string to_string(ClfNorm n) {
  return n == ClfNorm::l2 ? "l2" : "linf";
}

ClfNorm parse_clf_norm(const std::string& s) {
  if (s == "l2" || s == "L2") return ClfNorm::l2;
  if (s == "linf" || s == "Linf") return ClfNorm::linf;
  throw std::invalid_argument("unknown clf_norm '" + s + "' (expected l2 or linf)");
}

void LossWeights::validate() const {
  if (!(std::isfinite(alpha) && alpha >= 0.0)) throw std::invalid_argument("loss: alpha must be finite and >= 0");
  if (!(std::isfinite(beta) && beta >= 0.0)) throw std::invalid_argument("loss: beta must be finite and >= 0");
}

template <class T>
T clf_loss(const Plane<T>& scores, const Plane<T>& mask, ClfNorm norm, Plane<T>* grad) {
  if (grad) *grad = Plane<T>::Zero(scores.rows(), scores.cols());
  if (norm == ClfNorm::l2) {
    const T sq = (scores.array() * mask.array()).square().sum();
    if (!(sq > T(0))) return T(0);
    const T value = std::sqrt(sq);
    if (grad) *grad = (scores.array() * mask.array().square() / value).matrix();
    return value;
  }
  T best = T(0);
  Eigen::Index bi = -1, bj = -1;
  for (Eigen::Index i = 0; i < scores.rows(); ++i)
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (mask(i, j) == T(0)) continue;
      const T v = scores(i, j) * mask(i, j);
      if (bi < 0 || v > best) {
        best = v;
        bi = i;
        bj = j;
      }
    }
  if (bi < 0) return T(0);
  if (grad) (*grad)(bi, bj) = mask(bi, bj);
  return best;
}

template <class T>
T tv_loss(const Plane<T>& patch, Plane<T>* grad) {
  const Eigen::Index h = patch.rows(), w = patch.cols();
  const T eps = static_cast<T>(kTvEpsilon);
  const T floor = std::sqrt(eps);
  if (grad) *grad = Plane<T>::Zero(h, w);
  T total = T(0);
  for (Eigen::Index i = 0; i < h; ++i)
    for (Eigen::Index j = 0; j < w; ++j) {
      const T dy = i + 1 < h ? patch(i, j) - patch(i + 1, j) : T(0);
      const T dx = j + 1 < w ? patch(i, j) - patch(i, j + 1) : T(0);
      const T r = std::sqrt(dy * dy + dx * dx + eps);
      total += r - floor;
      if (!grad) continue;
      (*grad)(i, j) += (dy + dx) / r;
      if (i + 1 < h) (*grad)(i + 1, j) -= dy / r;
      if (j + 1 < w) (*grad)(i, j + 1) -= dx / r;
    }
  return total;
}

template <class T>
T black_penalty(const Plane<T>& patch, Plane<T>* grad) {
  if (grad) *grad = Plane<T>::Constant(patch.rows(), patch.cols(), T(-1));
  return (T(1) - patch.array()).sum();
}

LossBreakdown total_loss(const std::array<double, 3>& clf, double tv, double blk, const LossWeights& weights) {
  LossBreakdown b;
  b.clf = clf;
  b.tv = tv;
  b.blk = blk;
  b.total = clf[0] + clf[1] + clf[2] + weights.alpha * tv + weights.beta * blk;
  return b;
}

template <class T>
Plane<T> face_cell_mask(int rows, int cols, double scale, const BoundingBox& face, bool face_mask_only) {
  if (!face_mask_only) return Plane<T>::Ones(rows, cols);
  Plane<T> mask = Plane<T>::Zero(rows, cols);
  for (int i = 0; i < rows; ++i)
    for (int j = 0; j < cols; ++j) {
      const double x1 = 2.0 * j / scale, y1 = 2.0 * i / scale;
      const double x2 = (2.0 * j + 12.0) / scale, y2 = (2.0 * i + 12.0) / scale;
      if (x1 < face.x2 && x2 > face.x1 && y1 < face.y2 && y2 > face.y1) mask(i, j) = T(1);
    }
  return mask;
}

#define FACEPATCH_INSTANTIATE(T)                                                  \
  template T clf_loss<T>(const Plane<T>&, const Plane<T>&, ClfNorm, Plane<T>*);   \
  template T tv_loss<T>(const Plane<T>&, Plane<T>*);                              \
  template T black_penalty<T>(const Plane<T>&, Plane<T>*);                        \
  template Plane<T> face_cell_mask<T>(int, int, double, const BoundingBox&, bool);

FACEPATCH_INSTANTIATE(float)
FACEPATCH_INSTANTIATE(double)

#undef FACEPATCH_INSTANTIATE

}  // namespace facepatch
