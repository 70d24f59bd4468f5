#include "facepatch/resample.hpp"

#include <cmath>
#include <vector>

namespace facepatch {

template <class T>
SparseOp<T> resample_operator(int in_size, int out_size, double start, double step, Edge edge) {
  const double support = std::max(1.0, step);
  std::vector<Eigen::Triplet<T>> triplets;
  triplets.reserve(static_cast<size_t>(out_size) * (2 * static_cast<size_t>(std::ceil(support)) + 2));
  std::vector<std::pair<int, double>> taps;
  for (int o = 0; o < out_size; ++o) {
    const double pos = start + (o + 0.5) * step;
    const int lo = static_cast<int>(std::floor(pos - support - 0.5));
    const int hi = static_cast<int>(std::ceil(pos + support - 0.5));
    taps.clear();
    double total = 0.0;
    double inside = 0.0;
    for (int i = lo; i <= hi; ++i) {
      const double w = 1.0 - std::abs(i + 0.5 - pos) / support;
      if (w <= 0.0) continue;
      total += w;
      if (i < 0 || i >= in_size) continue;
      inside += w;
      taps.emplace_back(i, w);
    }
    const double norm = edge == Edge::zero ? total : inside;
    if (norm <= 0.0) continue;
    for (auto [i, w] : taps) triplets.emplace_back(o, i, static_cast<T>(w / norm));
  }
  SparseOp<T> op(out_size, in_size);
  op.setFromTriplets(triplets.begin(), triplets.end());
  return op;
}

int scaled_size(int size, double scale) {
  return static_cast<int>(std::ceil(size * scale - 1e-9));
}

template <class T>
Image<T> resample(const Image<T>& in, const SparseOp<T>& rows, const SparseOp<T>& cols) {
  Image<T> out;
  for (int c = 0; c < 3; ++c) {
    Plane<T> tmp = rows * in.channels[c];
    out.channels[c] = tmp * cols.transpose();
  }
  return out;
}

template <class T>
Image<T> resample_adjoint(const Image<T>& grad_out, const SparseOp<T>& rows, const SparseOp<T>& cols) {
  Image<T> out;
  for (int c = 0; c < 3; ++c) {
    Plane<T> tmp = rows.transpose() * grad_out.channels[c];
    out.channels[c] = tmp * cols;
  }
  return out;
}

template <class T>
Image<T> resize(const Image<T>& in, double scale) {
  const int h = scaled_size(in.height(), scale);
  const int w = scaled_size(in.width(), scale);
  const auto rows = resample_operator<T>(in.height(), h, 0.0, 1.0 / scale, Edge::renormalize);
  const auto cols = resample_operator<T>(in.width(), w, 0.0, 1.0 / scale, Edge::renormalize);
  return resample(in, rows, cols);
}

template <class T>
Image<T> crop_resize(const Image<T>& in, const BoundingBox& box, int size) {
  const auto rows = resample_operator<T>(in.height(), size, box.y1, box.height() / size, Edge::zero);
  const auto cols = resample_operator<T>(in.width(), size, box.x1, box.width() / size, Edge::zero);
  return resample(in, rows, cols);
}

#define FACEPATCH_INSTANTIATE(T)                                                                  \
  template SparseOp<T> resample_operator<T>(int, int, double, double, Edge);                      \
  template Image<T> resample<T>(const Image<T>&, const SparseOp<T>&, const SparseOp<T>&);         \
  template Image<T> resample_adjoint<T>(const Image<T>&, const SparseOp<T>&, const SparseOp<T>&); \
  template Image<T> resize<T>(const Image<T>&, double);                                           \
  template Image<T> crop_resize<T>(const Image<T>&, const BoundingBox&, int);

FACEPATCH_INSTANTIATE(float)
FACEPATCH_INSTANTIATE(double)

#undef FACEPATCH_INSTANTIATE

}  // namespace facepatch
