#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <array>
#include <stdexcept>
#include <string>

namespace facepatch {

template <class T>
using Plane = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

template <class T>
using Vector = Eigen::Matrix<T, Eigen::Dynamic, 1>;

/// Row-major sparse linear operator. Used for resampling and warping, where
/// the adjoint (transpose) carries gradients back to the source.
template <class T>
using SparseOp = Eigen::SparseMatrix<T, Eigen::RowMajor>;

/// Three-channel RGB image. Values are intensities in [0, 1]; the mapping to
/// the networks' input range lives with the weights (see NetworkInput).
template <class T>
struct Image {
  std::array<Plane<T>, 3> channels;

  Image() = default;
  Image(int height, int width) {
    for (auto& c : channels) c = Plane<T>::Zero(height, width);
  }

  static Image constant(int height, int width, T value) {
    Image img;
    for (auto& c : img.channels) c = Plane<T>::Constant(height, width, value);
    return img;
  }

  int height() const { return static_cast<int>(channels[0].rows()); }
  int width() const { return static_cast<int>(channels[0].cols()); }
  bool empty() const { return channels[0].size() == 0; }

  template <class U>
  Image<U> cast() const {
    Image<U> out;
    for (int c = 0; c < 3; ++c) out.channels[c] = channels[c].template cast<U>();
    return out;
  }

  Image& operator+=(const Image& other) {
    for (int c = 0; c < 3; ++c) channels[c] += other.channels[c];
    return *this;
  }
};

struct Point {
  double x = 0.0;
  double y = 0.0;
};

/// Axis-aligned box in continuous image coordinates (pixel (r, c) covers
/// [c, c+1) x [r, r+1)).
struct BoundingBox {
  double x1 = 0.0;
  double y1 = 0.0;
  double x2 = 0.0;
  double y2 = 0.0;
  double score = 0.0;
  std::array<double, 4> regression{};  // offsets relative to width/height

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
};

struct Detection {
  BoundingBox box;
  std::array<Point, 5> landmarks{};
};

double iou(const BoundingBox& a, const BoundingBox& b);

/// Intersection over the smaller area, used by the final-stage NMS.
double overlap_min(const BoundingBox& a, const BoundingBox& b);

struct PyramidConfig {
  int min_size = 21;
  double factor = 0.709;
  std::array<double, 3> thresholds{0.6, 0.7, 0.7};
  double nms_intra_scale = 0.5;
  double nms_cross_stage = 0.7;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

}  // namespace facepatch
