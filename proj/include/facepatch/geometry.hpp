#pragma once

#include "facepatch/types.hpp"

#include <string>
#include <vector>

namespace facepatch {

struct GeometryError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Named grayscale patch, pixels in [0, 1]. Replicated to all three channels
/// when composited.
template <class T>
struct BasicPatch {
  std::string name;
  Plane<T> pixels;

  int height() const { return static_cast<int>(pixels.rows()); }
  int width() const { return static_cast<int>(pixels.cols()); }

  template <class U>
  BasicPatch<U> cast() const {
    return {name, pixels.template cast<U>()};
  }
};

using Patch = BasicPatch<float>;

template <class T>
using PatchSet = std::vector<BasicPatch<T>>;

/// Throws GeometryError unless the patch is at least 2x2 with pixels in [0, 1].
void validate_patch(const Patch& patch);

/// Corners ordered top-left, top-right, bottom-right, bottom-left.
struct Quad {
  std::array<Point, 4> corners{};

  static Quad rectangle(double x0, double y0, double x1, double y1);
  double area() const;
  /// Non-self-intersecting with positive area.
  bool is_simple() const;
};

/// 3x3 projective map with the bottom-right element fixed to 1.
struct Homography {
  Eigen::Matrix3d matrix = Eigen::Matrix3d::Identity();

  Point apply(const Point& p) const;
  Homography inverse() const;
};

/// Maps the four corners of `src` onto those of `dst` by solving the 8x8
/// linear system of the four correspondences. Throws GeometryError if three
/// corners of either quad are collinear.
Homography compute_homography(const Quad& src, const Quad& dst);

struct PlacementEntry {
  std::string patch;
  std::array<double, 4> src{};  // x0, y0, x1, y1 in patch pixels
  Quad dst;
};

/// Where patch regions land on one image. A curved surface is covered by a
/// grid of entries whose source rectangles tile the patch.
struct PlacementMap {
  std::vector<PlacementEntry> entries;
};

template <class T>
struct WarpResult {
  Plane<T> layer;  // premultiplied: layer <= mask wherever the patch is in [0, 1]
  Plane<T> mask;
};

/// Inverse-mapping warp as a sparse operator: row (y * width + x) holds the
/// bilinear weights of patch pixels sampled at the preimage of canvas pixel
/// centre (x + 0.5, y + 0.5). Only patch pixels inside `src` contribute, so
/// row sums give the anti-aliased coverage mask.
template <class T>
SparseOp<T> warp_operator(int patch_height, int patch_width, const std::array<double, 4>& src, const Homography& h,
                          int canvas_height, int canvas_width);

/// `h` maps patch coordinates to canvas coordinates.
template <class T>
WarpResult<T> warp_patch(const Plane<T>& patch, const Homography& h, int canvas_height, int canvas_width);

/// Precomputed compositing of a patch set onto one image geometry.
///
/// Entries are grouped by patch (in order of first appearance). Within a
/// group the warped layers and coverages add up, and any pixel covered more
/// than once is renormalized, so grid tiles join without seams. Groups are
/// then composited over the image in order:
///   out = out * (1 - mask_g) + layer_g.
template <class T>
class Compositor {
 public:
  Compositor() = default;
  Compositor(int height, int width, const PatchSet<T>& patches, const PlacementMap& placement);

  Image<T> apply(const Image<T>& image, const PatchSet<T>& patches) const;

  /// Gradients with respect to every patch (same order and shapes as the
  /// patch set) given the gradient of the composited image.
  std::vector<Plane<T>> backward(const Image<T>& grad_out) const;

  /// Combined coverage of all groups, for inspection and tests.
  Plane<T> coverage() const;

 private:
  struct Group {
    size_t patch_index = 0;
    SparseOp<T> op;       // (height * width) x (patch pixels)
    Vector<T> keep;       // 1 - mask, per canvas pixel
  };
  int height_ = 0;
  int width_ = 0;
  std::vector<std::pair<int, int>> patch_shapes_;
  std::vector<Group> groups_;
};

/// out = image composited with every placement entry. Throws GeometryError
/// when an entry names a patch that is not in `patches`.
template <class T>
Image<T> apply_patches(const Image<T>& image, const PatchSet<T>& patches, const PlacementMap& placement);

}  // namespace facepatch
